import numpy as np
import pytest

from hypermf.errors import IntegrationError
from hypermf.integrate import integrate


def test_exponential_decay():
    sol = integrate(lambda t, y: -y, 0.0, np.array([1.0]), 2.0)
    assert sol(2.0)[0] == pytest.approx(np.exp(-2.0), abs=1e-7)


def test_dense_output_between_knots():
    sol = integrate(lambda t, y: -y, 0.0, np.array([1.0]), 3.0)
    ts = np.linspace(0.0, 3.0, 101)
    vals = sol(ts)[:, 0]
    assert np.max(np.abs(vals - np.exp(-ts))) < 5e-7


def test_dense_derivative():
    sol = integrate(lambda t, y: -y, 0.0, np.array([1.0]), 2.0)
    ts = np.linspace(0.1, 1.9, 7)
    ders = sol.derivative(ts)[:, 0]
    assert np.allclose(ders, -np.exp(-ts), atol=1e-6)


def test_nonlinear_system_accuracy():
    # logistic growth with known closed form
    def rhs(t, y):
        return y * (1.0 - y)

    sol = integrate(rhs, 0.0, np.array([0.1]), 5.0, rtol=1e-10, atol=1e-12)
    exact = 1.0 / (1.0 + 9.0 * np.exp(-5.0))
    assert sol(5.0)[0] == pytest.approx(exact, abs=1e-9)


def test_fixed_step_order():
    # with the tolerance loose the max_step binds; halving it should cut the
    # endpoint error by at least 2^3 for a 4th-order method
    def rhs(t, y):
        return np.array([y[0] * (1.0 - y[0])])

    exact = 1.0 / (1.0 + 9.0 * np.exp(-4.0))
    errs = []
    for hmax in (0.5, 0.25):
        sol = integrate(
            rhs, 0.0, np.array([0.1]), 4.0, rtol=1e-2, atol=1e-2, max_step=hmax
        )
        assert np.allclose(np.diff(sol.ts), hmax)
        errs.append(abs(sol(4.0)[0] - exact))
    assert errs[0] / errs[1] >= 8.0


def test_guard_rejects_steps():
    calls = []

    def guard(y):
        calls.append(1)
        return bool(np.all(y >= -1e-12))

    sol = integrate(lambda t, y: -y, 0.0, np.array([1.0]), 1.0, guard=guard)
    assert sol(1.0)[0] == pytest.approx(np.exp(-1.0), abs=1e-7)
    assert calls


def test_impossible_guard_raises():
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: -y, 0.0, np.array([1.0]), 1.0, guard=lambda y: False)


def test_bad_horizon():
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: -y, 0.0, np.array([1.0]), 0.0)


def test_knots_carry_derivatives():
    sol = integrate(lambda t, y: -y, 0.0, np.array([1.0]), 1.0)
    assert np.allclose(sol.fs, -sol.ys, atol=1e-12)
