import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypermf.errors import ParameterError
from hypermf.models import (
    EXP_LINEAR,
    LINEAR,
    NeighborhoodVector,
    StateLayout,
    affine_model,
    glauber_model,
    load_affine_model,
    majority_model,
    make_model,
    sis_model,
    voter_model,
)

ALL_BUILTINS = [
    sis_model([2.0], 1.0),
    sis_model([1.0, 3.0], 0.5),
    glauber_model([1.0], [-1.0], 0.7),
    glauber_model([0.5, 0.2], [-0.3, 0.1], 1.1),
    voter_model(2.0),
    majority_model(1),
    majority_model(3),
]


def phi_from(layout, entries):
    v = np.zeros(layout.total_dim)
    for (m, tup), val in entries.items():
        v[layout.col(m, tup)] = val
    return v


class TestLayout:
    def test_offsets_and_dims(self):
        lay = StateLayout(2, 3)
        assert lay.offsets == (0, 2, 6)
        assert lay.total_dim == 2 + 4 + 8

    def test_col_row_major(self):
        lay = StateLayout(2, 2)
        assert lay.col(2, (0, 0)) == 2
        assert lay.col(2, (0, 1)) == 3
        assert lay.col(2, (1, 0)) == 4
        assert lay.col(2, (1, 1)) == 5

    def test_neighborhood_vector_access(self):
        lay = StateLayout(2, 2)
        nv = NeighborhoodVector.from_blocks(
            lay, [np.array([0.2, 0.8]), np.array([0.1, 0.2, 0.3, 0.4])]
        )
        assert nv.value(1, (1,)) == 0.8
        assert nv.value(2, (1, 0)) == 0.3
        assert nv.order_sum(2) == pytest.approx(1.0)


class TestSis:
    def test_rates_at_half_infected(self):
        m = sis_model([2.0], 1.0)
        phi = phi_from(m.layout, {(1, (1,)): 0.5})
        assert m.rate(1, 0, phi) == pytest.approx(1.0)
        assert m.rate(0, 1, phi) == pytest.approx(1.0)

    def test_no_infected_neighbors(self):
        m = sis_model([2.0], 1.0)
        assert m.rate(1, 0, np.zeros(2)) == 0.0

    def test_two_orders(self):
        m = sis_model([1.0, 3.0], 1.0)
        phi = phi_from(m.layout, {(1, (1,)): 0.2, (2, (1, 1)): 0.1})
        assert m.rate(1, 0, phi) == pytest.approx(0.5)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            sis_model([-1.0], 1.0)
        with pytest.raises(ParameterError):
            sis_model([1.0], -2.0)


class TestGlauber:
    def test_zero_field_rates_one(self):
        m = glauber_model([1.0], [-1.0], 0.7)
        phi = phi_from(m.layout, {(1, (1,)): 0.5, (1, (0,)): 0.5})
        assert m.rate(1, 0, phi) == pytest.approx(1.0)
        assert m.rate(0, 1, phi) == pytest.approx(1.0)

    def test_beta_zero_constant(self, rng):
        m = glauber_model([1.0], [-1.0], 0.0)
        for _ in range(5):
            phi = rng.random(2)
            assert m.rate(1, 0, phi) == pytest.approx(1.0)

    def test_field_sign(self):
        # all-plus neighborhood raises the flip-to-plus rate
        m = glauber_model([1.0], [-1.0], 2.0)
        plus = phi_from(m.layout, {(1, (1,)): 1.0})
        minus = phi_from(m.layout, {(1, (0,)): 1.0})
        assert m.rate(1, 0, plus) == pytest.approx(math.exp(2.0))
        assert m.rate(1, 0, minus) == pytest.approx(math.exp(-2.0))

    def test_not_affine(self):
        assert glauber_model([1.0], [-1.0], 1.0).affine_form is None


class TestVoter:
    def test_unanimous_neighbors(self):
        m = voter_model(1.5)
        phi = phi_from(m.layout, {(1, (0,)): 1.0})
        assert m.rate(0, 1, phi) == pytest.approx(1.5)
        assert m.rate(1, 0, phi) == 0.0

    def test_split_neighborhood(self):
        m = voter_model(2.0)
        phi = phi_from(m.layout, {(1, (0,)): 0.5, (1, (1,)): 0.5})
        assert m.rate(0, 1, phi) == pytest.approx(1.0)
        assert m.rate(1, 0, phi) == pytest.approx(1.0)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            voter_model(-0.1)


class TestMajority:
    def test_tie_goes_to_one(self):
        m = majority_model(2)
        lay = m.layout
        # a (0,1) pair is a tie: counts toward switching to opinion 1
        phi = phi_from(lay, {(2, (0, 1)): 0.4})
        assert m.rate(1, 0, phi) == pytest.approx(0.4)
        assert m.rate(0, 1, phi) == 0.0

    def test_all_zero_neighbors_order_one(self):
        m = majority_model(1)
        phi = phi_from(m.layout, {(1, (0,)): 0.9})
        assert m.rate(0, 1, phi) == pytest.approx(0.9)
        assert m.rate(1, 0, phi) == 0.0

    def test_majority_of_three(self):
        m = majority_model(3)
        phi = phi_from(m.layout, {(3, (1, 1, 0)): 0.7})
        assert m.rate(1, 0, phi) == pytest.approx(0.7)
        assert m.rate(0, 1, phi) == 0.0

    def test_alpha_scaling(self):
        m = majority_model(2, alpha=[2.0, 0.5])
        phi = phi_from(m.layout, {(1, (0,)): 1.0, (2, (0, 0)): 1.0})
        assert m.rate(0, 1, phi) == pytest.approx(2.0 * 1.0 + 0.5 * 1.0)


class TestAffine:
    def test_reproduces_sis(self, rng):
        sis = sis_model([1.0, 3.0], 0.5)
        aff = affine_model(
            2,
            q0={(0, 1): 0.5},
            q1={(1, 0): {(1, (1,)): 1.0, (2, (1, 1)): 3.0}},
            max_order=2,
        )
        for _ in range(100):
            phi = rng.random(sis.layout.total_dim)
            for s_to, s_from in ((1, 0), (0, 1)):
                assert aff.rate(s_to, s_from, phi) == sis.rate(s_to, s_from, phi)

    def test_affine_form_matches_evaluator(self, rng):
        m = sis_model([1.0, 3.0], 0.5)
        form = m.affine_form
        lay = m.layout
        for _ in range(50):
            phi = rng.random(lay.total_dim)
            for (s_to, s_from), (q0, terms) in form.items():
                direct = q0 + sum(
                    v * phi[lay.col(mm, tup)] for (mm, tup), v in terms.items()
                )
                assert direct == pytest.approx(
                    m.rate(s_to, s_from, phi), abs=1e-12
                )

    def test_constant_only(self):
        m = affine_model(3, q0={(1, 0): 2.0, (2, 1): 0.7}, q1={})
        assert m.rate(1, 0, np.zeros(3)) == 2.0
        assert m.rate(2, 1, np.ones(3)) == 0.7
        assert m.rate(0, 2, np.ones(3)) == 0.0

    def test_single_linear_term(self):
        m = affine_model(2, q0={}, q1={(1, 0): {(1, (0,)): 4.0}})
        phi = np.array([0.25, 0.0])
        assert m.rate(1, 0, phi) == pytest.approx(1.0)

    def test_negative_coefficients_rejected(self):
        with pytest.raises(ParameterError):
            affine_model(2, q0={(1, 0): -1.0}, q1={})
        with pytest.raises(ParameterError):
            affine_model(2, q0={}, q1={(1, 0): {(1, (0,)): -2.0}})


def random_phi(rng, layout, delta):
    """Random componentwise-nonnegative phi with order blocks summing to delta."""
    v = np.empty(layout.total_dim)
    for m in range(1, layout.max_order + 1):
        block = rng.random(layout.n_states**m)
        block *= delta / block.sum()
        off = layout.offsets[m - 1]
        v[off : off + len(block)] = block
    return v


class TestProperties:
    @pytest.mark.parametrize("model", ALL_BUILTINS, ids=lambda m: m.name + str(m.max_order))
    def test_rates_nonnegative(self, model, rng):
        lay = model.layout
        for _ in range(1000):
            phi = random_phi(rng, lay, delta=float(rng.random() * 2.0))
            for ch in model.channels:
                assert model.rate(ch.s_to, ch.s_from, phi) >= 0.0

    @pytest.mark.parametrize("model", ALL_BUILTINS, ids=lambda m: m.name + str(m.max_order))
    def test_rate_upper_bound_certified(self, model, rng):
        delta = np.array([1.3] * model.max_order)
        bound = model.rate_upper_bound(delta)
        for _ in range(300):
            phi = random_phi(rng, model.layout, delta=1.3)
            for k, ch in enumerate(model.channels):
                assert model.rate(ch.s_to, ch.s_from, phi) <= bound[k] + 1e-12

    def test_per_vertex_bounds_shape(self):
        m = sis_model([2.0], 1.0)
        delta = np.array([[0.5, 1.0, 2.0]])
        b = m.rate_upper_bound(delta)
        assert b.shape == (3, 2)
        assert np.allclose(b[:, 0], 2.0 * delta[0])
        assert np.allclose(b[:, 1], 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 10**6))
    def test_batch_matches_scalar(self, b1, g, seed):
        model = sis_model([b1], g)
        rng = np.random.default_rng(seed)
        phi = rng.random((7, 2))
        Q = model.batch_rates(phi)
        for i in range(7):
            for ch in model.channels:
                assert Q[i, ch.s_to, ch.s_from] == pytest.approx(
                    model.rate(ch.s_to, ch.s_from, phi[i]), abs=1e-14
                )


class TestModelFile:
    def test_load_affine(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text(
            "# SIS-equivalent coefficients\n"
            "1 0 1.0\n"
            "0 1 0.0 1:1:2.0 2:1,1:3.0\n"
        )
        m = load_affine_model(path, 2, max_order=2)
        phi = np.zeros(m.layout.total_dim)
        phi[m.layout.col(1, (1,))] = 0.25
        phi[m.layout.col(2, (1, 1))] = 0.5
        assert m.rate(1, 0, phi) == pytest.approx(2.0 * 0.25 + 3.0 * 0.5)
        assert m.rate(0, 1, phi) == pytest.approx(1.0)

    def test_make_model_by_name(self):
        m = make_model("sis", dict(beta=[2.0], gamma=1.0))
        assert m.name == "sis"
        m = make_model("voter", {"lambda": 1.0})
        assert m.name == "voter"
        with pytest.raises(ParameterError):
            make_model("unknown", {})
