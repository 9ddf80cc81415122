"""Adaptive classical Runge-Kutta integration with dense output.

Fourth-order steps with a step-doubling error estimate: each step is
taken once at size h and twice at h/2, the scaled difference (divided by
2^4 - 1) drives acceptance and the next step size.  Accepted knots store
(value, derivative) pairs, so solutions can be evaluated anywhere by
cubic Hermite interpolation; the interpolant's derivative is exposed as
well because downstream consumers interpolate derived quantities.

A caller-supplied ``guard`` predicate can reject an otherwise accepted
step (used to keep occupancy vectors on the probability simplex); a
rejected step is retried at half size until the minimum step is reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError

__all__ = ["DenseSolution", "integrate"]


@dataclass(eq=False)
class DenseSolution:
    """Piecewise cubic Hermite interpolant through (t, y, y') knots."""

    ts: np.ndarray      # (K+1,)
    ys: np.ndarray      # (K+1, dim)
    fs: np.ndarray      # (K+1, dim)

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0, len(self.ts) - 2)
        t0 = self.ts[idx]
        h = self.ts[idx + 1] - t0
        theta = (t - t0) / h
        return idx, h, theta

    def __call__(self, t):
        """Evaluate the solution; scalar t -> (dim,), array t -> (T, dim)."""
        scalar = np.isscalar(t) or np.ndim(t) == 0
        idx, h, theta = self._locate(t)
        th2 = theta * theta
        th3 = th2 * theta
        h00 = 2 * th3 - 3 * th2 + 1
        h10 = th3 - 2 * th2 + theta
        h01 = -2 * th3 + 3 * th2
        h11 = th3 - th2
        if scalar:
            y = (
                h00 * self.ys[idx]
                + h10 * h * self.fs[idx]
                + h01 * self.ys[idx + 1]
                + h11 * h * self.fs[idx + 1]
            )
            return y
        hh = h[:, None]
        return (
            h00[:, None] * self.ys[idx]
            + h10[:, None] * hh * self.fs[idx]
            + h01[:, None] * self.ys[idx + 1]
            + h11[:, None] * hh * self.fs[idx + 1]
        )

    def derivative(self, t):
        """Derivative of the interpolant at t."""
        scalar = np.isscalar(t) or np.ndim(t) == 0
        idx, h, theta = self._locate(t)
        th2 = theta * theta
        d00 = (6 * th2 - 6 * theta) / h
        d10 = 3 * th2 - 4 * theta + 1
        d01 = (-6 * th2 + 6 * theta) / h
        d11 = 3 * th2 - 2 * theta
        if scalar:
            return (
                d00 * self.ys[idx]
                + d10 * self.fs[idx]
                + d01 * self.ys[idx + 1]
                + d11 * self.fs[idx + 1]
            )
        return (
            d00[:, None] * self.ys[idx]
            + d10[:, None] * self.fs[idx]
            + d01[:, None] * self.ys[idx + 1]
            + d11[:, None] * self.fs[idx + 1]
        )


def _rk4(f, t, y, h, k1):
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    f,
    t0: float,
    y0: np.ndarray,
    t_end: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_step: float | None = None,
    guard=None,
) -> DenseSolution:
    """Integrate dy/dt = f(t, y) from t0 to t_end.

    ``guard(y)`` may return False to force rejection of a step.  Raises
    :class:`IntegrationError` when the step size underflows (below
    1e-12 * (t_end - t0)).
    """
    span = t_end - t0
    if span <= 0:
        raise IntegrationError("t_end must exceed t0")
    y = np.asarray(y0, dtype=float).copy()
    t = t0
    min_step = 1e-12 * span
    fy = np.asarray(f(t, y), dtype=float)
    fnorm = float(np.max(np.abs(fy)))
    h = min(span, 0.1 / max(fnorm, 1e-3))
    if max_step is not None:
        h = min(h, max_step)

    ts, ys, fs = [t], [y.copy()], [fy.copy()]
    while t < t_end:
        h = min(h, t_end - t)
        if h < min_step:
            raise IntegrationError(f"step size underflow at t={t!r}")
        y_big = _rk4(f, t, y, h, fy)
        y_mid = _rk4(f, t, y, 0.5 * h, fy)
        f_mid = np.asarray(f(t + 0.5 * h, y_mid), dtype=float)
        y_two = _rk4(f, t + 0.5 * h, y_mid, 0.5 * h, f_mid)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_two))
        err = float(np.max(np.abs(y_two - y_big) / scale)) / 15.0
        if err <= 1.0 and (guard is None or guard(y_two)):
            t = t + h
            y = y_two
            fy = np.asarray(f(t, y), dtype=float)
            ts.append(t)
            ys.append(y.copy())
            fs.append(fy.copy())
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = 0.5 if err <= 1.0 else max(0.1, min(0.5, 0.9 * err ** -0.2))
        h *= factor
        if max_step is not None:
            h = min(h, max_step)
    return DenseSolution(np.array(ts), np.array(ys), np.array(fs))
