"""Local transition-rate models.

A model assigns to every ordered state pair (s_to, s_from) a rate that
depends on the vertex's weighted neighborhood vector.  The neighborhood
of a vertex stacks, for every order m, one value per state tuple
(s_1..s_m); the per-order blocks are concatenated into a flat vector of
dimension sum_m |S|^m (see :class:`StateLayout`).

All built-in models have rates of one of two shapes,

    linear:      q = q0 + sum_k v_k * phi[col_k]
    exp-linear:  q = q0 * exp(sum_k v_k * phi[col_k])

which keeps a single evaluation path for the ODE solvers (vectorized
over vertices) and the event-driven simulator (scalar, JIT-compiled).
Rates are per ordering of the tail, matching the hypergraph storage.

Rate matrix convention: ``q[s_to, s_from]`` is the rate of an
s_from -> s_to transition, so occupancy vectors evolve as dz/dt = Q z
with the diagonal derived as q[s, s] = -sum_{s' != s} q[s', s].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelEvaluationError, ParameterError

__all__ = [
    "StateLayout",
    "Channel",
    "RateModel",
    "NeighborhoodVector",
    "sis_model",
    "glauber_model",
    "voter_model",
    "majority_model",
    "affine_model",
    "load_affine_model",
    "make_model",
    "LINEAR",
    "EXP_LINEAR",
]

LINEAR = 0
EXP_LINEAR = 1


@dataclass(frozen=True)
class StateLayout:
    """Flat indexing of stacked per-order neighborhood blocks."""

    n_states: int
    max_order: int

    @property
    def offsets(self) -> tuple[int, ...]:
        off, acc = [], 0
        for m in range(1, self.max_order + 1):
            off.append(acc)
            acc += self.n_states**m
        return tuple(off)

    @property
    def total_dim(self) -> int:
        return sum(self.n_states**m for m in range(1, self.max_order + 1))

    def col(self, m: int, states: Sequence[int]) -> int:
        """Flat column of the order-m block entry for tuple (s_1..s_m)."""
        if len(states) != m:
            raise ParameterError(f"state tuple {states} does not have length {m}")
        idx = 0
        for s in states:
            if not 0 <= s < self.n_states:
                raise ParameterError(f"state index {s} out of range")
            idx = idx * self.n_states + s
        return self.offsets[m - 1] + idx

    def pack(self, per_order: Sequence[np.ndarray]) -> np.ndarray:
        """Concatenate per-order (n, |S|^m) blocks into an (n, D) matrix."""
        return np.concatenate([np.atleast_2d(b) for b in per_order], axis=1)


class NeighborhoodVector:
    """One vertex's stacked neighborhood values with tuple-based access."""

    def __init__(self, layout: StateLayout, flat: np.ndarray):
        if flat.shape != (layout.total_dim,):
            raise ParameterError("flat vector does not match layout")
        self.layout = layout
        self.flat = np.asarray(flat, dtype=float)

    @classmethod
    def from_blocks(cls, layout: StateLayout, blocks: Sequence[np.ndarray]):
        return cls(layout, np.concatenate([np.ravel(b) for b in blocks]))

    def value(self, m: int, states: Sequence[int]) -> float:
        return float(self.flat[self.layout.col(m, states)])

    def order_sum(self, m: int) -> float:
        """Total order-m weight; equals delta_m(i) for a full state assignment."""
        off = self.layout.offsets[m - 1]
        return float(self.flat[off : off + self.layout.n_states**m].sum())


@dataclass(frozen=True)
class Channel:
    """One off-diagonal rate entry with its coefficient structure."""

    s_to: int
    s_from: int
    kind: int                      # LINEAR or EXP_LINEAR
    q0: float                      # constant term (linear) or prefactor (exp)
    cols: np.ndarray               # flat columns into the stacked neighborhood
    vals: np.ndarray               # matching coefficients

    def evaluate(self, phi_flat: np.ndarray) -> float:
        acc = float(self.vals @ phi_flat[self.cols]) if len(self.cols) else 0.0
        if self.kind == LINEAR:
            return self.q0 + acc
        return self.q0 * math.exp(acc)


@dataclass(frozen=True, eq=False)
class RateModel:
    """Finite-state rate model over stacked neighborhood vectors."""

    name: str
    state_names: tuple[str, ...]
    max_order: int
    channels: tuple[Channel, ...]
    lipschitz_hint: float | None = None

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.n_states, self.max_order)

    @property
    def affine_form(self) -> dict | None:
        """{(s_to, s_from): (q0, {(m, tuple): val})} when all rates are affine."""
        if any(ch.kind != LINEAR for ch in self.channels):
            return None
        lay = self.layout
        decode = {}
        for m in range(1, self.max_order + 1):
            for flat in range(self.n_states**m):
                digits, rem = [], flat
                for _ in range(m):
                    digits.append(rem % self.n_states)
                    rem //= self.n_states
                decode[lay.offsets[m - 1] + flat] = (m, tuple(reversed(digits)))
        return {
            (ch.s_to, ch.s_from): (
                ch.q0,
                {decode[c]: v for c, v in zip(ch.cols.tolist(), ch.vals.tolist())},
            )
            for ch in self.channels
        }

    def content_hash(self) -> str:
        """Stable hash of the rate structure, used to match runs to instances."""
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.name}|{self.state_names}|{self.max_order}".encode())
        for ch in self.channels:
            h.update(f"{ch.s_to},{ch.s_from},{ch.kind},{ch.q0!r}".encode())
            h.update(ch.cols.tobytes())
            h.update(ch.vals.tobytes())
        return h.hexdigest()

    def rate(self, s_to: int, s_from: int, phi) -> float:
        """Scalar rate for one transition; phi is flat or a NeighborhoodVector."""
        if isinstance(phi, NeighborhoodVector):
            phi = phi.flat
        phi = np.asarray(phi, dtype=float)
        for ch in self.channels:
            if ch.s_to == s_to and ch.s_from == s_from:
                q = ch.evaluate(phi)
                if not math.isfinite(q):
                    raise ModelEvaluationError(
                        f"rate {s_from}->{s_to} evaluated to {q}"
                    )
                return q
        return 0.0

    def batch_rates(self, phi: np.ndarray) -> np.ndarray:
        """Off-diagonal rate tensor (n, |S|, |S|) for stacked inputs (n, D)."""
        phi = np.atleast_2d(phi)
        n = phi.shape[0]
        S = self.n_states
        Q = np.zeros((n, S, S))
        for ch in self.channels:
            acc = phi[:, ch.cols] @ ch.vals if len(ch.cols) else np.zeros(n)
            q = ch.q0 + acc if ch.kind == LINEAR else ch.q0 * np.exp(acc)
            Q[:, ch.s_to, ch.s_from] = q
        if not np.all(np.isfinite(Q)):
            raise ModelEvaluationError("non-finite rate in batch evaluation")
        return Q

    def generator_action(self, phi: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """dZ/dt = Q(phi) Z rowwise, deriving the diagonal from the columns."""
        Q = self.batch_rates(phi)
        dZ = np.einsum("nij,nj->ni", Q, Z)
        dZ -= Q.sum(axis=1) * Z
        return dZ

    def rate_upper_bound(self, delta) -> np.ndarray:
        """Certified per-channel rate bounds given per-order degree bounds.

        ``delta`` is (max_order,) for a global bound or (max_order, n) for
        per-vertex bounds; returns (n_channels,) or (n, n_channels).  Uses
        that each order-m block of a neighborhood vector is componentwise
        nonnegative and sums to at most delta_m.
        """
        delta = np.asarray(delta, dtype=float)
        per_vertex = delta.ndim == 2
        lay = self.layout
        offs = np.array(lay.offsets + (lay.total_dim,))
        out = []
        for ch in self.channels:
            if per_vertex:
                acc = np.zeros(delta.shape[1])
            else:
                acc = 0.0
            for m in range(1, self.max_order + 1):
                mask = (ch.cols >= offs[m - 1]) & (ch.cols < offs[m])
                if mask.any():
                    vmax = max(float(ch.vals[mask].max()), 0.0)
                    acc = acc + vmax * delta[m - 1]
            out.append(self.q0_plus(ch, acc))
        return np.stack(out, axis=-1)

    @staticmethod
    def q0_plus(ch: Channel, acc):
        return ch.q0 + acc if ch.kind == LINEAR else ch.q0 * np.exp(acc)


def _tuple_cols(layout: StateLayout, m: int, predicate) -> list[int]:
    """Flat columns of all order-m tuples satisfying a predicate."""
    from itertools import product

    cols = []
    for tup in product(range(layout.n_states), repeat=m):
        if predicate(tup):
            cols.append(layout.col(m, tup))
    return cols


def _channel(layout, s_to, s_from, kind, q0, coef: Mapping[int, float]) -> Channel:
    cols = np.array(sorted(coef), dtype=np.int64)
    vals = np.array([coef[c] for c in cols], dtype=np.float64)
    return Channel(s_to, s_from, kind, float(q0), cols, vals)


# ---------------------------------------------------------------------------
# built-in models


def sis_model(beta, gamma: float, max_order: int | None = None) -> RateModel:
    """Susceptible/infected contact dynamics, states (S, I) = (0, 1).

    ``beta`` is a scalar or one infection coefficient per order; a vertex
    gets infected at rate sum_m beta_m * phi_m(all-infected tail), and
    recovers at the constant rate ``gamma``.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if max_order is None:
        max_order = len(beta)
    if len(beta) != max_order:
        raise ParameterError("need one beta per order")
    if np.any(beta < 0) or gamma < 0:
        raise ParameterError("rates must be nonnegative")
    lay = StateLayout(2, max_order)
    infect = {lay.col(m, (1,) * m): beta[m - 1] for m in range(1, max_order + 1)}
    return RateModel(
        name="sis",
        state_names=("S", "I"),
        max_order=max_order,
        channels=(
            _channel(lay, 1, 0, LINEAR, 0.0, infect),
            _channel(lay, 0, 1, LINEAR, gamma, {}),
        ),
        lipschitz_hint=float(beta.max(initial=0.0)),
    )


def glauber_model(alpha, gamma, beta: float) -> RateModel:
    """Spin-flip dynamics with states (-, +) = (0, 1).

    The flip-to-plus rate is exp(beta * S(phi)) with the local field

        S(phi) = sum_m alpha_m * phi_m(all-plus) + gamma_m * phi_m(all-minus),

    and the flip-to-minus rate is 1.  The classical symmetric choice is
    alpha_m = 1, gamma_m = -1, which on a regular unit-degree graph gives
    the magnetization fixed point sigma = tanh(beta * sigma / 2).
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if len(alpha) != len(gamma):
        raise ParameterError("alpha and gamma must have equal length")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(gamma)) and math.isfinite(beta)):
        raise ParameterError("parameters must be finite")
    M = len(alpha)
    lay = StateLayout(2, M)
    coef = {}
    for m in range(1, M + 1):
        coef[lay.col(m, (1,) * m)] = beta * alpha[m - 1]
        c_minus = lay.col(m, (0,) * m)
        coef[c_minus] = coef.get(c_minus, 0.0) + beta * gamma[m - 1]
    return RateModel(
        name="glauber",
        state_names=("-", "+"),
        max_order=M,
        channels=(
            _channel(lay, 1, 0, EXP_LINEAR, 1.0, coef),
            _channel(lay, 0, 1, LINEAR, 1.0, {}),
        ),
    )


def voter_model(lam: float) -> RateModel:
    """Imitation dynamics with states (0, 1): adopt s at rate lam * phi_s."""
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    lay = StateLayout(2, 1)
    return RateModel(
        name="voter",
        state_names=("0", "1"),
        max_order=1,
        channels=(
            _channel(lay, 0, 1, LINEAR, 0.0, {lay.col(1, (0,)): lam}),
            _channel(lay, 1, 0, LINEAR, 0.0, {lay.col(1, (1,)): lam}),
        ),
        lipschitz_hint=lam,
    )


def majority_model(max_order: int, alpha=None) -> RateModel:
    """Adopt the majority opinion of each group, states (0, 1).

    A vertex switches to 0 at the total weight of tails holding a strict
    0-majority and to 1 at the total weight of the rest; ties go to
    opinion 1.  ``alpha`` optionally scales order m by alpha_m (the same
    effect as rescaling the order-m edge weights).
    """
    if alpha is None:
        alpha = np.ones(max_order)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if len(alpha) != max_order or np.any(alpha < 0):
        raise ParameterError("alpha must be nonnegative, one entry per order")
    lay = StateLayout(2, max_order)
    to0, to1 = {}, {}
    for m in range(1, max_order + 1):
        for c in _tuple_cols(lay, m, lambda t, m=m: sum(t) < m / 2):
            to0[c] = alpha[m - 1]
        for c in _tuple_cols(lay, m, lambda t, m=m: sum(t) >= m / 2):
            to1[c] = alpha[m - 1]
    return RateModel(
        name="majority",
        state_names=("0", "1"),
        max_order=max_order,
        channels=(
            _channel(lay, 0, 1, LINEAR, 0.0, to0),
            _channel(lay, 1, 0, LINEAR, 0.0, to1),
        ),
        lipschitz_hint=float(alpha.max(initial=0.0)),
    )


def affine_model(
    n_states: int,
    q0: Mapping[tuple[int, int], float],
    q1: Mapping[tuple[int, int], Mapping[tuple[int, tuple[int, ...]], float]],
    max_order: int = 1,
    state_names: Sequence[str] | None = None,
) -> RateModel:
    """Generic affine rates q[to,from] = q0 + sum over (m, tuple) coefficients."""
    if state_names is None:
        state_names = tuple(str(s) for s in range(n_states))
    lay = StateLayout(n_states, max_order)
    pairs = sorted(set(q0) | set(q1))
    channels = []
    for s_to, s_from in pairs:
        if s_to == s_from:
            raise ParameterError("diagonal rates are derived, not supplied")
        const = float(q0.get((s_to, s_from), 0.0))
        coef = {}
        for (m, tup), v in q1.get((s_to, s_from), {}).items():
            if v < 0:
                raise ParameterError("affine coefficients must be nonnegative")
            c = lay.col(m, tup)
            coef[c] = coef.get(c, 0.0) + float(v)
        if const < 0:
            raise ParameterError("affine constants must be nonnegative")
        channels.append(_channel(lay, s_to, s_from, LINEAR, const, coef))
    return RateModel(
        name="affine",
        state_names=tuple(state_names),
        max_order=max_order,
        channels=tuple(channels),
    )


def load_affine_model(path, n_states: int, max_order: int = 1) -> RateModel:
    """Read affine coefficients from a text file.

    Line format: ``s_from s_to q0 [m:s1,...,sm:val ...]`` with 0-based
    state indices; blank lines and '#' comments are skipped.
    """
    q0, q1 = {}, {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            s_from, s_to, const = int(parts[0]), int(parts[1]), float(parts[2])
            q0[(s_to, s_from)] = const
            terms = {}
            for tok in parts[3:]:
                m_str, tup_str, val_str = tok.split(":")
                tup = tuple(int(x) for x in tup_str.split(","))
                terms[(int(m_str), tup)] = float(val_str)
            if terms:
                q1[(s_to, s_from)] = terms
    return affine_model(n_states, q0, q1, max_order=max_order)


def make_model(name: str, params: Mapping) -> RateModel:
    """Build a model by name; used by the experiment configuration layer."""
    p = dict(params)
    name = name.lower()
    if name == "sis":
        return sis_model(p.pop("beta"), float(p.pop("gamma")))
    if name == "glauber":
        return glauber_model(p.pop("alpha"), p.pop("gamma"), float(p.pop("beta")))
    if name == "voter":
        lam = p.pop("lambda", None)
        if lam is None:
            lam = p.pop("lam")
        return voter_model(float(lam))
    if name == "majority":
        return majority_model(int(p.pop("max_order")), p.pop("alpha", None))
    if name == "affine_file":
        return load_affine_model(
            p.pop("path"), int(p.pop("n_states")), int(p.pop("max_order", 1))
        )
    raise ParameterError(f"unknown model {name!r}")
