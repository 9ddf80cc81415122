"""Exact stochastic simulation, the coupled auxiliary process, and a
product-space master-equation oracle.

The simulator draws candidate events from a Poisson stream whose rate is
a certified per-(vertex, channel) upper bound on the true transition
rate, then accepts each candidate by comparing a uniform mark against
the exact rate evaluated at the candidate time.  This thinning scheme is
distributionally exact and gives a natural coupling: running the
empirical process and the mean-field-driven auxiliary process off the
same candidates and marks makes them differ only when the mark falls
between the two rates.

Empirical neighborhoods are maintained incrementally: flipping vertex j
touches only the stored edges whose tail contains j.  Replicas derive
independent generators from (seed, replica index), so ensembles are
reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    CapacityError,
    InputError,
    ModelEvaluationError,
    ParameterError,
)
from .hypergraph import WeightedHypergraph, neighborhood_sums
from .integrate import integrate
from .meanfield import NimfaSolution, _order_view
from .models import RateModel

__all__ = [
    "PopulationState",
    "Trajectory",
    "CoupledRun",
    "MasterSolution",
    "SimulationEnsemble",
    "CoupledEnsemble",
    "simulate",
    "simulate_coupled",
    "simulate_ensemble",
    "coupled_ensemble",
    "master_solve",
    "replica_rng",
    "MASTER_STATE_GUARD",
]

MASTER_STATE_GUARD = 2**20


@dataclass(frozen=True)
class PopulationState:
    """Assignment of one local state per vertex at a given time."""

    states: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "states", np.asarray(self.states, dtype=np.int64).copy()
        )

    @property
    def n(self) -> int:
        return len(self.states)


@dataclass(eq=False)
class Trajectory:
    """Event log of one realization plus derived occupancy series."""

    n: int
    n_states: int
    initial: np.ndarray
    times: np.ndarray
    vertices: np.ndarray
    from_states: np.ndarray
    to_states: np.ndarray
    t_end: float

    @property
    def n_events(self) -> int:
        return len(self.times)

    def states_at(self, ts) -> np.ndarray:
        """Vertex states at the given times; (n,) for scalar, (T, n) else."""
        scalar = np.isscalar(ts) or np.ndim(ts) == 0
        grid = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(np.diff(grid) < 0):
            raise ParameterError("query times must be sorted")
        out = np.empty((len(grid), self.n), dtype=np.int64)
        cur = self.initial.copy()
        ptr = 0
        for gi, tg in enumerate(grid):
            nxt = int(np.searchsorted(self.times, tg, side="right"))
            if nxt > ptr:
                # events applied in time order; repeated vertices keep the
                # last assignment, which is the latest event
                cur[self.vertices[ptr:nxt]] = self.to_states[ptr:nxt]
                ptr = nxt
            out[gi] = cur
        return out[0] if scalar else out

    def prevalence(self, ts) -> np.ndarray:
        """State fractions at the given times, shape (T, n_states)."""
        states = np.atleast_2d(self.states_at(ts))
        out = np.empty((len(states), self.n_states))
        for r, row in enumerate(states):
            out[r] = np.bincount(row, minlength=self.n_states) / self.n
        return out


@dataclass(eq=False)
class CoupledRun:
    """Paired realization of the empirical and auxiliary processes."""

    trajectory_xi: Trajectory | None
    trajectory_xihat: Trajectory | None
    disagreement: np.ndarray          # (n,) first disagreement time, inf if none
    seed: object
    instance_hash: str
    t_grid: np.ndarray | None = None
    prevalence_xi: np.ndarray | None = None
    prevalence_hat: np.ndarray | None = None

    def disagreed_by(self, t: float) -> np.ndarray:
        """Boolean per-vertex indicator of a disagreement within [0, t]."""
        return self.disagreement <= t


# ---------------------------------------------------------------------------
# simulation plan: everything derivable from (hypergraph, model) alone


@dataclass(eq=False)
class _SimPlan:
    h: WeightedHypergraph
    model: RateModel
    n: int
    S: int
    D: int
    n_ch: int
    ch_from: np.ndarray
    ch_to: np.ndarray
    ch_kind: np.ndarray
    ch_q0: np.ndarray
    coef_indptr: np.ndarray
    coef_col: np.ndarray
    coef_val: np.ndarray
    lam_flat: np.ndarray
    cum_lam: np.ndarray
    lam_tot: float
    g_indptr: np.ndarray
    g_rows: np.ndarray
    g_vals: np.ndarray
    hi_indptr: np.ndarray
    hi_edge: np.ndarray
    hi_stride: np.ndarray
    e_head: np.ndarray
    e_w: np.ndarray
    e_off: np.ndarray
    e_tails: list
    e_powers: list
    instance_hash: str

    def initial_phi(self, states: np.ndarray) -> np.ndarray:
        Z = np.zeros((self.n, self.S))
        Z[np.arange(self.n), states] = 1.0
        return self.model.layout.pack(neighborhood_sums(self.h, Z)).ravel()

    def initial_tuple_index(self, states: np.ndarray) -> np.ndarray:
        chunks = [
            states[tails] @ powers for tails, powers in zip(self.e_tails, self.e_powers)
        ]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks).astype(np.int64)


def build_plan(h: WeightedHypergraph, model: RateModel) -> _SimPlan:
    oh = _order_view(h, model.max_order)
    lay = model.layout
    n, S, D = oh.n, model.n_states, lay.total_dim
    chans = model.channels
    n_ch = len(chans)
    ch_from = np.array([c.s_from for c in chans], dtype=np.int64)
    ch_to = np.array([c.s_to for c in chans], dtype=np.int64)
    ch_kind = np.array([c.kind for c in chans], dtype=np.int64)
    ch_q0 = np.array([c.q0 for c in chans], dtype=np.float64)
    coef_indptr = np.zeros(n_ch + 1, dtype=np.int64)
    for k, c in enumerate(chans):
        coef_indptr[k + 1] = coef_indptr[k] + len(c.cols)
    coef_col = (
        np.concatenate([c.cols for c in chans])
        if n_ch
        else np.empty(0, dtype=np.int64)
    ).astype(np.int64)
    coef_val = (
        np.concatenate([c.vals for c in chans]) if n_ch else np.empty(0)
    ).astype(np.float64)

    bounds = model.rate_upper_bound(oh.delta)       # (n, n_ch)
    lam_flat = np.ascontiguousarray(bounds, dtype=np.float64).ravel()
    cum_lam = np.cumsum(lam_flat)
    lam_tot = float(cum_lam[-1]) if len(cum_lam) else 0.0

    csc = oh.matrix_csc
    g_indptr = csc.indptr.astype(np.int64)
    g_rows = csc.indices.astype(np.int64)
    g_vals = csc.data.astype(np.float64)

    e_head_parts, e_w_parts, e_off_parts = [], [], []
    e_tails, e_powers = [], []
    incidence: list[dict[int, int]] = []   # per edge not needed; build per vertex
    per_vertex: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    e_base = 0
    for m in range(2, model.max_order + 1):
        tails = oh.tails[m - 1]
        if not len(tails):
            continue
        powers = S ** np.arange(m - 1, -1, -1, dtype=np.int64)
        e_tails.append(tails)
        e_powers.append(powers)
        e_head_parts.append(oh.heads[m - 1])
        e_w_parts.append(oh.weights[m - 1])
        e_off_parts.append(np.full(len(tails), lay.offsets[m - 1], dtype=np.int64))
        for local_e, tail in enumerate(tails):
            strides: dict[int, int] = {}
            for pos, j in enumerate(tail):
                strides[int(j)] = strides.get(int(j), 0) + int(powers[pos])
            for j, stride in strides.items():
                per_vertex[j].append((e_base + local_e, stride))
        e_base += len(tails)
    if e_head_parts:
        e_head = np.concatenate(e_head_parts).astype(np.int64)
        e_w = np.concatenate(e_w_parts).astype(np.float64)
        e_off = np.concatenate(e_off_parts).astype(np.int64)
    else:
        e_head = np.empty(0, dtype=np.int64)
        e_w = np.empty(0)
        e_off = np.empty(0, dtype=np.int64)
    hi_indptr = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        hi_indptr[j + 1] = hi_indptr[j] + len(per_vertex[j])
    hi_edge = np.empty(hi_indptr[-1], dtype=np.int64)
    hi_stride = np.empty(hi_indptr[-1], dtype=np.int64)
    pos = 0
    for j in range(n):
        for e, stride in per_vertex[j]:
            hi_edge[pos] = e
            hi_stride[pos] = stride
            pos += 1

    instance_hash = _instance_hash(oh, model)
    return _SimPlan(
        oh, model, n, S, D, n_ch,
        ch_from, ch_to, ch_kind, ch_q0,
        coef_indptr, coef_col, coef_val,
        lam_flat, cum_lam, lam_tot,
        g_indptr, g_rows, g_vals,
        hi_indptr, hi_edge, hi_stride,
        e_head, e_w, e_off, e_tails, e_powers,
        instance_hash,
    )


def _instance_hash(h: WeightedHypergraph, model: RateModel) -> str:
    import hashlib

    out = hashlib.sha256()
    out.update(h.structure_hash().encode())
    out.update(model.content_hash().encode())
    return out.hexdigest()


def replica_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-style per-replica generator derived from (seed, index)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return replica_rng(int(seed), 0)


_DUMMY_KNOTS = (
    np.array([0.0, np.inf]),
    np.zeros((2, 1)),
    np.zeros((2, 1)),
)


def _run_once(plan: _SimPlan, states0, t_end, rng, *, ztable=None):
    """Drive the thinning kernel over candidate blocks until t_end."""
    n, S, D = plan.n, plan.S, plan.D
    state_xi = np.asarray(states0, dtype=np.int64).copy()
    if state_xi.shape != (n,) or state_xi.min(initial=0) < 0 or (
        len(state_xi) and state_xi.max() >= S
    ):
        raise ParameterError("invalid initial state vector")
    phi = plan.initial_phi(state_xi)
    e_tupidx = plan.initial_tuple_index(state_xi)
    coupled = ztable is not None
    if coupled:
        kt, kv, kd = ztable
        state_hat = state_xi.copy()
        dis = np.full(n, np.inf)
    else:
        kt, kv, kd = _DUMMY_KNOTS
        state_hat = np.empty(0, dtype=np.int64)
        dis = np.empty(0)

    xi_chunks, hat_chunks = [], []
    t = 0.0
    zcursor = 0
    lam_tot = plan.lam_tot
    while lam_tot > 0 and t < t_end:
        mean = lam_tot * (t_end - t)
        n_draw = int(mean + 8.0 * math.sqrt(mean) + 64.0)
        times = t + np.cumsum(rng.standard_exponential(n_draw)) / lam_tot
        chan = np.searchsorted(
            plan.cum_lam, rng.random(n_draw) * lam_tot, side="right"
        ).astype(np.int64)
        marks = rng.random(n_draw)
        ev_t = np.empty(n_draw)
        ev_i = np.empty(n_draw, dtype=np.int64)
        ev_f = np.empty(n_draw, dtype=np.int64)
        ev_s = np.empty(n_draw, dtype=np.int64)
        hv_t = np.empty(n_draw if coupled else 0)
        hv_i = np.empty(n_draw if coupled else 0, dtype=np.int64)
        hv_f = np.empty(n_draw if coupled else 0, dtype=np.int64)
        hv_s = np.empty(n_draw if coupled else 0, dtype=np.int64)
        (k_used, n_ev, n_hv, t_reached, zcursor, status) = _kernels.thinning_block(
            times, chan, marks, t_end,
            plan.n_ch, plan.ch_from, plan.ch_to, plan.ch_kind, plan.ch_q0,
            plan.coef_indptr, plan.coef_col, plan.coef_val, plan.lam_flat,
            state_xi, phi, D, S,
            plan.g_indptr, plan.g_rows, plan.g_vals,
            plan.hi_indptr, plan.hi_edge, plan.hi_stride,
            plan.e_head, plan.e_w, plan.e_off, e_tupidx,
            coupled, state_hat, kt, kv, kd, zcursor,
            ev_t, ev_i, ev_f, ev_s, hv_t, hv_i, hv_f, hv_s, dis,
        )
        if n_ev:
            xi_chunks.append(
                (ev_t[:n_ev].copy(), ev_i[:n_ev].copy(),
                 ev_f[:n_ev].copy(), ev_s[:n_ev].copy())
            )
        if n_hv:
            hat_chunks.append(
                (hv_t[:n_hv].copy(), hv_i[:n_hv].copy(),
                 hv_f[:n_hv].copy(), hv_s[:n_hv].copy())
            )
        if status == _kernels.STATUS_BAD_RATE:
            raise ModelEvaluationError(
                f"invalid rate at t={t_reached}: negative, non-finite, or above "
                "the certified bound"
            )
        t = t_reached
        if status == _kernels.STATUS_DONE:
            break

    def assemble(chunks):
        if not chunks:
            return (np.empty(0), np.empty(0, np.int64),
                    np.empty(0, np.int64), np.empty(0, np.int64))
        return tuple(np.concatenate([c[k] for c in chunks]) for k in range(4))

    xi_ev = assemble(xi_chunks)
    hat_ev = assemble(hat_chunks) if coupled else None
    return state_xi, xi_ev, state_hat, hat_ev, dis


def _trajectory(plan, states0, ev, t_end) -> Trajectory:
    return Trajectory(
        n=plan.n,
        n_states=plan.S,
        initial=np.asarray(states0, dtype=np.int64).copy(),
        times=ev[0],
        vertices=ev[1],
        from_states=ev[2],
        to_states=ev[3],
        t_end=t_end,
    )


def simulate(
    h: WeightedHypergraph,
    model: RateModel,
    init: PopulationState | np.ndarray,
    t_end: float,
    seed,
) -> Trajectory:
    """Exact realization of the local-dynamics Markov chain."""
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    plan = build_plan(h, model)
    states0 = init.states if isinstance(init, PopulationState) else init
    rng = _as_rng(seed)
    _, xi_ev, _, _, _ = _run_once(plan, states0, t_end, rng)
    return _trajectory(plan, states0, xi_ev, t_end)


def _zeta_table(nimfa: NimfaSolution):
    if not hasattr(nimfa, "_ztable"):
        nimfa._ztable = nimfa.zeta_knot_table()
    return nimfa._ztable


def simulate_coupled(
    h: WeightedHypergraph,
    model: RateModel,
    init: PopulationState | np.ndarray,
    nimfa: NimfaSolution,
    t_end: float,
    seed,
    t_grid=None,
    keep_logs: bool = True,
) -> CoupledRun:
    """Joint realization of the empirical and auxiliary processes.

    Both processes start from the same sampled initial configuration and
    share candidate events and acceptance marks.  The mean-field solution
    must cover [0, t_end]; its stacked neighborhoods drive the auxiliary
    rates through dense-output interpolation.
    """
    if t_end <= 0:
        raise ParameterError("t_end must be positive")
    if nimfa.t_end < t_end - 1e-12:
        raise InputError(
            f"mean-field horizon {nimfa.t_end} is shorter than t_end={t_end}"
        )
    plan = build_plan(h, model)
    if _instance_hash(nimfa.hypergraph, nimfa.model) != plan.instance_hash:
        raise InputError("mean-field solution belongs to a different instance")
    states0 = init.states if isinstance(init, PopulationState) else init
    rng = _as_rng(seed)
    ztable = _zeta_table(nimfa)
    _, xi_ev, _, hat_ev, dis = _run_once(plan, states0, t_end, rng, ztable=ztable)
    traj_xi = _trajectory(plan, states0, xi_ev, t_end)
    traj_hat = _trajectory(plan, states0, hat_ev, t_end)
    run = CoupledRun(
        trajectory_xi=traj_xi if keep_logs else None,
        trajectory_xihat=traj_hat if keep_logs else None,
        disagreement=dis,
        seed=seed,
        instance_hash=plan.instance_hash,
    )
    if t_grid is not None:
        grid = np.asarray(t_grid, dtype=float)
        run.t_grid = grid
        run.prevalence_xi = traj_xi.prevalence(grid)
        run.prevalence_hat = traj_hat.prevalence(grid)
    return run


# ---------------------------------------------------------------------------
# replica ensembles


@dataclass(eq=False)
class SimulationEnsemble:
    """Streamed summary of independent replicas of :func:`simulate`."""

    n_replicas: int
    t_grid: np.ndarray
    prevalence_mean: np.ndarray       # (T, S)
    prevalence_stderr: np.ndarray     # (T, S)
    marginal_mean: np.ndarray | None  # (T, n, S) per-vertex occupation freq.
    instance_hash: str
    seed: int


@dataclass(eq=False)
class CoupledEnsemble:
    """Streamed summary of independent coupled replicas."""

    n_replicas: int
    t_grid: np.ndarray
    disagreement_matrix: np.ndarray   # (R, n) first disagreement times
    prevalence_xi_mean: np.ndarray
    prevalence_hat_mean: np.ndarray
    density_gap_xi: np.ndarray        # (R,) sup-over-grid l1 gap vs mean-field
    density_gap_hat: np.ndarray
    instance_hash: str
    seed: int


def _init_states(init_spec, n, S, rng):
    """Fixed array, or ('product', p) drawing iid vertex states from p."""
    if isinstance(init_spec, PopulationState):
        return init_spec.states
    if isinstance(init_spec, tuple) and init_spec[0] == "product":
        p = np.asarray(init_spec[1], dtype=float)
        if p.ndim == 1:
            p = np.tile(p, (n, 1))
        u = rng.random(n)
        return (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
    return np.asarray(init_spec, dtype=np.int64)


def simulate_ensemble(
    h: WeightedHypergraph,
    model: RateModel,
    init_spec,
    t_end: float,
    n_replicas: int,
    seed: int,
    t_grid,
    marginals: bool = False,
    n_jobs: int = 1,
) -> SimulationEnsemble:
    """Monte Carlo ensemble with per-grid-time aggregation."""
    plan = build_plan(h, model)
    grid = np.asarray(t_grid, dtype=float)
    args = (plan, init_spec, t_end, seed, grid, marginals)
    if n_jobs > 1:
        chunks = _split(n_replicas, n_jobs)
        parts = _parallel_map(_sim_chunk, [(args, lo, hi) for lo, hi in chunks])
    else:
        parts = [_sim_chunk((args, 0, n_replicas))]
    R = n_replicas
    psum = sum(p[0] for p in parts)
    psq = sum(p[1] for p in parts)
    mean = psum / R
    var = np.maximum(psq / R - mean**2, 0.0)
    stderr = np.sqrt(var / R)
    marg = sum(p[2] for p in parts) / R if marginals else None
    return SimulationEnsemble(R, grid, mean, stderr, marg, plan.instance_hash, seed)


def _sim_chunk(packed):
    (plan, init_spec, t_end, seed, grid, marginals), lo, hi = packed
    T = len(grid)
    psum = np.zeros((T, plan.S))
    psq = np.zeros((T, plan.S))
    marg = np.zeros((T, plan.n, plan.S)) if marginals else 0.0
    t_rows = np.repeat(np.arange(T), plan.n)
    i_cols = np.tile(np.arange(plan.n), T)
    for r in range(lo, hi):
        rng = replica_rng(seed, r)
        states0 = _init_states(init_spec, plan.n, plan.S, rng)
        _, xi_ev, _, _, _ = _run_once(plan, states0, t_end, rng)
        traj = _trajectory(plan, states0, xi_ev, t_end)
        states = np.atleast_2d(traj.states_at(grid))
        prev = traj.prevalence(grid)
        psum += prev
        psq += prev**2
        if marginals:
            np.add.at(marg, (t_rows, i_cols, states.ravel()), 1.0)
    return psum, psq, marg


def coupled_ensemble(
    h: WeightedHypergraph,
    model: RateModel,
    init_spec,
    nimfa: NimfaSolution,
    t_end: float,
    n_replicas: int,
    seed: int,
    t_grid,
    n_jobs: int = 1,
) -> CoupledEnsemble:
    """Coupled Monte Carlo ensemble with disagreement and density summaries."""
    if nimfa.t_end < t_end - 1e-12:
        raise InputError("mean-field horizon shorter than t_end")
    plan = build_plan(h, model)
    if _instance_hash(nimfa.hypergraph, nimfa.model) != plan.instance_hash:
        raise InputError("mean-field solution belongs to a different instance")
    grid = np.asarray(t_grid, dtype=float)
    ztable = _zeta_table(nimfa)
    zbar = nimfa.z(grid).mean(axis=1)     # (T, S) population mean of z
    args = (plan, init_spec, t_end, seed, grid, ztable, zbar)
    if n_jobs > 1:
        chunks = _split(n_replicas, n_jobs)
        parts = _parallel_map(_coupled_chunk, [(args, lo, hi) for lo, hi in chunks])
    else:
        parts = [_coupled_chunk((args, 0, n_replicas))]
    dis = np.concatenate([p[0] for p in parts])
    prev_xi = sum(p[1] for p in parts) / n_replicas
    prev_hat = sum(p[2] for p in parts) / n_replicas
    gap_xi = np.concatenate([p[3] for p in parts])
    gap_hat = np.concatenate([p[4] for p in parts])
    return CoupledEnsemble(
        n_replicas, grid, dis, prev_xi, prev_hat, gap_xi, gap_hat,
        plan.instance_hash, seed,
    )


def _coupled_chunk(packed):
    (plan, init_spec, t_end, seed, grid, ztable, zbar), lo, hi = packed
    T = len(grid)
    dis_rows = []
    prev_xi_sum = np.zeros((T, plan.S))
    prev_hat_sum = np.zeros((T, plan.S))
    gap_xi = np.empty(hi - lo)
    gap_hat = np.empty(hi - lo)
    for r in range(lo, hi):
        rng = replica_rng(seed, r)
        states0 = _init_states(init_spec, plan.n, plan.S, rng)
        _, xi_ev, _, hat_ev, dis = _run_once(
            plan, states0, t_end, rng, ztable=ztable
        )
        traj_xi = _trajectory(plan, states0, xi_ev, t_end)
        traj_hat = _trajectory(plan, states0, hat_ev, t_end)
        px = traj_xi.prevalence(grid)
        ph = traj_hat.prevalence(grid)
        dis_rows.append(dis)
        prev_xi_sum += px
        prev_hat_sum += ph
        gap_xi[r - lo] = np.abs(px - zbar).sum(axis=1).max()
        gap_hat[r - lo] = np.abs(ph - zbar).sum(axis=1).max()
    return np.array(dis_rows), prev_xi_sum, prev_hat_sum, gap_xi, gap_hat


def _split(total, parts):
    edges = np.linspace(0, total, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel_map(fn, jobs):
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=len(jobs)) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# product-space master equations (exact oracle for small systems)


@dataclass(eq=False)
class MasterSolution:
    """Exact occupation-probability solution on the product state space."""

    t_grid: np.ndarray
    distribution: np.ndarray      # (T, |S|^n)
    marginals: np.ndarray         # (T, n, S)
    digits: np.ndarray            # (|S|^n, n) product-state decoding

    def pair_marginal(self, i: int, j: int) -> np.ndarray:
        """Joint (T, S, S) occupation of vertices i and j."""
        S = self.marginals.shape[2]
        out = np.zeros((len(self.t_grid), S, S))
        code = self.digits[:, i] * S + self.digits[:, j]
        for c in range(S * S):
            mask = code == c
            out[:, c // S, c % S] = self.distribution[:, mask].sum(axis=1)
        return out


def _product_digits(n: int, S: int) -> np.ndarray:
    K = S**n
    idx = np.arange(K)
    digits = np.empty((K, n), dtype=np.int64)
    for i in range(n):
        digits[:, i] = (idx // S ** (n - 1 - i)) % S
    return digits


def master_solve(
    h: WeightedHypergraph,
    model: RateModel,
    init_distribution,
    t_grid,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> MasterSolution:
    """Integrate the forward equations on the full product space.

    ``init_distribution`` may be a PopulationState (point mass), an
    (n, S) matrix of independent per-vertex marginals, or a full vector
    over the |S|^n product states (lexicographic by vertex index, vertex
    0 most significant).  Guarded at |S|^n <= 2^20 states.
    """
    n, S = h.n, model.n_states
    if S**n > MASTER_STATE_GUARD:
        raise CapacityError(
            f"product space {S}^{n} exceeds the guard {MASTER_STATE_GUARD}"
        )
    K = S**n
    digits = _product_digits(n, S)
    p0 = _master_init(init_distribution, n, S, K, digits)

    oh = _order_view(h, model.max_order)
    transitions = _master_transitions(oh, model, digits)
    grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ParameterError("t_grid must be positive and increasing")

    def rhs(t, p):
        out = np.zeros_like(p)
        for x_idx, y_idx, rate in transitions:
            flow = rate * p[x_idx]
            out[x_idx] -= flow
            out[y_idx] += flow
        return out

    dense = integrate(rhs, 0.0, p0, float(grid[-1]), rtol=rtol, atol=atol)
    dist = dense(grid)
    sums = dist.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ModelEvaluationError("master distribution drifted off normalization")
    marg = np.zeros((len(grid), n, S))
    for i in range(n):
        for s in range(S):
            marg[:, i, s] = dist[:, digits[:, i] == s].sum(axis=1)
    return MasterSolution(grid, dist, marg, digits)


def _master_init(init, n, S, K, digits):
    if isinstance(init, PopulationState):
        p0 = np.zeros(K)
        code = 0
        for s in init.states:
            code = code * S + int(s)
        p0[code] = 1.0
        return p0
    arr = np.asarray(init, dtype=float)
    if arr.shape == (n,) and np.issubdtype(np.asarray(init).dtype, np.integer):
        return _master_init(PopulationState(arr.astype(int)), n, S, K, digits)
    if arr.shape == (n, S):
        p0 = np.ones(K)
        for i in range(n):
            p0 *= arr[i, digits[:, i]]
    elif arr.shape == (K,):
        p0 = arr.copy()
    else:
        raise ParameterError("unrecognized initial distribution shape")
    if abs(p0.sum() - 1.0) > 1e-9:
        raise InputError("initial distribution must sum to 1")
    return p0


def _master_transitions(h: WeightedHypergraph, model: RateModel, digits):
    """Per (vertex, channel) cached rate vectors and flip index maps."""
    n = h.n
    S = model.n_states
    K = len(digits)
    lay = model.layout
    # value lookup per channel and order: dense over the order's tuples
    lookups = []
    for ch in model.channels:
        per_order = []
        for m in range(1, model.max_order + 1):
            off = lay.offsets[m - 1]
            table = np.zeros(S**m)
            mask = (ch.cols >= off) & (ch.cols < off + S**m)
            table[ch.cols[mask] - off] = ch.vals[mask]
            per_order.append(table)
        lookups.append(per_order)
    heads_by_vertex = [
        [np.nonzero(h.heads[m - 1] == i)[0] for m in range(1, h.max_order + 1)]
        for i in range(n)
    ]
    out = []
    for i in range(n):
        for c, ch in enumerate(model.channels):
            acc = np.zeros(K)
            nontrivial = False
            for m in range(1, model.max_order + 1):
                table = lookups[c][m - 1]
                if not table.any():
                    continue
                powers = S ** np.arange(m - 1, -1, -1, dtype=np.int64)
                for e in heads_by_vertex[i][m - 1]:
                    cols = digits[:, h.tails[m - 1][e]] @ powers
                    acc += h.weights[m - 1][e] * table[cols]
                    nontrivial = True
            if ch.kind == 0:
                rate_full = ch.q0 + acc
            else:
                rate_full = ch.q0 * np.exp(acc)
            if np.any(rate_full < 0) or not np.all(np.isfinite(rate_full)):
                raise ModelEvaluationError("negative or non-finite master rate")
            x_idx = np.nonzero(digits[:, i] == ch.s_from)[0]
            rate = rate_full[x_idx]
            if not nontrivial and rate.max(initial=0.0) == 0.0:
                continue
            y_idx = x_idx + (ch.s_to - ch.s_from) * S ** (n - 1 - i)
            out.append((x_idx, y_idx, rate))
    return out
