"""Vertex-level mean-field ODEs and their structured reductions.

The full system evolves one occupancy vector per vertex,

    dz_i/dt = Q(zeta_i(t)) z_i(t),
    zeta_i^(m)[s_1..s_m] = sum over edges (i, j̄) of w * prod_l z[j_l, s_l],

which closes the exact expectation dynamics by replacing the random
neighborhood with its mean-field counterpart.  The exact flow preserves
the probability simplex, so the integrator enforces it by step
rejection only; no renormalization is ever applied.

Reductions solve structurally smaller systems of the same shape:

* well-mixed single-group dynamics (``hmfa_solve``),
* group-averaged metapopulation weights (``metapop_reduce``),
* degree-class dynamics driven by the size-biased average
  (``imfa_solve``),
* activity-class dynamics for contact-at-random-rate networks
  (``activity_solve``),
* density-based reduction of a dense simple graph over a given
  equal-size partition (``partition_reduce``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, ParameterError
from .hypergraph import (
    CONVENTION_EXPLICIT,
    RawHypergraph,
    WeightedHypergraph,
    neighborhood_sums,
    neighborhood_sums_derivative,
)
from .integrate import DenseSolution, integrate
from .models import LINEAR, RateModel, StateLayout

__all__ = [
    "NimfaSolution",
    "ReducedSolution",
    "PartitionSpec",
    "nimfa_solve",
    "hmfa_solve",
    "metapop_reduce",
    "metapop_solve",
    "imfa_solve",
    "activity_solve",
    "partition_reduce",
    "simplex_check",
]

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
SIMPLEX_TOL = 1e-9


def simplex_check(Z: np.ndarray, tol: float) -> bool:
    """Rows within tol of the probability simplex."""
    return bool(
        np.all(Z >= -tol)
        and np.all(np.abs(Z.sum(axis=-1) - 1.0) <= tol)
    )


def _validate_z0(Z0: np.ndarray, n: int, S: int) -> np.ndarray:
    Z0 = np.asarray(Z0, dtype=float)
    if Z0.shape == (S,):
        Z0 = np.tile(Z0, (n, 1))
    if Z0.shape != (n, S):
        raise ParameterError(f"initial condition must have shape ({n}, {S})")
    if not simplex_check(Z0, 1e-9):
        raise ParameterError("initial condition rows must lie on the simplex")
    return Z0


def _solve(rhs, Z0, t_end, rtol, atol, max_step, simplex_tol):
    n, S = Z0.shape

    def rhs_flat(t, y):
        return rhs(t, y.reshape(n, S)).ravel()

    def guard(y):
        return simplex_check(y.reshape(n, S), simplex_tol)

    dense = integrate(
        rhs_flat, 0.0, Z0.ravel(), t_end,
        rtol=rtol, atol=atol, max_step=max_step, guard=guard,
    )
    return dense


@dataclass(eq=False)
class NimfaSolution:
    """Dense-output solution of the per-vertex mean-field system."""

    hypergraph: WeightedHypergraph
    model: RateModel
    dense: DenseSolution

    @property
    def n(self) -> int:
        return self.hypergraph.n

    @property
    def n_states(self) -> int:
        return self.model.n_states

    @property
    def t_end(self) -> float:
        return self.dense.t_end

    def z(self, t):
        """Occupancies at time(s) t: (n, S) for scalar t, else (T, n, S)."""
        out = self.dense(t)
        if out.ndim == 1:
            return out.reshape(self.n, self.n_states)
        return out.reshape(len(out), self.n, self.n_states)

    def zeta(self, t: float) -> list[np.ndarray]:
        """Mean-field neighborhoods at scalar time t, one (n, S^m) per order."""
        return neighborhood_sums(self.hypergraph, self.z(t))

    def population_mean(self, t):
        """Average occupancy over vertices at time(s) t."""
        return self.z(t).mean(axis=-2)

    def zeta_knot_table(self):
        """Hermite knot data for the stacked neighborhoods (t, value, slope).

        Returns (ts, vals, ders) with vals/ders of shape (K+1, n * D); the
        same cubic interpolation that reproduces z between knots applies,
        because the neighborhood map is polynomial in z with the product
        rule supplying exact knot derivatives.
        """
        lay = self.model.layout
        K = len(self.dense.ts)
        vals = np.empty((K, self.n * lay.total_dim))
        ders = np.empty_like(vals)
        for k in range(K):
            Z = self.dense.ys[k].reshape(self.n, self.n_states)
            F = self.dense.fs[k].reshape(self.n, self.n_states)
            vals[k] = lay.pack(neighborhood_sums(self.hypergraph, Z)).ravel()
            ders[k] = lay.pack(
                neighborhood_sums_derivative(self.hypergraph, Z, F)
            ).ravel()
        return self.dense.ts.copy(), vals, ders


def nimfa_solve(
    h: WeightedHypergraph,
    model: RateModel,
    z0,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_step: float | None = None,
    simplex_tol: float = SIMPLEX_TOL,
) -> NimfaSolution:
    """Solve the per-vertex system on a weighted hypergraph."""
    if model.max_order > h.max_order:
        raise InputError("model order exceeds hypergraph order")
    Z0 = _validate_z0(z0, h.n, model.n_states)
    lay = model.layout
    oh = _order_view(h, model.max_order)

    def rhs(t, Z):
        phi = lay.pack(neighborhood_sums(oh, Z))
        return model.generator_action(phi, Z)

    dense = _solve(rhs, Z0, t_end, rtol, atol, max_step, simplex_tol)
    return NimfaSolution(oh, model, dense)


def _order_view(h: WeightedHypergraph, max_order: int) -> WeightedHypergraph:
    """Restrict a hypergraph to the orders a model actually uses."""
    if max_order == h.max_order:
        return h
    if max_order < h.max_order:
        return WeightedHypergraph(
            h.n, max_order, h.convention,
            h.heads[:max_order], h.tails[:max_order], h.weights[:max_order],
        )
    empty_h = [np.empty(0, dtype=np.int64) for _ in range(h.max_order, max_order)]
    empty_t = [
        np.empty((0, m), dtype=np.int64) for m in range(h.max_order + 1, max_order + 1)
    ]
    empty_w = [np.empty(0) for _ in range(h.max_order, max_order)]
    return WeightedHypergraph(
        h.n, max_order, h.convention,
        list(h.heads) + empty_h, list(h.tails) + empty_t, list(h.weights) + empty_w,
    )


@dataclass(eq=False)
class ReducedSolution:
    """Group-level trajectories produced by one of the reductions."""

    reduction_tag: str
    sizes: np.ndarray           # (K,) group sizes (counts)
    total_n: int                # population size incl. any excluded block
    model: RateModel
    dense: DenseSolution
    labels: np.ndarray | None = None   # per-group degree/activity labels

    @property
    def n_groups(self) -> int:
        return len(self.sizes)

    @property
    def t_end(self) -> float:
        return self.dense.t_end

    def z(self, t):
        out = self.dense(t)
        K, S = self.n_groups, self.model.n_states
        if out.ndim == 1:
            return out.reshape(K, S)
        return out.reshape(len(out), K, S)

    def population_mean(self, t):
        """Size-weighted group average; weights use the full population size."""
        w = self.sizes / self.total_n
        return np.tensordot(self.z(t), w, axes=([-2], [0]))


def hmfa_solve(
    model: RateModel,
    u0,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_step: float | None = None,
    simplex_tol: float = SIMPLEX_TOL,
) -> ReducedSolution:
    """Well-mixed dynamics du/dt = Q(U) u with U the tensor powers of u."""
    S = model.n_states
    U0 = _validate_z0(u0, 1, S)
    lay = model.layout

    def rhs(t, Z):
        u = Z[0]
        blocks = []
        P = u.copy()
        for m in range(1, model.max_order + 1):
            if m > 1:
                P = np.multiply.outer(P, u).ravel()
            blocks.append(P[None, :])
        return model.generator_action(lay.pack(blocks), Z)

    dense = _solve(rhs, U0, t_end, rtol, atol, max_step, simplex_tol)
    return ReducedSolution("HMFA", np.array([1.0]), 1, model, dense)


# ---------------------------------------------------------------------------
# metapopulation reduction


def _group_sizes(partition: np.ndarray, K: int) -> np.ndarray:
    sizes = np.bincount(partition, minlength=K)
    if np.any(sizes == 0):
        raise ParameterError("every group must contain at least one vertex")
    return sizes


def metapop_reduce(h: WeightedHypergraph, partition, z0):
    """Average weights over a vertex partition.

    Returns (reduced hypergraph, reduced z0, group sizes).  The reduced
    order-m weight of (k, l̄) is the total weight of edges from group
    tuple l̄ into group k divided by |V_k|; the reduced system is again a
    mean-field instance, solvable with :func:`nimfa_solve`.
    """
    partition = np.asarray(partition, dtype=np.int64)
    if partition.shape != (h.n,):
        raise ParameterError("partition must assign every vertex")
    K = int(partition.max()) + 1
    sizes = _group_sizes(partition, K)
    entries: dict[int, list] = {}
    for m in range(1, h.max_order + 1):
        heads = partition[h.heads[m - 1]]
        tails = partition[h.tails[m - 1]]
        acc: dict[tuple, float] = {}
        for hk, tk, w in zip(heads, tails, h.weights[m - 1]):
            key = (int(hk), tuple(int(x) for x in tk))
            acc[key] = acc.get(key, 0.0) + float(w)
        entries[m] = [
            (hk, tk, tot / sizes[hk]) for (hk, tk), tot in acc.items()
        ]
    reduced = WeightedHypergraph.from_edge_lists(
        K, h.max_order, CONVENTION_EXPLICIT, entries
    )
    z0 = np.asarray(z0, dtype=float)
    z0_red = np.zeros((K, z0.shape[1]))
    np.add.at(z0_red, partition, z0)
    z0_red /= sizes[:, None]
    return reduced, z0_red, sizes


def metapop_solve(
    h: WeightedHypergraph, partition, model: RateModel, z0, t_end: float, **kw
) -> ReducedSolution:
    """Convenience wrapper: reduce, then solve the group-level system."""
    reduced, z0_red, sizes = metapop_reduce(h, partition, z0)
    sol = nimfa_solve(reduced, model, z0_red, t_end, **kw)
    return ReducedSolution(
        "Metapopulation", sizes.astype(float), int(sizes.sum()), model, sol.dense
    )


# ---------------------------------------------------------------------------
# degree-class (size-biased) reduction


def imfa_solve(
    degree_sequence,
    model: RateModel,
    convention: int,
    z0_by_class,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_step: float | None = None,
    simplex_tol: float = SIMPLEX_TOL,
) -> ReducedSolution:
    """Degree-class dynamics driven by size-biased averages.

    ``degree_sequence`` is (n,) or (max_order, n); classes are the unique
    per-order degree vectors in lexicographic order (exposed as
    ``labels``), and ``z0_by_class`` supplies one simplex vector per
    class.  Order-m neighborhoods take the value
    (k_m / mean_m) * Theta_m^{x m} under convention 1 (Theta_m the
    size-biased class average), or Theta_1 under convention 2 (order 1
    only).  Degree-0 classes evolve with zero neighborhoods.
    """
    deg = np.atleast_2d(np.asarray(degree_sequence, dtype=float))
    M, n = deg.shape
    if convention not in (1, 2):
        raise ParameterError("convention must be 1 or 2")
    if convention == 2 and M > 1:
        raise ParameterError("convention 2 classes are defined for order 1 only")
    if np.any(deg < 0):
        raise ParameterError("degrees must be nonnegative")
    if M > model.max_order:
        raise InputError("degree sequence has more orders than the model")
    classes, counts = np.unique(deg.T, axis=0, return_counts=True)
    K = len(classes)
    S = model.n_states
    Z0 = _validate_z0(np.asarray(z0_by_class, dtype=float), K, S)
    d_bar = deg.mean(axis=1)
    lay = model.layout
    # size-biased class weights per order: q[k, m] = k_m * N_k / (mean_m * n)
    qw = np.zeros((K, M))
    for m in range(M):
        if d_bar[m] > 0:
            qw[:, m] = classes[:, m] * counts / (d_bar[m] * n)

    def rhs(t, Z):
        blocks = []
        for m in range(1, model.max_order + 1):
            if m > M:
                blocks.append(np.zeros((K, S**m)))
                continue
            theta = qw[:, m - 1] @ Z
            if convention == 2:
                blocks.append(np.tile(theta, (K, 1)))
                continue
            P = theta.copy()
            for _ in range(m - 1):
                P = np.multiply.outer(P, theta).ravel()
            scale = classes[:, m - 1] / d_bar[m - 1] if d_bar[m - 1] > 0 else 0.0
            blocks.append(np.outer(scale, P))
        return model.generator_action(lay.pack(blocks), Z)

    dense = _solve(rhs, Z0, t_end, rtol, atol, max_step, simplex_tol)
    return ReducedSolution(
        "IMFA", counts.astype(float), n, model, dense, labels=classes
    )


# ---------------------------------------------------------------------------
# activity-class reduction


def activity_solve(
    activities,
    model: RateModel,
    z0_by_class,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_step: float | None = None,
    simplex_tol: float = SIMPLEX_TOL,
) -> ReducedSolution:
    """Activity-class dynamics for contact-at-random networks.

    ``activities`` is (n,) or (max_order, n).  Classes are unique
    per-order activity vectors; with E the population mean of z and
    psi_m the activity-weighted mean, the order-m neighborhood tensor of
    class k is

        a_k^(m) * E^{x m}  +  sum over slots r of E^{x(r-1)} x psi_m x E^{x(m-r)}

    whose all-(s..s) component reduces to the familiar
    (a_k E_s + psi_s) E_s^{m-1} form.
    """
    act = np.atleast_2d(np.asarray(activities, dtype=float))
    M, n = act.shape
    if np.any(act < 0) or not np.all(np.isfinite(act)):
        raise ParameterError("activities must be finite and nonnegative")
    if M > model.max_order:
        raise InputError("activity table has more orders than the model")
    classes, counts = np.unique(act.T, axis=0, return_counts=True)
    K = len(classes)
    S = model.n_states
    Z0 = _validate_z0(np.asarray(z0_by_class, dtype=float), K, S)
    p = counts / n
    lay = model.layout

    def rhs(t, Z):
        Emean = p @ Z
        blocks = []
        for m in range(1, model.max_order + 1):
            if m > M:
                blocks.append(np.zeros((K, S**m)))
                continue
            a_m = classes[:, m - 1]
            psi = (a_m * p) @ Z
            base = Emean.copy()
            for _ in range(m - 1):
                base = np.multiply.outer(base, Emean).ravel()
            slot_sum = np.zeros(S**m)
            for r in range(m):
                P = (psi if r == 0 else Emean).copy()
                for l in range(1, m):
                    P = np.multiply.outer(P, psi if l == r else Emean).ravel()
                slot_sum += P
            blocks.append(np.outer(a_m, base) + np.tile(slot_sum, (K, 1)))
        return model.generator_action(lay.pack(blocks), Z)

    dense = _solve(rhs, Z0, t_end, rtol, atol, max_step, simplex_tol)
    return ReducedSolution(
        "ActivityDriven", counts.astype(float), n, model, dense, labels=classes
    )


# ---------------------------------------------------------------------------
# density-based partition reduction for dense simple graphs


@dataclass(frozen=True)
class PartitionSpec:
    """Equal-size partition of a simple graph with its edge densities.

    ``assignment`` maps each vertex to a block: 0 is the (possibly empty)
    exceptional block, 1..K are the regular blocks.  ``rho[k-1, l-1]`` is
    the edge density between regular blocks k and l, ``p`` the global
    density (mean degree / n) and ``kappa`` the fraction of vertices per
    regular block.
    """

    assignment: np.ndarray
    rho: np.ndarray
    p: float
    kappa: float

    @property
    def n_blocks(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_assignment(cls, graph, assignment) -> "PartitionSpec":
        a_mat = _adjacency(graph)
        n = a_mat.shape[0]
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (n,):
            raise ParameterError("assignment must cover every vertex")
        K = int(assignment.max())
        if K < 1:
            raise ParameterError("need at least one regular block")
        sizes = np.bincount(assignment, minlength=K + 1)
        if len(set(sizes[1:])) != 1:
            raise ParameterError("regular blocks must have equal sizes")
        size = int(sizes[1])
        # indicator matrix of regular blocks, (n, K)
        ind = np.zeros((n, K))
        mask = assignment >= 1
        ind[np.nonzero(mask)[0], assignment[mask] - 1] = 1.0
        counts = np.asarray(ind.T @ (a_mat @ ind))
        rho = counts / (size * size)
        d_bar = a_mat.sum() / n
        return cls(assignment, rho, float(d_bar / n), size / n)


def _adjacency(graph):
    """0/1 adjacency as a sparse matrix from a raw or weighted graph."""
    import scipy.sparse as sp

    if isinstance(graph, RawHypergraph):
        edges = graph.edges.get(1, [])
        rows = [e[0] for e in edges]
        cols = [e[1][0] for e in edges]
        vals = [1.0 if e[2] else 0.0 for e in edges]
        return sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))
    if isinstance(graph, WeightedHypergraph):
        m = graph.matrix.copy()
        m.data = (m.data > 0).astype(float)
        return m
    raise ParameterError("expected a raw or weighted graph")


def partition_reduce(
    graph,
    spec: PartitionSpec,
    model: RateModel,
    z0,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_step: float | None = None,
    simplex_tol: float = SIMPLEX_TOL,
) -> ReducedSolution:
    """Reduce a dense simple graph over a given partition and solve.

    Requires an affine order-1 model.  Reduced weights are
    (kappa / p) * rho(V_k, V_l); the exceptional block is dropped, its
    vertices only entering through ``total_n`` (so ``population_mean``
    matches the density average that weights each regular block by its
    population share).
    """
    if model.max_order != 1:
        raise ParameterError("partition reduction is defined for order-1 models")
    if any(ch.kind != LINEAR for ch in model.channels):
        raise ParameterError("partition reduction requires an affine model")
    if spec.p <= 0:
        raise ParameterError("graph has zero density")
    K = spec.n_blocks
    wbar = (spec.kappa / spec.p) * spec.rho
    entries = {
        1: [
            (k, (l,), wbar[k, l])
            for k in range(K)
            for l in range(K)
            if wbar[k, l] != 0.0
        ]
    }
    reduced = WeightedHypergraph.from_edge_lists(K, 1, CONVENTION_EXPLICIT, entries)
    n = len(spec.assignment)
    z0 = np.asarray(z0, dtype=float)
    v0 = np.zeros((K, model.n_states))
    mask = spec.assignment >= 1
    np.add.at(v0, spec.assignment[mask] - 1, z0[mask])
    sizes = np.bincount(spec.assignment, minlength=K + 1)[1:].astype(float)
    v0 /= sizes[:, None]
    sol = nimfa_solve(
        reduced, model, v0, t_end,
        rtol=rtol, atol=atol, max_step=max_step, simplex_tol=simplex_tol,
    )
    return ReducedSolution("Partition", sizes, n, model, sol.dense)
