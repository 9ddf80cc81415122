"""Weighted directed hypergraphs with a distinguished head vertex.

An edge of order m is an ordered pair (i, (j_1, ..., j_m)): the tail
vertices j_1..j_m jointly influence the head i.  Orders run from 1 to
``max_order``; order 1 is an ordinary directed graph.  Each *ordered*
tail tuple is stored separately (a symmetric unweighted edge on
{i, j, k} contributes both (i, (j, k)) and (i, (k, j))), which is why the
normalization conventions carry the 1/m! factor.

Conventions
-----------
Raw adjacency counts a(i, j̄) are turned into weights by

* convention 1:  w = a / (m! * mean in-degree of order m)
* convention 2:  w = a / (m! * own in-degree of order m)

with 0/0 resolved to 0.  Normalized in-degrees are
``delta_m(i) = sum_j̄ w(i, j̄)``; under convention 2 this is 1 for every
vertex that has at least one m-edge.

Traditional loops (order-1 edges with head == tail) are rejected for raw
hypergraphs.  Weighted hypergraphs may carry them, because several ideal
network families (mean-field complete weights, annealed expectations,
activity-driven weights) and reduced group-level networks are defined
with self-weights.  Repeated vertices inside a tail ("secondary loops")
are always legal for m >= 2, and their total weight is tracked by
:func:`regularity_report`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, StructuralError

__all__ = [
    "RawHypergraph",
    "WeightedHypergraph",
    "DegreeReport",
    "RegularityReport",
    "normalize",
    "degree_report",
    "regularity_report",
    "generate",
    "neighborhood_sums",
    "neighborhood_sums_derivative",
    "scale_orders",
    "read_hypergraph",
    "write_hypergraph",
]

CONVENTION_EXPLICIT = "explicit"


# ---------------------------------------------------------------------------
# raw (unweighted / multiplicity) hypergraphs


@dataclass(frozen=True)
class RawHypergraph:
    """Adjacency multiplicities before normalization.

    ``edges[m]`` lists (head, tail-tuple, a) entries for order m, where a
    is an indicator or a raw multiplicity.  Vertices are 0-based
    internally; the text file format uses 1-based labels.
    """

    n: int
    max_order: int
    edges: Mapping[int, Sequence[tuple[int, tuple[int, ...], float]]]

    def __post_init__(self):
        if self.n <= 0:
            raise ParameterError("vertex count must be positive")
        if self.max_order <= 0:
            raise ParameterError("max_order must be positive")
        for m, entries in self.edges.items():
            if not 1 <= m <= self.max_order:
                raise StructuralError(f"edge order {m} outside [1, {self.max_order}]")
            for head, tail, a in entries:
                if len(tail) != m:
                    raise StructuralError(f"tail {tail} has length != {m}")
                if not (0 <= head < self.n) or any(not (0 <= j < self.n) for j in tail):
                    raise StructuralError(
                        f"vertex index out of range in edge ({head}, {tail})"
                    )
                if m == 1 and tail[0] == head:
                    raise StructuralError(f"loop ({head}, {head}) not allowed for m=1")
                if a < 0 or not math.isfinite(a):
                    raise StructuralError(f"multiplicity {a} must be finite and >= 0")


# ---------------------------------------------------------------------------
# weighted hypergraphs


@dataclass(eq=False)
class WeightedHypergraph:
    """Sparse per-order edge arrays plus cached structure for fast sums.

    ``heads[m-1]``, ``tails[m-1]`` and ``weights[m-1]`` hold the order-m
    edges; tails has shape (E_m, m).  Instances are immutable by
    convention after construction and safe to share across workers.
    """

    n: int
    max_order: int
    convention: str
    heads: list[np.ndarray]
    tails: list[np.ndarray]
    weights: list[np.ndarray]

    @classmethod
    def from_edge_lists(cls, n, max_order, convention, entries_per_order):
        """Build from {m: [(head, tail_tuple, weight), ...]}, dropping zeros."""
        heads, tails, weights = [], [], []
        for m in range(1, max_order + 1):
            entries = entries_per_order.get(m, [])
            kept = [(h, t, w) for (h, t, w) in entries if w != 0.0]
            if kept:
                h = np.asarray([e[0] for e in kept], dtype=np.int64)
                t = np.asarray([e[1] for e in kept], dtype=np.int64).reshape(-1, m)
                w = np.asarray([e[2] for e in kept], dtype=np.float64)
            else:
                h = np.empty(0, dtype=np.int64)
                t = np.empty((0, m), dtype=np.int64)
                w = np.empty(0, dtype=np.float64)
            heads.append(h)
            tails.append(t)
            weights.append(w)
        return cls(n, max_order, convention, heads, tails, weights)

    def __post_init__(self):
        if len(self.heads) != self.max_order:
            raise StructuralError("need one edge array per order")
        for m in range(1, self.max_order + 1):
            h, t, w = self.heads[m - 1], self.tails[m - 1], self.weights[m - 1]
            if t.shape != (len(h), m) or len(w) != len(h):
                raise StructuralError(f"inconsistent edge arrays for order {m}")
            if len(w) and (not np.all(np.isfinite(w)) or np.any(w < 0)):
                raise StructuralError("weights must be finite and nonnegative")
            if len(h) and (
                h.min() < 0 or h.max() >= self.n or t.min() < 0 or t.max() >= self.n
            ):
                raise StructuralError("vertex index out of range")

    def n_edges(self, m: int) -> int:
        return len(self.heads[m - 1])

    # -- cached linear-algebra views -------------------------------------

    @property
    def matrix(self) -> sp.csr_matrix:
        """Order-1 weights as an (n, n) CSR matrix (rows = heads)."""
        if not hasattr(self, "_matrix"):
            h, t, w = self.heads[0], self.tails[0], self.weights[0]
            self._matrix = sp.csr_matrix(
                (w, (h, t[:, 0])), shape=(self.n, self.n)
            )
        return self._matrix

    @property
    def matrix_csc(self) -> sp.csc_matrix:
        if not hasattr(self, "_matrix_csc"):
            self._matrix_csc = self.matrix.tocsc()
        return self._matrix_csc

    def head_incidence(self, m: int) -> sp.csr_matrix:
        """(n, E_m) CSR with a 1 in row head(e), used to aggregate per-edge terms."""
        if not hasattr(self, "_head_inc"):
            self._head_inc = {}
        if m not in self._head_inc:
            h = self.heads[m - 1]
            e = len(h)
            self._head_inc[m] = sp.csr_matrix(
                (np.ones(e), (h, np.arange(e))), shape=(self.n, e)
            )
        return self._head_inc[m]

    @property
    def delta(self) -> np.ndarray:
        """Normalized in-degrees, shape (max_order, n): delta[m-1, i]."""
        if not hasattr(self, "_delta"):
            d = np.zeros((self.max_order, self.n))
            for m in range(1, self.max_order + 1):
                np.add.at(d[m - 1], self.heads[m - 1], self.weights[m - 1])
            self._delta = d
        return self._delta

    @property
    def delta_out(self) -> np.ndarray:
        """Normalized out-degrees (order 1 only), shape (n,)."""
        if not hasattr(self, "_delta_out"):
            d = np.zeros(self.n)
            np.add.at(d, self.tails[0][:, 0], self.weights[0])
            self._delta_out = d
        return self._delta_out

    @property
    def w_max(self) -> float:
        return max(
            (float(w.max()) for w in self.weights if len(w)), default=0.0
        )

    def structure_hash(self) -> str:
        """Stable content hash used to detect mismatched instances."""
        import hashlib

        hsh = hashlib.sha256()
        hsh.update(f"{self.n} {self.max_order} {self.convention}".encode())
        for m in range(1, self.max_order + 1):
            hsh.update(self.heads[m - 1].tobytes())
            hsh.update(self.tails[m - 1].tobytes())
            hsh.update(self.weights[m - 1].tobytes())
        return hsh.hexdigest()


# ---------------------------------------------------------------------------
# normalization and reports


def _raw_degree_arrays(raw: RawHypergraph):
    """Unweighted in-degrees d[m-1, i] per eq. d(i) = (1/m!) sum_j̄ a."""
    d = np.zeros((raw.max_order, raw.n))
    for m, entries in raw.edges.items():
        fact = math.factorial(m)
        for head, _tail, a in entries:
            d[m - 1, head] += a / fact
    return d


def normalize(raw: RawHypergraph, convention: int) -> WeightedHypergraph:
    """Apply convention 1 or 2 to raw adjacency multiplicities.

    Zero denominators (a vertex or order with no edges) give zero weights.
    """
    if convention not in (1, 2):
        raise ParameterError("convention must be 1 or 2")
    d = _raw_degree_arrays(raw)
    d_bar = d.mean(axis=1)
    entries_per_order: dict[int, list] = {}
    for m, edge_list in raw.edges.items():
        fact = math.factorial(m)
        out = []
        for head, tail, a in edge_list:
            denom = fact * (d_bar[m - 1] if convention == 1 else d[m - 1, head])
            w = a / denom if denom > 0 else 0.0
            out.append((head, tuple(tail), w))
        entries_per_order[m] = out
    h = WeightedHypergraph.from_edge_lists(
        raw.n, raw.max_order, str(convention), entries_per_order
    )
    h._raw_degrees = d  # kept so degree_report can echo the unweighted counts
    return h


@dataclass(frozen=True)
class DegreeReport:
    """Raw and normalized degree statistics.

    ``d``/``d_bar`` are the unweighted in-degrees (only available when the
    weighted hypergraph was produced by :func:`normalize`, or when called
    on a raw hypergraph); ``delta`` holds the weighted in-degrees and
    ``delta_out`` the order-1 weighted out-degrees.
    """

    d: np.ndarray | None            # (max_order, n) or None
    d_bar: np.ndarray | None        # (max_order,) or None
    delta: np.ndarray | None        # (max_order, n) or None
    delta_out: np.ndarray | None    # (n,) or None


def degree_report(h: WeightedHypergraph | RawHypergraph) -> DegreeReport:
    if isinstance(h, RawHypergraph):
        d = _raw_degree_arrays(h)
        return DegreeReport(d=d, d_bar=d.mean(axis=1), delta=None, delta_out=None)
    d = getattr(h, "_raw_degrees", None)
    return DegreeReport(
        d=d,
        d_bar=None if d is None else d.mean(axis=1),
        delta=h.delta.copy(),
        delta_out=h.delta_out.copy(),
    )


@dataclass(frozen=True)
class RegularityReport:
    """Quantities entering the weight-regularity assumptions.

    ``sloop_weight[i, m-1]`` is the total weight of order-m tails at head i
    that repeat a vertex; ``sloop_ratio`` is the empirical constant R such
    that every secondary-loop weight is <= R * sqrt(w_max).  ``mu`` and
    ``frobenius_sq`` are order-1 quantities: mu_i = sqrt(sum_j w_ij^2) and
    frobenius_sq = (1/n) * sum_ij w_ij^2 = (1/n) * ||mu||_2^2.
    """

    w_max: float
    delta_max: float
    delta_max_out: float
    sloop_weight: np.ndarray        # (n, max_order)
    sloop_ratio: float
    mu: np.ndarray                  # (n,)
    frobenius_sq: float


def regularity_report(h: WeightedHypergraph) -> RegularityReport:
    sloop = np.zeros((h.n, h.max_order))
    for m in range(2, h.max_order + 1):
        t = h.tails[m - 1]
        if not len(t):
            continue
        rep = np.zeros(len(t), dtype=bool)
        for a in range(m):
            for b in range(a + 1, m):
                rep |= t[:, a] == t[:, b]
        if rep.any():
            np.add.at(sloop[:, m - 1], h.heads[m - 1][rep], h.weights[m - 1][rep])
    w_max = h.w_max
    ratio = float(sloop.max() / math.sqrt(w_max)) if w_max > 0 else 0.0
    w1 = h.weights[0]
    mu_sq = np.zeros(h.n)
    np.add.at(mu_sq, h.heads[0], w1 * w1)
    mu = np.sqrt(mu_sq)
    return RegularityReport(
        w_max=w_max,
        delta_max=float(h.delta.max()) if h.n else 0.0,
        delta_max_out=float(h.delta_out.max()) if h.n else 0.0,
        sloop_weight=sloop,
        sloop_ratio=ratio,
        mu=mu,
        frobenius_sq=float(mu_sq.sum() / h.n),
    )


# ---------------------------------------------------------------------------
# neighborhood aggregation (shared by the ODE and stochastic layers)


def neighborhood_sums(h: WeightedHypergraph, Z: np.ndarray) -> list[np.ndarray]:
    """Per-order weighted neighborhood tensors of a vertex-state matrix.

    Given Z of shape (n, K), returns one (n, K**m) array per order m with

        out[i, (s_1..s_m)] = sum over edges (i, j̄) of w * prod_l Z[j_l, s_l]

    where the tuple (s_1..s_m) is flattened in row-major (s_1 slowest)
    order.  With K = |S| and Z the occupancy probabilities this is the
    mean-field neighborhood; with Z a one-hot state encoding it is the
    empirical neighborhood.
    """
    n, K = Z.shape
    out = []
    for m in range(1, h.max_order + 1):
        if m == 1:
            out.append(h.matrix @ Z)
            continue
        t = h.tails[m - 1]
        if not len(t):
            out.append(np.zeros((n, K**m)))
            continue
        P = Z[t[:, 0]]
        for l in range(1, m):
            P = (P[:, :, None] * Z[t[:, l]][:, None, :]).reshape(len(t), -1)
        out.append(h.head_incidence(m) @ (h.weights[m - 1][:, None] * P))
    return out


def neighborhood_sums_derivative(
    h: WeightedHypergraph, Z: np.ndarray, Zdot: np.ndarray
) -> list[np.ndarray]:
    """Time derivative of :func:`neighborhood_sums` by the product rule."""
    n, K = Z.shape
    out = []
    for m in range(1, h.max_order + 1):
        if m == 1:
            out.append(h.matrix @ Zdot)
            continue
        t = h.tails[m - 1]
        if not len(t):
            out.append(np.zeros((n, K**m)))
            continue
        acc = np.zeros((len(t), K**m))
        for slot in range(m):
            P = (Zdot if slot == 0 else Z)[t[:, 0]]
            for l in range(1, m):
                F = (Zdot if slot == l else Z)[t[:, l]]
                P = (P[:, :, None] * F[:, None, :]).reshape(len(t), -1)
            acc += P
        out.append(h.head_incidence(m) @ (h.weights[m - 1][:, None] * acc))
    return out


def scale_orders(h: WeightedHypergraph, factors: Sequence[float]) -> WeightedHypergraph:
    """Multiply all order-m weights by factors[m-1] (importance weighting)."""
    if len(factors) != h.max_order:
        raise ParameterError("need one factor per order")
    if any(f < 0 for f in factors):
        raise ParameterError("factors must be nonnegative")
    return WeightedHypergraph(
        h.n,
        h.max_order,
        CONVENTION_EXPLICIT,
        [a.copy() for a in h.heads],
        [a.copy() for a in h.tails],
        [w * f for w, f in zip(h.weights, factors)],
    )


# ---------------------------------------------------------------------------
# generators


def _ring_raw(n: int, k: int) -> RawHypergraph:
    if not 1 <= k < (n + 1) // 2:
        raise ParameterError(f"ring needs 1 <= k < n/2, got k={k}, n={n}")
    edges = []
    for i in range(n):
        for off in range(1, k + 1):
            edges.append((i, ((i + off) % n,), 1.0))
            edges.append((i, ((i - off) % n,), 1.0))
    return RawHypergraph(n, 1, {1: edges})


def _complete_raw(n: int, max_order: int) -> RawHypergraph:
    """All loop-free edges: tails are tuples of distinct vertices != head."""
    from itertools import permutations

    edges: dict[int, list] = {}
    for m in range(1, max_order + 1):
        lst = []
        for i in range(n):
            others = [j for j in range(n) if j != i]
            for tail in permutations(others, m):
                lst.append((i, tail, 1.0))
        edges[m] = lst
    return RawHypergraph(n, max_order, edges)


def _dense_pairs(n: int, loops: bool):
    """(heads, tails) arrays for all ordered vertex pairs, optionally with i=j."""
    heads = np.repeat(np.arange(n, dtype=np.int64), n)
    tails = np.tile(np.arange(n, dtype=np.int64), n)
    if not loops:
        keep = heads != tails
        heads, tails = heads[keep], tails[keep]
    return heads, tails.reshape(-1, 1)


def _complete_graph(n: int, convention: int) -> WeightedHypergraph:
    """Loop-free complete graph; both conventions give w = 1/(n-1)."""
    heads, tails = _dense_pairs(n, loops=False)
    w = np.full(len(heads), 1.0 / (n - 1))
    return WeightedHypergraph(n, 1, str(convention), [heads], [tails], [w])


def _dense_tuples(n: int, m: int):
    """(heads, tails) arrays for all of [n] x [n]^m, head-major."""
    reps = n**m
    heads = np.repeat(np.arange(n, dtype=np.int64), reps)
    base = np.empty((reps, m), dtype=np.int64)
    idx = np.arange(reps)
    for l in range(m):
        base[:, l] = (idx // n ** (m - 1 - l)) % n
    tails = np.tile(base, (n, 1))
    return heads, tails


def _mean_field_weights(n: int, max_order: int) -> WeightedHypergraph:
    """Idealized well-mixed weights w = 1/n^m on every (head, tail) tuple."""
    heads, tails, weights = [], [], []
    for m in range(1, max_order + 1):
        hd, tl = _dense_tuples(n, m)
        heads.append(hd)
        tails.append(tl)
        weights.append(np.full(len(hd), 1.0 / n**m))
    return WeightedHypergraph(n, max_order, CONVENTION_EXPLICIT, heads, tails, weights)


def _annealed_weights(degrees, convention: int) -> WeightedHypergraph:
    """Expected configuration-model weights, normalized.

    ``degrees`` is (n,) for graphs or (max_order, n) for hypergraphs.  The
    expected adjacency <a>(i, j̄) = m! d(i) prod_r d(j_r) / (d̄ n)^m is
    normalized with the prescribed mean degree; all tuples over [n]^m are
    kept, matching the identity sum_j̄ <a> / m! = d(i) exactly.  Only
    convention 1 is defined for orders m >= 2.
    """
    from itertools import product

    deg = np.atleast_2d(np.asarray(degrees, dtype=float))
    M, n = deg.shape
    if np.any(deg < 0):
        raise ParameterError("degrees must be nonnegative")
    if convention not in (1, 2):
        raise ParameterError("convention must be 1 or 2")
    if convention == 2 and M > 1:
        raise ParameterError("annealed hypergraphs support convention 1 only")
    heads, tails, weights = [], [], []
    for m in range(1, M + 1):
        d = deg[m - 1]
        d_bar = d.mean()
        hd, tl = _dense_tuples(n, m)
        if d_bar == 0:
            w = np.zeros(len(hd))
        elif convention == 1:
            w = d[hd] * np.prod(d[tl], axis=1) / (d_bar ** (m + 1) * n**m)
        else:  # convention 2, m == 1
            w = np.where(d[hd] > 0, d[tl[:, 0]] / (d_bar * n), 0.0)
        keep = w != 0.0
        heads.append(hd[keep])
        tails.append(tl[keep])
        weights.append(w[keep])
    return WeightedHypergraph(n, M, str(convention), heads, tails, weights)


def _activity_weights(activities) -> WeightedHypergraph:
    """w(i, j̄) = (a(i) + sum_r a(j_r)) / n^m from per-order activity rates."""
    act = np.atleast_2d(np.asarray(activities, dtype=float))
    M, n = act.shape
    if np.any(act < 0) or not np.all(np.isfinite(act)):
        raise ParameterError("activities must be finite and nonnegative")
    heads, tails, weights = [], [], []
    for m in range(1, M + 1):
        a = act[m - 1]
        hd, tl = _dense_tuples(n, m)
        w = (a[hd] + np.sum(a[tl], axis=1)) / n**m
        keep = w != 0.0
        heads.append(hd[keep])
        tails.append(tl[keep])
        weights.append(w[keep])
    return WeightedHypergraph(n, M, CONVENTION_EXPLICIT, heads, tails, weights)


def _block_weights(sizes, tilde_w) -> WeightedHypergraph:
    """Ideal metapopulation graph: w_ij = tilde_w[g(i), g(j)], no loops."""
    sizes = [int(s) for s in sizes]
    tw = np.asarray(tilde_w, dtype=float)
    K = len(sizes)
    if tw.shape != (K, K):
        raise ParameterError("tilde_w must be (K, K)")
    if any(s <= 0 for s in sizes):
        raise ParameterError("block sizes must be positive")
    n = sum(sizes)
    group = np.repeat(np.arange(K), sizes)
    heads, tails = _dense_pairs(n, loops=False)
    w = tw[group[heads], group[tails[:, 0]]]
    keep = w != 0.0
    return WeightedHypergraph(
        n, 1, CONVENTION_EXPLICIT, [heads[keep]], [tails[keep]], [w[keep]]
    )


def generate(family: str, params: Mapping, seed: int | None = None) -> WeightedHypergraph:
    """Build one of the named network families.

    Families: ``ring`` (n, k, convention), ``complete`` (n, max_order,
    convention), ``mean_field`` (n, max_order; the 1/n^m complete weights),
    ``annealed`` (degrees, convention), ``activity`` (activities),
    ``block`` (sizes, tilde_w).  All families are deterministic; ``seed``
    only matters for parameter sampling done by callers.
    """
    p = dict(params)
    fam = family.lower()
    if fam == "ring":
        conv = int(p.pop("convention", 1))
        return normalize(_ring_raw(int(p.pop("n")), int(p.pop("k"))), conv)
    if fam == "complete":
        conv = int(p.pop("convention", 1))
        n = int(p.pop("n"))
        max_order = int(p.pop("max_order", 1))
        if max_order == 1:
            return _complete_graph(n, conv)
        return normalize(_complete_raw(n, max_order), conv)
    if fam == "mean_field":
        return _mean_field_weights(int(p.pop("n")), int(p.pop("max_order", 1)))
    if fam == "annealed":
        return _annealed_weights(p.pop("degrees"), int(p.pop("convention", 1)))
    if fam == "activity":
        return _activity_weights(p.pop("activities"))
    if fam == "block":
        return _block_weights(p.pop("sizes"), p.pop("tilde_w"))
    raise ParameterError(f"unknown network family {family!r}")


# ---------------------------------------------------------------------------
# file format: header "N M convention", then "m i j1 ... jm weight" (1-based)


def write_hypergraph(h: WeightedHypergraph, path, header_comment: str | None = None):
    conv = {"1": "1", "2": "2", CONVENTION_EXPLICIT: "0"}[h.convention]
    with open(path, "w") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        f.write(f"{h.n} {h.max_order} {conv}\n")
        for m in range(1, h.max_order + 1):
            for head, tail, w in zip(h.heads[m - 1], h.tails[m - 1], h.weights[m - 1]):
                verts = " ".join(str(v + 1) for v in [head, *tail])
                f.write(f"{m} {verts} {float(w):.17g}\n")


def read_hypergraph(path) -> WeightedHypergraph:
    entries: dict[int, list] = {}
    header = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if header is None:
                header = (int(parts[0]), int(parts[1]), parts[2])
                continue
            m = int(parts[0])
            verts = [int(v) - 1 for v in parts[1 : m + 2]]
            w = float(parts[m + 2])
            entries.setdefault(m, []).append((verts[0], tuple(verts[1:]), w))
    if header is None:
        raise StructuralError(f"{path}: empty hypergraph file")
    n, max_order, conv_code = header
    conv = {"1": "1", "2": "2", "0": CONVENTION_EXPLICIT}[conv_code]
    return WeightedHypergraph.from_edge_lists(n, max_order, conv, entries)
