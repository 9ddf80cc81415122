import numpy as np
import pytest

from hypermf.hypergraph import RawHypergraph, WeightedHypergraph, normalize


def random_raw_graph(rng, n, p=0.3, ensure_in_edges=True) -> RawHypergraph:
    """Directed Bernoulli graph; optionally guarantees one in-edge everywhere."""
    a = rng.random((n, n)) < p
    np.fill_diagonal(a, False)
    if ensure_in_edges:
        for i in range(n):
            if not a[i].any():
                j = (i + 1 + rng.integers(n - 1)) % n
                a[i, j] = True
    edges = [(i, (j,), 1.0) for i in range(n) for j in range(n) if a[i, j]]
    return RawHypergraph(n, 1, {1: edges})


def random_raw_hypergraph(rng, n, n_edges_per_order, max_order=2) -> RawHypergraph:
    """Random ordered hyperedges, duplicates in tails allowed for m >= 2."""
    edges = {}
    for m in range(1, max_order + 1):
        lst = []
        for _ in range(n_edges_per_order):
            head = int(rng.integers(n))
            tail = tuple(int(v) for v in rng.integers(n, size=m))
            if m == 1 and tail[0] == head:
                tail = ((head + 1) % n,)
            lst.append((head, tail, 1.0))
        edges[m] = lst
    return RawHypergraph(n, max_order, edges)


def three_uniform_conv2(rng, n, n_edges) -> WeightedHypergraph:
    """Random 3-uniform hypergraph (order-2 tails only) under convention 2."""
    lst = []
    for _ in range(n_edges):
        head = int(rng.integers(n))
        tail = tuple(int(v) for v in rng.integers(n, size=2))
        lst.append((head, tail, 1.0))
    raw = RawHypergraph(n, 2, {1: [], 2: lst})
    return normalize(raw, 2)


def onehot_rows(states, n_states) -> np.ndarray:
    states = np.asarray(states, dtype=int)
    z = np.zeros((len(states), n_states))
    z[np.arange(len(states)), states] = 1.0
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
