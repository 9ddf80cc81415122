import numpy as np
import pytest

from hypermf.errors import InputError, ParameterError
from hypermf.hypergraph import (
    RawHypergraph,
    WeightedHypergraph,
    generate,
    normalize,
)
from hypermf.meanfield import (
    PartitionSpec,
    activity_solve,
    hmfa_solve,
    imfa_solve,
    metapop_reduce,
    metapop_solve,
    nimfa_solve,
    partition_reduce,
)
from hypermf.models import glauber_model, majority_model, sis_model, voter_model

from conftest import random_raw_graph, three_uniform_conv2
from oracles import reference_ode

TIGHT = dict(rtol=1e-12, atol=1e-14)
FINE = dict(rtol=1e-11, atol=1e-13)


def empty_graph(n):
    return WeightedHypergraph.from_edge_lists(n, 1, "explicit", {})


class TestNimfaBasics:
    def test_isolated_vertex_decay(self):
        model = sis_model([2.0], 1.0)
        sol = nimfa_solve(
            empty_graph(1), model, np.array([[0.0, 1.0]]), 3.0, rtol=1e-10, atol=1e-12
        )
        ts = np.linspace(0, 3, 13)
        z = sol.z(ts)[:, 0, 1]
        assert np.max(np.abs(z - np.exp(-ts))) < 1e-8

    def test_invalid_initial_condition(self):
        model = sis_model([2.0], 1.0)
        with pytest.raises(ParameterError):
            nimfa_solve(empty_graph(2), model, np.array([[0.5, 0.6]] * 2), 1.0)

    def test_endemic_fixed_point(self):
        # steady state of dz = -z + 2(1-z) z on a unit-degree regular graph
        h = generate("ring", dict(n=40, k=3), None)
        model = sis_model([2.0], 1.0)
        sol = nimfa_solve(h, model, np.tile([0.1, 0.9], (40, 1)), 20.0)
        assert np.allclose(sol.z(20.0)[:, 1], 0.5, atol=1e-4)

    def test_against_scipy_reference(self, rng):
        raw = random_raw_graph(rng, 12)
        h = normalize(raw, 1)
        model = sis_model([1.7], 0.8)
        z0 = np.tile([0.4, 0.6], (12, 1))
        sol = nimfa_solve(h, model, z0, 4.0, **FINE)
        W = h.matrix.toarray()

        def rhs(t, y):
            z = y.reshape(12, 2)
            zeta_inf = W @ z[:, 1]
            dz1 = -0.8 * z[:, 1] + 1.7 * z[:, 0] * zeta_inf
            return np.stack([-dz1, dz1], axis=1).ravel()

        ts = np.linspace(0, 4, 9)
        ref = reference_ode(rhs, z0.ravel(), ts).reshape(9, 12, 2)
        assert np.max(np.abs(sol.z(ts) - ref)) < 1e-8

    def test_zeta_accessor_matches_definition(self, rng):
        raw = random_raw_graph(rng, 10)
        h = normalize(raw, 1)
        model = sis_model([2.0], 1.0)
        sol = nimfa_solve(h, model, np.tile([0.3, 0.7], (10, 1)), 1.0)
        zeta = sol.zeta(0.5)
        assert np.allclose(zeta[0], h.matrix @ sol.z(0.5), atol=1e-12)


class TestSimplexInvariance:
    @pytest.mark.parametrize(
        "model",
        [
            sis_model([2.0], 1.0),
            glauber_model([1.0], [-1.0], 1.5),
            voter_model(1.3),
            majority_model(1),
        ],
        ids=lambda m: m.name,
    )
    def test_random_graph(self, model, rng):
        h = normalize(random_raw_graph(rng, 30), 2)
        z0 = np.tile([0.25, 0.75], (30, 1))
        sol = nimfa_solve(h, model, z0, 5.0)
        Z = sol.z(np.linspace(0, 5, 33))
        assert np.max(np.abs(Z.sum(axis=2) - 1.0)) <= 1e-8
        assert Z.min() >= -1e-8

    @pytest.mark.parametrize(
        "model",
        [
            sis_model([0.8, 1.5], 1.0),
            glauber_model([0.4, 0.3], [-0.2, 0.1], 1.0),
            majority_model(2),
        ],
        ids=lambda m: m.name,
    )
    def test_three_uniform_hypergraph(self, model, rng):
        h = three_uniform_conv2(rng, 25, 60)
        z0 = np.tile([0.6, 0.4], (25, 1))
        sol = nimfa_solve(h, model, z0, 5.0)
        Z = sol.z(np.linspace(0, 5, 33))
        assert np.max(np.abs(Z.sum(axis=2) - 1.0)) <= 1e-8
        assert Z.min() >= -1e-8


class TestHmfa:
    def test_sis_form_against_scipy(self):
        model = sis_model([2.0, 1.5], 1.0)
        u0 = np.array([0.4, 0.6])

        def rhs(t, y):
            uI = y[1]
            duI = -1.0 * uI + (1 - uI) * (2.0 * uI + 1.5 * uI**2)
            return np.array([-duI, duI])

        ts = np.linspace(0, 5, 11)
        ref = reference_ode(rhs, u0, ts)
        sol = hmfa_solve(model, u0, 5.0, **FINE)
        assert np.max(np.abs(sol.z(ts)[:, 0, :] - ref)) < 1e-9

    def test_disease_free_invariant(self):
        model = sis_model([2.0], 1.0)
        sol = hmfa_solve(model, np.array([1.0, 0.0]), 5.0)
        assert np.allclose(sol.z(5.0)[0], [1.0, 0.0], atol=1e-12)

    def test_endemic_equilibrium_is_stationary(self):
        model = sis_model([2.0], 1.0)
        sol = hmfa_solve(model, np.array([0.5, 0.5]), 10.0)
        assert np.allclose(sol.z(10.0)[0], [0.5, 0.5], atol=1e-9)


class TestRegularCollapse:
    def test_ring_convention1(self):
        h = generate("ring", dict(n=60, k=4), None)
        model = sis_model([2.0], 1.0)
        u0 = np.array([0.3, 0.7])
        full = nimfa_solve(h, model, np.tile(u0, (60, 1)), 10.0, rtol=1e-10, atol=1e-12)
        red = hmfa_solve(model, u0, 10.0, rtol=1e-10, atol=1e-12)
        ts = np.linspace(0, 10, 41)
        gap = np.abs(full.z(ts) - red.z(ts)).sum(axis=2).max()
        assert gap <= 1e-8

    def test_convention2_any_graph(self, rng):
        h = normalize(random_raw_graph(rng, 35), 2)
        model = glauber_model([1.0], [-1.0], 0.8)
        u0 = np.array([0.2, 0.8])
        full = nimfa_solve(h, model, np.tile(u0, (35, 1)), 6.0, rtol=1e-10, atol=1e-12)
        red = hmfa_solve(model, u0, 6.0, rtol=1e-10, atol=1e-12)
        ts = np.linspace(0, 6, 25)
        gap = np.abs(full.z(ts) - red.z(ts)).sum(axis=2).max()
        assert gap <= 1e-8


class TestMetapop:
    def test_reduced_weights_by_brute_force(self, rng):
        raw = random_raw_graph(rng, 12)
        h = normalize(raw, 1)
        part = np.array([0] * 5 + [1] * 7)
        reduced, z0r, sizes = metapop_reduce(h, part, np.tile([0.5, 0.5], (12, 1)))
        W = h.matrix.toarray()
        for k in range(2):
            for l in range(2):
                members_k = np.nonzero(part == k)[0]
                members_l = np.nonzero(part == l)[0]
                total = W[np.ix_(members_k, members_l)].sum()
                tilde = total / (len(members_k) * len(members_l))
                expect = len(members_l) * tilde
                got = reduced.matrix[k, l]
                assert got == pytest.approx(expect, abs=1e-14)

    def test_block_constant_exact(self):
        tw = np.array([[0.9, 0.25], [0.35, 0.6]])
        h = generate("block", dict(sizes=[14, 10], tilde_w=tw / 12), None)
        model = sis_model([1.6], 1.0)
        z0 = np.vstack([np.tile([0.2, 0.8], (14, 1)), np.tile([0.7, 0.3], (10, 1))])
        part = np.array([0] * 14 + [1] * 10)
        full = nimfa_solve(h, model, z0, 4.0, **TIGHT)
        red = metapop_solve(h, part, model, z0, 4.0, **TIGHT)
        ts = np.linspace(0, 4, 17)
        Zf = full.z(ts)
        group_means = np.stack(
            [Zf[:, :14].mean(axis=1), Zf[:, 14:].mean(axis=1)], axis=1
        )
        assert np.max(np.abs(group_means - red.z(ts))) <= 1e-10

    def test_single_group_regular_is_hmfa(self, rng):
        h = normalize(random_raw_graph(rng, 20), 2)
        reduced, _, _ = metapop_reduce(h, np.zeros(20, dtype=int),
                                       np.tile([0.5, 0.5], (20, 1)))
        assert reduced.matrix[0, 0] == pytest.approx(1.0)
        model = sis_model([2.0], 1.0)
        z0 = np.tile([0.35, 0.65], (20, 1))
        red = metapop_solve(h, np.zeros(20, dtype=int), model, z0, 5.0, **TIGHT)
        um = hmfa_solve(model, np.array([0.35, 0.65]), 5.0, **TIGHT)
        ts = np.linspace(0, 5, 11)
        assert np.max(np.abs(red.z(ts) - um.z(ts))) <= 1e-10

    def test_trivial_partition_reproduces_full(self, rng):
        raw = random_raw_graph(rng, 15)
        h = normalize(raw, 1)
        model = voter_model(1.2)
        z0 = np.tile([0.3, 0.7], (15, 1))
        z0[3] = [0.9, 0.1]
        full = nimfa_solve(h, model, z0, 3.0, **TIGHT)
        red = metapop_solve(h, np.arange(15), model, z0, 3.0, **TIGHT)
        ts = np.linspace(0, 3, 13)
        assert np.max(np.abs(full.z(ts) - red.z(ts))) <= 1e-10

    def test_hypergraph_metapop_exact(self, rng):
        # block-constant order-2 weights, uniform-within-group start
        n, sizes = 9, (4, 5)
        part = np.array([0] * 4 + [1] * 5)
        entries2 = []
        tw2 = {
            (k, (a, b)): 0.02 + 0.01 * (k + 2 * a + b)
            for k in range(2)
            for a in range(2)
            for b in range(2)
        }
        for i in range(n):
            for j1 in range(n):
                for j2 in range(n):
                    entries2.append(
                        (i, (j1, j2), tw2[(part[i], (part[j1], part[j2]))])
                    )
        h = WeightedHypergraph.from_edge_lists(n, 2, "explicit", {2: entries2})
        model = sis_model([0.0, 1.4], 0.9)
        z0 = np.vstack([np.tile([0.2, 0.8], (4, 1)), np.tile([0.6, 0.4], (5, 1))])
        full = nimfa_solve(h, model, z0, 3.0, **TIGHT)
        red = metapop_solve(h, part, model, z0, 3.0, **TIGHT)
        ts = np.linspace(0, 3, 13)
        Zf = full.z(ts)
        group_means = np.stack(
            [Zf[:, :4].mean(axis=1), Zf[:, 4:].mean(axis=1)], axis=1
        )
        assert np.max(np.abs(group_means - red.z(ts))) <= 1e-10

    def test_empty_group_rejected(self, rng):
        h = normalize(random_raw_graph(rng, 6), 1)
        with pytest.raises(ParameterError):
            metapop_reduce(h, np.array([0, 0, 0, 2, 2, 2]), np.tile([1.0, 0.0], (6, 1)))


class TestImfa:
    def test_constant_degree_equals_hmfa(self):
        model = sis_model([2.0], 1.0)
        deg = np.full(30, 6.0)
        u0 = np.array([0.4, 0.6])
        red = imfa_solve(deg, model, 1, np.tile(u0, (1, 1)), 5.0, **TIGHT)
        um = hmfa_solve(model, u0, 5.0, **TIGHT)
        ts = np.linspace(0, 5, 11)
        assert np.max(np.abs(red.z(ts)[:, 0] - um.z(ts)[:, 0])) <= 1e-10

    def test_size_biased_weights_in_rhs(self):
        # two classes {2, 4} in equal proportion: size-biased weights 1/3, 2/3
        model = sis_model([1.0], 0.0)
        deg = np.array([2.0] * 10 + [4.0] * 10)
        z0 = np.array([[0.5, 0.5], [0.9, 0.1]])
        red = imfa_solve(deg, model, 1, z0, 0.5)
        theta = (1.0 / 3) * z0[0] + (2.0 / 3) * z0[1]
        dbar = 3.0
        f0 = red.dense.fs[0].reshape(2, 2)
        for k, kdeg in enumerate((2.0, 4.0)):
            zeta_I = (kdeg / dbar) * theta[1]
            expect = z0[k, 0] * zeta_I     # infection inflow, no curing
            assert f0[k, 1] == pytest.approx(expect, abs=1e-12)

    def test_matches_metapop_on_annealed_graph(self):
        deg = np.array([2.0] * 60 + [4.0] * 60)
        h = generate("annealed", dict(degrees=deg), None)
        model = sis_model([1.8], 1.0)
        z0_class = np.array([[0.3, 0.7], [0.8, 0.2]])
        z0 = z0_class[(deg == 4.0).astype(int)]
        part = (deg == 4.0).astype(int)
        red_meta = metapop_solve(h, part, model, z0, 4.0, **FINE)
        red_imfa = imfa_solve(deg, model, 1, z0_class, 4.0, **FINE)
        ts = np.linspace(0, 4, 17)
        assert np.max(np.abs(red_meta.z(ts) - red_imfa.z(ts))) <= 1e-9

    def test_matches_metapop_convention2(self):
        deg = np.array([3.0] * 40 + [6.0] * 40)
        h = generate("annealed", dict(degrees=deg, convention=2), None)
        model = sis_model([1.5], 0.7)
        z0_class = np.array([[0.5, 0.5], [0.1, 0.9]])
        z0 = z0_class[(deg == 6.0).astype(int)]
        part = (deg == 6.0).astype(int)
        red_meta = metapop_solve(h, part, model, z0, 3.0, **FINE)
        red_imfa = imfa_solve(deg, model, 2, z0_class, 3.0, **FINE)
        ts = np.linspace(0, 3, 13)
        assert np.max(np.abs(red_meta.z(ts) - red_imfa.z(ts))) <= 1e-9

    def test_simplicial_matches_metapop(self):
        # per-order degrees; classes = degree vectors
        d1 = np.array([2.0] * 15 + [4.0] * 15)
        d2 = np.array([3.0] * 15 + [6.0] * 15)
        h = generate("annealed", dict(degrees=np.vstack([d1, d2])), None)
        model = sis_model([1.0, 2.0], 1.0)
        z0_class = np.array([[0.4, 0.6], [0.7, 0.3]])
        part = (d1 == 4.0).astype(int)
        z0 = z0_class[part]
        red_meta = metapop_solve(h, part, model, z0, 2.0, **FINE)
        red_imfa = imfa_solve(np.vstack([d1, d2]), model, 1, z0_class, 2.0, **FINE)
        ts = np.linspace(0, 2, 9)
        assert np.max(np.abs(red_meta.z(ts) - red_imfa.z(ts))) <= 1e-9

    def test_isolated_class_is_frozen_under_pure_infection(self):
        model = sis_model([2.0], 0.0)
        deg = np.array([0.0] * 5 + [3.0] * 15)
        z0 = np.array([[0.5, 0.5], [0.2, 0.8]])
        red = imfa_solve(deg, model, 1, z0, 2.0)
        assert np.allclose(red.z(2.0)[0], [0.5, 0.5], atol=1e-12)


class TestActivity:
    def test_equal_activities_match_scaled_hmfa(self):
        a = 1.25
        model = sis_model([2.0], 1.0)
        scaled = sis_model([2.0 * 2 * a], 1.0)
        u0 = np.array([0.4, 0.6])
        red = activity_solve(np.full(30, a), model, u0[None, :], 4.0, **TIGHT)
        um = hmfa_solve(scaled, u0, 4.0, **TIGHT)
        ts = np.linspace(0, 4, 9)
        assert np.max(np.abs(red.z(ts)[:, 0] - um.z(ts)[:, 0])) <= 1e-10

    def test_matches_explicit_nimfa_graph(self):
        acts = np.array([0.5] * 30 + [2.0] * 30)
        h = generate("activity", dict(activities=acts), None)
        model = sis_model([1.4], 1.0)
        z0_class = np.array([[0.3, 0.7], [0.9, 0.1]])
        part = (acts == 2.0).astype(int)
        z0 = z0_class[part]
        full = nimfa_solve(h, model, z0, 3.0, **FINE)
        red = activity_solve(acts, model, z0_class, 3.0, **FINE)
        ts = np.linspace(0, 3, 13)
        Zf = full.z(ts)
        means = np.stack([Zf[:, part == 0].mean(axis=1),
                          Zf[:, part == 1].mean(axis=1)], axis=1)
        assert np.max(np.abs(means - red.z(ts))) <= 1e-9

    def test_order2_asymmetric_tuples_match_nimfa(self):
        # majority dynamics probe the mixed state tuples of the order-2 block
        acts = np.array([0.6] * 12 + [1.8] * 12)
        h = generate("activity", dict(activities=np.vstack([acts, acts])), None)
        model = majority_model(2)
        z0_class = np.array([[0.35, 0.65], [0.8, 0.2]])
        part = (acts == 1.8).astype(int)
        z0 = z0_class[part]
        full = nimfa_solve(h, model, z0, 1.5, **FINE)
        red = activity_solve(np.vstack([acts, acts]), model, z0_class, 1.5, **FINE)
        ts = np.linspace(0, 1.5, 7)
        Zf = full.z(ts)
        means = np.stack([Zf[:, part == 0].mean(axis=1),
                          Zf[:, part == 1].mean(axis=1)], axis=1)
        assert np.max(np.abs(means - red.z(ts))) <= 1e-9

    def test_single_order_formula(self):
        # order-1 neighborhoods: a_k E[z] + psi
        acts = np.array([1.0] * 10 + [3.0] * 10)
        model = sis_model([1.0], 0.0)
        z0 = np.array([[0.5, 0.5], [0.2, 0.8]])
        red = activity_solve(acts, model, z0, 0.5)
        Emean = 0.5 * z0[0] + 0.5 * z0[1]
        psi = 0.5 * 1.0 * z0[0] + 0.5 * 3.0 * z0[1]
        f0 = red.dense.fs[0].reshape(2, 2)
        for k, a_k in enumerate((1.0, 3.0)):
            zeta_I = a_k * Emean[1] + psi[1]
            assert f0[k, 1] == pytest.approx(z0[k, 0] * zeta_I, abs=1e-12)


class TestPartition:
    def test_single_vertex_blocks_reproduce_nimfa(self, rng):
        raw = random_raw_graph(rng, 24, p=0.5)
        h = normalize(raw, 1)
        model = sis_model([2.0], 1.0)
        z0 = np.tile([0.4, 0.6], (24, 1))
        spec = PartitionSpec.from_assignment(raw, np.arange(1, 25))
        red = partition_reduce(raw, spec, model, z0, 3.0, **TIGHT)
        full = nimfa_solve(h, model, z0, 3.0, **TIGHT)
        ts = np.linspace(0, 3, 13)
        assert np.max(np.abs(red.z(ts) - full.z(ts))) <= 1e-10
        assert np.max(np.abs(red.population_mean(ts) - full.population_mean(ts))) <= 1e-10

    def test_complete_graph_partition_close_to_density(self):
        n, K = 500, 10
        raw = RawHypergraph(
            n, 1, {1: [(i, (j,), 1.0) for i in range(n) for j in range(n) if i != j]}
        )
        h = normalize(raw, 1)
        model = sis_model([2.0], 1.0)
        z0 = np.tile([0.3, 0.7], (n, 1))
        assignment = 1 + np.repeat(np.arange(K), n // K)
        spec = PartitionSpec.from_assignment(raw, assignment)
        assert spec.kappa == pytest.approx(1 / K)
        assert np.all(spec.rho <= 1.0)
        red = partition_reduce(raw, spec, model, z0, 5.0)
        full = nimfa_solve(h, model, z0, 5.0)
        ts = np.linspace(0, 5, 21)
        vbar = red.population_mean(ts)
        zbar = full.population_mean(ts)
        assert np.max(np.abs(vbar - zbar).sum(axis=1)) <= 0.02

    def test_two_community_dense_graph(self):
        rng = np.random.default_rng(7)
        n = 500
        half = n // 2
        comm = (np.arange(n) >= half).astype(int)
        p_in, p_out = 0.75, 0.25
        a = rng.random((n, n)) < np.where(comm[:, None] == comm[None, :], p_in, p_out)
        np.fill_diagonal(a, False)
        a = a | a.T
        edges = [(i, (j,), 1.0) for i in range(n) for j in range(n) if a[i, j]]
        raw = RawHypergraph(n, 1, {1: edges})
        h = normalize(raw, 1)
        model = sis_model([2.0], 1.0)
        z0 = np.vstack([np.tile([0.9, 0.1], (half, 1)), np.tile([0.2, 0.8], (half, 1))])
        spec = PartitionSpec.from_assignment(raw, 1 + comm)
        red = partition_reduce(raw, spec, model, z0, 5.0)
        full = nimfa_solve(h, model, z0, 5.0)
        ts = np.linspace(0, 5, 21)
        Zf = full.z(ts)
        means = np.stack([Zf[:, :half].mean(axis=1), Zf[:, half:].mean(axis=1)], axis=1)
        gap = np.abs(means - red.z(ts)).sum(axis=2).max()
        assert gap <= 0.05

    def test_requires_affine_model(self, rng):
        raw = random_raw_graph(rng, 12, p=0.6)
        spec = PartitionSpec.from_assignment(raw, 1 + np.arange(12) % 3)
        with pytest.raises(ParameterError):
            partition_reduce(
                raw, spec, glauber_model([1.0], [-1.0], 1.0),
                np.tile([0.5, 0.5], (12, 1)), 1.0,
            )

    def test_unequal_blocks_rejected(self, rng):
        raw = random_raw_graph(rng, 10, p=0.6)
        with pytest.raises(ParameterError):
            PartitionSpec.from_assignment(raw, np.array([1] * 4 + [2] * 6))

    def test_exceptional_block_excluded(self, rng):
        raw = random_raw_graph(rng, 12, p=0.7)
        assignment = np.array([0, 0] + [1] * 5 + [2] * 5)
        spec = PartitionSpec.from_assignment(raw, assignment)
        model = sis_model([2.0], 1.0)
        red = partition_reduce(raw, spec, model, np.tile([0.5, 0.5], (12, 1)), 1.0)
        assert red.n_groups == 2
        assert red.total_n == 12
        # density average weights each regular block by its population share
        w = red.sizes / red.total_n
        assert w.sum() == pytest.approx(10 / 12)


class TestStepControl:
    def test_halving_max_step_improves_by_order(self):
        h = generate("ring", dict(n=40, k=3), None)
        model = sis_model([2.0], 1.0)
        z0 = np.tile([0.2, 0.8], (40, 1))
        ref = nimfa_solve(h, model, z0, 2.0, **TIGHT).z(2.0)
        errs = []
        for hmax in (0.25, 0.125):
            sol = nimfa_solve(h, model, z0, 2.0, rtol=1e-2, atol=1e-2, max_step=hmax)
            errs.append(np.max(np.abs(sol.z(2.0) - ref)))
        assert errs[0] / errs[1] >= 8.0


class TestGlauberFixedPoint:
    @pytest.mark.parametrize("beta", [0.5, 3.0])
    def test_tanh_consistency(self, beta):
        h = generate("ring", dict(n=30, k=2), None)
        model = glauber_model([1.0], [-1.0], beta)
        z0 = np.tile([0.2, 0.8], (30, 1))       # biased start
        sol = nimfa_solve(h, model, z0, 60.0)
        sigma = float((2 * sol.z(60.0)[:, 1] - 1).mean())
        assert abs(sigma - np.tanh(beta * sigma / 2)) <= 1e-4
        if beta == 3.0:
            assert abs(sigma) > 0.5
