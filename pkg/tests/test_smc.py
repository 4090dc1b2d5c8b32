import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetsmc.core import Topology, tree_log_likelihood
from jetsmc.errors import DeadEndError, TotalDeathError
from jetsmc.exact import brute_force_log_marginal, trellis_log_marginal
from jetsmc.smc import (
    csmc_propose,
    csmc_weight,
    initial_state,
    logmeanexp,
    logsumexp,
    merge_pair,
    multinomial_resample,
    ncsmc_potentials,
    overcounting_log_nu,
    run_csmc,
    run_ncsmc,
    run_smc,
    valid_pairs,
)

from conftest import make_params, random_lightlike_leaves

ALGORITHMS = ("csmc", "ncsmc")


def open_leaves(n, seed=0):
    """Energetic massless leaves: every pairwise merge clears a small cut."""
    return random_lightlike_leaves(np.random.default_rng(seed), n, scale=100.0)


def expected_z(state, params, algorithm):
    """Exact single-particle expectation of the estimator by enumerating every path."""
    if len(state.trees) == 1:
        return 1.0
    if algorithm == "csmc":
        pairs = valid_pairs(state, params.t_cut)
        total = 0.0
        for i, j in pairs:
            nxt = merge_pair(state, i, j, params)
            w = math.exp(csmc_weight(state, nxt, -math.log(len(pairs))))
            total += w * expected_z(nxt, params, algorithm) / len(pairs)
        return total
    total = 0.0
    for (i, j), pot in ncsmc_potentials(state, params):
        if pot > -math.inf:
            total += math.exp(pot) * expected_z(merge_pair(state, i, j, params), params, algorithm)
    return total


class TestWeightHelpers:
    def test_logsumexp(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2))
        assert logsumexp([-np.inf, -np.inf]) == -np.inf
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2))
        np.testing.assert_allclose(logmeanexp(np.zeros((3, 4)), axis=1), 0.0)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
    def test_logsumexp_matches_direct(self, xs):
        assert logsumexp(xs) == pytest.approx(math.log(sum(math.exp(x) for x in xs)), rel=1e-12, abs=1e-12)


class TestResampling:
    def test_uniform_weights(self):
        rng = np.random.default_rng(0)
        K, draws = 10, 100_000
        idx = np.concatenate([multinomial_resample(np.zeros(K), rng) for _ in range(draws // K)])
        counts = np.bincount(idx, minlength=K)
        sd = math.sqrt(draws * (1 / K) * (1 - 1 / K))
        assert np.all(np.abs(counts - draws / K) < 3 * sd)

    def test_single_survivor(self):
        lw = np.full(8, -np.inf)
        lw[5] = -3.0
        assert np.all(multinomial_resample(lw, np.random.default_rng(1)) == 5)

    def test_two_to_one(self):
        rng = np.random.default_rng(2)
        idx = np.concatenate([multinomial_resample(np.log([2.0, 1.0]), rng) for _ in range(50_000)])
        n0 = np.sum(idx == 0)
        sd = math.sqrt(len(idx) * (2 / 3) * (1 / 3))
        assert abs(n0 - len(idx) * 2 / 3) < 3 * sd

    def test_all_dead(self):
        with pytest.raises(TotalDeathError):
            multinomial_resample(np.full(4, -np.inf), np.random.default_rng(0))

    def test_deterministic_given_uniforms(self):
        u = np.array([0.1, 0.3, 0.9])
        np.testing.assert_array_equal(multinomial_resample(np.log([1.0, 1.0, 2.0]), None, u=u), [0, 1, 2])


class TestPartialState:
    def test_rank_zero(self):
        s = initial_state(open_leaves(4))
        assert s.rank == 0 and len(s.trees) == 4 and s.log_pi == 0.0
        assert overcounting_log_nu(s) == 0.0

    def test_overcounting_examples(self):
        params = make_params(t_cut=1.0)
        s = initial_state(open_leaves(4))
        ab = merge_pair(s, 0, 1, params)
        assert overcounting_log_nu(ab) == 0.0
        ab_cd = merge_pair(ab, 1, 2, params)
        assert overcounting_log_nu(ab_cd) == pytest.approx(math.log(2))

    def test_propose_log_q(self):
        params = make_params(t_cut=1.0)
        s = initial_state(open_leaves(4))
        assert len(valid_pairs(s, params.t_cut)) == 6
        new, log_q = csmc_propose(s, params, np.random.default_rng(0))
        assert log_q == pytest.approx(-math.log(6))
        assert new.rank == 1

    def test_forced_last_merge(self):
        params = make_params(t_cut=1.0)
        s = merge_pair(merge_pair(initial_state(open_leaves(3)), 0, 1, params), 0, 1, params)
        assert len(s.trees) == 1
        two = merge_pair(initial_state(open_leaves(3)), 0, 1, params)
        _, log_q = csmc_propose(two, params, np.random.default_rng(0))
        assert log_q == 0.0

    def test_dead_end(self):
        s = initial_state(open_leaves(3))
        with pytest.raises(DeadEndError):
            csmc_propose(s, make_params(t_cut=1e9), np.random.default_rng(0))

    def test_incremental_log_pi_matches_full(self, small_jets, hr_jets):
        for jet in small_jets + hr_jets:
            rng = np.random.default_rng(jet.seed % 1000)
            s = initial_state(jet.leaves)
            while len(s.trees) > 1:
                try:
                    s, _ = csmc_propose(s, jet.params, rng)
                except DeadEndError:
                    break
                for tree in s.trees:
                    if tree.n_leaves < 2:
                        continue
                    idx = [i for i in range(jet.n_leaves) if tree.mask >> i & 1]
                    sub = Topology.from_nested(_relabel(tree.structure, idx), jet.leaves[idx])
                    sub_params = jet.params if len(s.trees) == 1 else jet.params.with_lambdas(
                        [jet.params.lambda_inner] * len(jet.params.lambdas))
                    assert abs(tree_log_likelihood(sub, sub_params) - tree.loglik) < 1e-12
            if len(s.trees) == 1:
                assert abs(s.log_pi - tree_log_likelihood(s.topology(jet.leaves), jet.params)) < 1e-12


def _relabel(structure, idx):
    if isinstance(structure, int):
        return idx.index(structure)
    return tuple(_relabel(s, idx) for s in structure)


class TestPotentials:
    def test_match_csmc_weights(self, small_jets):
        for jet in small_jets:
            s = initial_state(jet.leaves)
            for (i, j), pot in ncsmc_potentials(s, jet.params):
                if pot > -math.inf:
                    assert pot == csmc_weight(s, merge_pair(s, i, j, jet.params), 0.0)
                else:
                    assert (i, j) not in valid_pairs(s, jet.params.t_cut)

    def test_table_size(self):
        s = initial_state(open_leaves(5))
        assert len(ncsmc_potentials(s, make_params(t_cut=1.0))) == 10
        assert len(ncsmc_potentials(initial_state(open_leaves(2)), make_params(t_cut=1.0))) == 1

    def test_all_invalid(self):
        s = initial_state(open_leaves(4))
        assert all(p == -math.inf for _, p in ncsmc_potentials(s, make_params(t_cut=1e9)))


class TestExpectation:
    """The exact expectation of a one-particle estimator equals the marginal."""

    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_path_sum_is_marginal(self, small_jets, hr_jets, algorithm):
        for jet in (small_jets + hr_jets)[:8]:
            if jet.n_leaves > 5:
                continue
            want = brute_force_log_marginal(jet.leaves, jet.params)
            got = math.log(expected_z(initial_state(jet.leaves), jet.params, algorithm))
            assert got == pytest.approx(want, abs=1e-10)

    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_vectorized_single_particle_mean(self, small_jets, algorithm):
        jet = min(small_jets, key=lambda j: j.n_leaves)
        z = np.array([math.exp(run_smc(jet.leaves, jet.params, 1, s, algorithm).log_z) for s in range(4000)])
        exact = math.exp(trellis_log_marginal(jet.leaves, jet.params))
        assert abs(z.mean() - exact) < 4 * z.std() / math.sqrt(len(z))


class TestRuns:
    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_two_leaves_exact(self, algorithm):
        leaves = np.array([[30.0, 2.0, 1.0, 29.0], [20.0, -3.0, 0.5, -19.0]])
        params = make_params(t_cut=36.0)
        topo = Topology([2, 2, -1], leaves)
        for K in (1, 7, 64):
            res = run_smc(leaves, params, K, 3, algorithm)
            assert res.log_z == pytest.approx(tree_log_likelihood(topo, params), rel=1e-14)
            assert res.best_tree == topo

    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_deterministic(self, small_jets, algorithm):
        jet = small_jets[2]
        a = run_smc(jet.leaves, jet.params, 32, 11, algorithm)
        b = run_smc(jet.leaves, jet.params, 32, 11, algorithm)
        c = run_smc(jet.leaves, jet.params, 32, 12, algorithm)
        assert a.log_z == b.log_z
        np.testing.assert_array_equal(a.system.parents, b.system.parents)
        np.testing.assert_array_equal(a.system.log_weights, b.system.log_weights)
        assert not np.array_equal(a.system.log_weights, c.system.log_weights)

    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_particles_are_complete_valid_trees(self, small_jets, hr_jets, algorithm):
        for jet in small_jets + hr_jets:
            res = run_smc(jet.leaves, jet.params, 16, 5, algorithm)
            sysm = res.system
            assert sysm.log_weights.shape == (jet.n_leaves - 1, 16)
            assert np.all((sysm.ancestors >= 0) & (sysm.ancestors < 16))
            np.testing.assert_array_equal(sysm.ancestors[0], np.arange(16))
            alive = np.isfinite(sysm.log_weights[-1])
            for k in np.flatnonzero(alive):
                topo = sysm.topology(k, jet.leaves)
                assert topo.n_leaves == jet.n_leaves
                ll = tree_log_likelihood(topo, jet.params)
                assert np.isfinite(ll)
                assert abs(ll - sysm.log_pi[k]) < 1e-12
            assert res.best_log_likelihood == pytest.approx(tree_log_likelihood(res.best_tree, jet.params), abs=1e-12)
            assert res.log_z == pytest.approx(sysm.log_z_increments.sum())

    def test_ncsmc_never_dies_on_generated_jets(self, small_jets):
        for jet in small_jets:
            res = run_ncsmc(jet.leaves, jet.params, 8, 1)
            assert np.all(np.isfinite(res.system.log_weights))

    def test_total_death(self):
        with pytest.raises(TotalDeathError):
            run_csmc(open_leaves(4), make_params(t_cut=1e9), 8, 0)
        with pytest.raises(TotalDeathError):
            run_ncsmc(open_leaves(4), make_params(t_cut=1e9), 8, 0)

    def test_ncsmc_rejects_m(self, small_jets):
        with pytest.raises(ValueError):
            run_ncsmc(small_jets[0].leaves, small_jets[0].params, 8, 0, M=2)

    def test_single_leaf(self):
        res = run_csmc(np.array([[3.0, 0, 0, 1]]), make_params(), 4, 0)
        assert res.log_z == 0.0 and res.best_tree.n_leaves == 1

    def test_ncsmc_variance_below_csmc(self, small_jets):
        jet = max(small_jets, key=lambda j: j.n_leaves)
        var = {}
        for alg in ALGORITHMS:
            z = np.array([run_smc(jet.leaves, jet.params, 64, s, alg).log_z for s in range(100)])
            var[alg] = z.var()
        assert var["ncsmc"] < var["csmc"]

    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_best_particle_improves_with_k(self, algorithm):
        from jetsmc.sim import generate_dataset

        jet = generate_dataset(make_params(), 1, 41, min_leaves=10, max_leaves=12)[0]
        medians = [np.median([run_smc(jet.leaves, jet.params, K, s, algorithm).best_log_likelihood for s in range(20)])
                   for K in (8, 64, 256)]
        assert medians[0] <= medians[1] <= medians[2]
