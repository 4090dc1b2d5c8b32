import math

import numpy as np
import pytest
from scipy import integrate, optimize

from jetsmc.core import GinkgoParams, Topology, grad_lambda_tree_log_likelihood, tree_log_likelihood
from jetsmc.errors import FitAborted
from jetsmc.exact import trellis_log_marginal
from jetsmc.sim import default_root, lorentz_boost, sample_unit_sphere, two_body_decay
from jetsmc.variational import (
    FitStep,
    FitTrace,
    OptimizerConfig,
    VariationalParams,
    draw_particle_rates,
    elbo_and_grad,
    elbo_estimate,
    fit,
    grad_elbo,
)

PAIR_ROOT = default_root(100.0, 400.0)
PAIR_CUT = 100.0


def two_leaf_jets(n, seed=0):
    """Jets whose root splits once into two stable children."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        t_l, t_r = rng.uniform(0, PAIR_CUT, 2)
        if math.sqrt(t_l) + math.sqrt(t_r) >= 20.0:
            continue
        a, b = two_body_decay(400.0, t_l, t_r, sample_unit_sphere(rng))
        out.append((np.array([lorentz_boost(a, PAIR_ROOT), lorentz_boost(b, PAIR_ROOT)]), PAIR_CUT))
    return out


def pair_loglik(leaves, lambdas):
    return tree_log_likelihood(Topology([2, 2, -1], leaves), GinkgoParams(lambdas, PAIR_CUT, PAIR_ROOT))


def central_difference(func, x, rel_step=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(len(x)):
        h = rel_step * max(abs(x[i]), 1.0)
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (func(up) - func(dn)) / (2 * h)
    return out


@pytest.fixture(scope="module")
def pairs():
    return two_leaf_jets(10)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            VariationalParams.point([0.0])
        with pytest.raises(ValueError):
            VariationalParams.point([1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            VariationalParams.pseudo([0.0], [0.0], sigma0=-1.0)
        with pytest.raises(ValueError):
            VariationalParams("other", lambda_hat=[1.0])

    def test_active_round_trip(self):
        vp = VariationalParams.pseudo([0.1, 0.2], -1.0)
        np.testing.assert_array_equal(vp.active(), [0.1, 0.2, -1.0, -1.0])
        assert vp.with_active([1, 2, 3, 4]).mu_tilde.tolist() == [1, 2]
        assert vp.n_rates == 2

    def test_rate_draws_deterministic(self):
        vp = VariationalParams.pseudo([0.3], -0.5)
        eps_a, lam_a = draw_particle_rates(vp, 64, 9)
        eps_b, lam_b = draw_particle_rates(vp, 64, 9)
        np.testing.assert_array_equal(lam_a, lam_b)
        np.testing.assert_allclose(lam_a, np.exp(0.3 + math.exp(-0.5) * eps_a))
        assert not np.array_equal(draw_particle_rates(vp, 64, 10)[1], lam_a)

    def test_trace_steps_strictly_increase(self):
        trace = FitTrace()
        trace.append(FitStep(0, 1.0, np.ones(1), 0.0, 0.0))
        with pytest.raises(ValueError):
            trace.append(FitStep(0, 1.0, np.ones(1), 0.0, 0.0))


class TestPointMode:
    @pytest.mark.parametrize("algorithm", ["csmc", "ncsmc"])
    def test_two_leaf_elbo_is_exact(self, pairs, algorithm):
        vp = VariationalParams.point([1.3])
        want = np.mean([pair_loglik(leaves, (1.3,)) for leaves, _ in pairs])
        for seed in (0, 1):
            value, grad = elbo_and_grad(pairs, vp, 8, algorithm, seed)
            assert value == pytest.approx(want, rel=1e-13)
        want_grad = np.mean([grad_lambda_tree_log_likelihood(Topology([2, 2, -1], leaves),
                                                             GinkgoParams((1.3,), PAIR_CUT, PAIR_ROOT))
                             for leaves, _ in pairs], axis=0)
        np.testing.assert_allclose(grad, want_grad, rtol=1e-12)

    @pytest.mark.parametrize("algorithm", ["csmc", "ncsmc"])
    def test_gradient_matches_finite_difference(self, small_jets, hr_jets, algorithm):
        rng = np.random.default_rng(21)
        for trial in range(10):
            jets = hr_jets[:3] if trial % 2 else small_jets[:3]
            d = len(jets[0].params.lambdas)
            lam = rng.uniform(0.5, 4.0, d)
            vp = VariationalParams.point(lam)
            g = grad_elbo(jets, vp, 16, algorithm, trial)
            fd = central_difference(lambda x: elbo_estimate(jets, vp.with_active(x), 16, algorithm, trial), lam)
            np.testing.assert_allclose(g, fd, rtol=1e-4)

    def test_jensen_gap(self, small_jets):
        for jet in small_jets[:4]:
            vp = VariationalParams.point(jet.params.lambdas)
            exact = trellis_log_marginal(jet.leaves, jet.params)
            vals = np.array([elbo_estimate([jet], vp, 8, "csmc", s) for s in range(50)])
            assert vals.mean() <= exact + 3 * vals.std() / math.sqrt(len(vals))

    def test_two_leaf_fit_matches_golden_section(self, pairs):
        def neg_mean(lam):
            return -np.mean([pair_loglik(leaves, (lam,)) for leaves, _ in pairs])

        oracle = optimize.minimize_scalar(neg_mean, bracket=(0.1, 1.0, 5.0), method="golden", tol=1e-10).x
        vp, trace = fit(pairs, VariationalParams.point([0.7]), 4, "ncsmc",
                        OptimizerConfig(steps=300, step_size=0.5), seed=3)
        assert abs(vp.lambda_hat[0] - oracle) < 1e-2
        assert [s.step for s in trace] == list(range(300))

    def test_objective_rises_during_training(self, small_jets):
        jets = small_jets + small_jets[:2]
        _, trace = fit(jets, VariationalParams.point([6.0]), 16, "ncsmc",
                       OptimizerConfig(steps=30, step_size=0.05), seed=5)
        blocks = trace.objectives.reshape(3, 10).mean(axis=1)
        assert np.all(np.diff(blocks) >= 0)

    def test_abort_on_nonfinite(self, pairs):
        with pytest.raises(FitAborted):
            fit(pairs, VariationalParams.point([1.0]), 4, "csmc",
                OptimizerConfig(steps=5, step_size=1e4, clip_norm=None), seed=0)

    def test_workers_do_not_change_result(self, small_jets):
        vp = VariationalParams.point([1.5])
        a = elbo_and_grad(small_jets[:4], vp, 16, "ncsmc", 2, jobs=1)
        b = elbo_and_grad(small_jets[:4], vp, 16, "ncsmc", 2, jobs=2)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])


class TestPseudoMarginal:
    @pytest.mark.parametrize("algorithm", ["csmc", "ncsmc"])
    def test_gradient_matches_finite_difference(self, small_jets, hr_jets, algorithm):
        rng = np.random.default_rng(22)
        for trial in range(10):
            jets = hr_jets[:3] if trial % 2 else small_jets[:3]
            d = len(jets[0].params.lambdas)
            vp = VariationalParams.pseudo(rng.uniform(-0.5, 1.2, d), rng.uniform(-2.0, -0.3, d),
                                          mu0=rng.uniform(-0.5, 0.5), sigma0=rng.uniform(0.5, 1.5))
            g = grad_elbo(jets, vp, 16, algorithm, trial)
            fd = central_difference(lambda x: elbo_estimate(jets, vp.with_active(x), 16, algorithm, trial),
                                    vp.active())
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)

    def test_sigma_gradient_without_topology(self):
        single = [(np.array([[5.0, 0.0, 0.0, 1.0]]), 30.0)]
        vp = VariationalParams.pseudo([0.8], [-0.7])
        g = grad_elbo(single, vp, 32, "ncsmc", 4)
        fd = central_difference(lambda x: elbo_estimate(single, vp.with_active(x), 32, "ncsmc", 4), vp.active())
        assert abs(g[1]) > 1e-3
        np.testing.assert_allclose(g, fd, rtol=1e-5)

    def test_prior_proposal_matches_quadrature(self, pairs):
        leaves, _ = pairs[0]
        prior_mu, prior_sigma = 0.5, 0.5

        def integrand(eta):
            density = math.exp(-0.5 * ((eta - prior_mu) / prior_sigma) ** 2) / (prior_sigma * math.sqrt(2 * math.pi))
            return math.exp(pair_loglik(leaves, (math.exp(eta),))) * density

        exact, _ = integrate.quad(integrand, prior_mu - 10 * prior_sigma, prior_mu + 10 * prior_sigma, epsrel=1e-10)
        vp = VariationalParams.pseudo([prior_mu], [math.log(prior_sigma)], mu0=prior_mu, sigma0=prior_sigma)
        z = np.exp([elbo_estimate([(leaves, PAIR_CUT)], vp, 256, "ncsmc", s) for s in range(100)])
        assert z.mean() == pytest.approx(exact, rel=0.05)

    def test_prior_proposal_matches_quadrature_three_leaves(self, small_jets):
        jet = min(small_jets, key=lambda j: j.n_leaves)
        prior_mu, prior_sigma = 0.4, 0.3

        def integrand(eta):
            density = math.exp(-0.5 * ((eta - prior_mu) / prior_sigma) ** 2) / (prior_sigma * math.sqrt(2 * math.pi))
            return math.exp(trellis_log_marginal(jet.leaves, jet.params.with_lambdas([math.exp(eta)]))) * density

        exact, _ = integrate.quad(integrand, prior_mu - 8 * prior_sigma, prior_mu + 8 * prior_sigma, epsrel=1e-8)
        vp = VariationalParams.pseudo([prior_mu], [math.log(prior_sigma)], mu0=prior_mu, sigma0=prior_sigma)
        z = np.exp([elbo_estimate([jet], vp, 512, "ncsmc", s) for s in range(100)])
        assert z.mean() == pytest.approx(exact, rel=0.05)

    def test_deterministic(self, hr_jets):
        vp = VariationalParams.pseudo([1.0, 0.4], [-1.0, -1.0])
        a = elbo_and_grad(hr_jets[:2], vp, 16, "ncsmc", 7)
        b = elbo_and_grad(hr_jets[:2], vp, 16, "ncsmc", 7)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_fit_moves_toward_data(self, hr_jets):
        vp0 = VariationalParams.pseudo([0.0, 0.0], [-1.0, -1.0])
        vp, trace = fit(hr_jets, vp0, 16, "ncsmc", OptimizerConfig(steps=20, step_size=0.05), seed=1)
        assert len(trace) == 20 and trace.params.shape == (20, 4)
        assert trace.objectives[-5:].mean() > trace.objectives[:5].mean()
