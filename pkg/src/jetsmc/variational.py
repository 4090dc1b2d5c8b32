"""Rate estimation by stochastic gradient ascent on SMC marginal likelihoods.

Both modes share one objective, the average over jets of ``log Z_hat``:

* point estimate: every particle uses the rates ``lambda_hat``; the objective
  is a stochastic lower bound on the average log marginal likelihood.
* pseudo-marginal: each particle draws its own rates
  ``exp(mu_tilde + sigma_tilde * eps)`` once at rank 1 and keeps them; the
  rank-1 weight gains ``log p(lambda) - log q(lambda)`` for the log-normal
  prior ``p`` (``mu0``, ``sigma0``) and the log-normal proposal ``q``.

Gradients are exact derivatives of the estimator with its random numbers
held fixed (resampling and merge choices are locally constant), so they agree
with finite differences taken at the same seed.  Score-function terms from
those discrete choices are not included.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from ._rng import Seed, child_seed, stream
from .core import GinkgoParams
from .errors import FitAborted
from .smc import run_smc

POINT = "point-estimate"
PSEUDO = "pseudo-marginal"

_LAMBDA_STREAM = 31


def _vec(x, d=None) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return x.copy() if d is None else np.broadcast_to(x, (d,)).copy()


@dataclass(frozen=True)
class VariationalParams:
    """Learnable rate parameters.

    Point mode uses ``lambda_hat``; pseudo-marginal mode uses the log-normal
    proposal ``(mu_tilde, log_sigma_tilde)`` and prior ``(mu0, sigma0)``, all
    with one entry per rate.
    """

    mode: str
    lambda_hat: Optional[np.ndarray] = None
    mu_tilde: Optional[np.ndarray] = None
    log_sigma_tilde: Optional[np.ndarray] = None
    mu0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    sigma0: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.mode == POINT:
            if self.lambda_hat is None:
                raise ValueError("point mode needs lambda_hat")
            lam = _vec(self.lambda_hat)
            if np.any(~(lam > 0)):
                raise ValueError(f"rates must be positive: {lam}")
            set_("lambda_hat", lam)
            d = len(lam)
        elif self.mode == PSEUDO:
            if self.mu_tilde is None or self.log_sigma_tilde is None:
                raise ValueError("pseudo-marginal mode needs mu_tilde and log_sigma_tilde")
            mu = _vec(self.mu_tilde)
            d = len(mu)
            set_("mu_tilde", mu)
            set_("log_sigma_tilde", _vec(self.log_sigma_tilde, d))
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        if d not in (1, 2):
            raise ValueError(f"expected 1 or 2 rates, got {d}")
        set_("mu0", _vec(self.mu0, d))
        set_("sigma0", _vec(self.sigma0, d))
        if np.any(~(self.sigma0 > 0)):
            raise ValueError("sigma0 must be positive")

    @classmethod
    def point(cls, lambdas) -> "VariationalParams":
        return cls(POINT, lambda_hat=lambdas)

    @classmethod
    def pseudo(cls, mu_tilde, log_sigma_tilde, mu0=0.0, sigma0=1.0) -> "VariationalParams":
        return cls(PSEUDO, mu_tilde=mu_tilde, log_sigma_tilde=log_sigma_tilde, mu0=mu0, sigma0=sigma0)

    @property
    def n_rates(self) -> int:
        return len(self.mu0)

    @property
    def sigma_tilde(self) -> np.ndarray:
        return np.exp(self.log_sigma_tilde)

    def active(self) -> np.ndarray:
        """Parameters the gradient refers to: rates, or ``[mu_tilde, log_sigma_tilde]``."""
        if self.mode == POINT:
            return self.lambda_hat.copy()
        return np.concatenate([self.mu_tilde, self.log_sigma_tilde])

    def with_active(self, v) -> "VariationalParams":
        v = np.asarray(v, dtype=float)
        if self.mode == POINT:
            return replace(self, lambda_hat=v)
        d = self.n_rates
        return replace(self, mu_tilde=v[:d], log_sigma_tilde=v[d:])


@dataclass(frozen=True)
class FitStep:
    step: int
    objective: float
    params: np.ndarray  # active parameters before the update
    grad_norm: float
    wall_ms: float


@dataclass
class FitTrace:
    steps: list[FitStep] = field(default_factory=list)

    def append(self, rec: FitStep):
        if self.steps and rec.step <= self.steps[-1].step:
            raise ValueError("steps must be strictly increasing")
        self.steps.append(rec)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([s.objective for s in self.steps])

    @property
    def params(self) -> np.ndarray:
        return np.array([s.params for s in self.steps])


def _jet_fields(item) -> tuple[np.ndarray, float]:
    if hasattr(item, "leaves"):
        return np.asarray(item.leaves, dtype=float), float(item.t_cut)
    leaves, t_cut = item
    return np.asarray(leaves, dtype=float), float(t_cut)


def draw_particle_rates(vp: VariationalParams, K: int, seed: Seed) -> tuple[np.ndarray, np.ndarray]:
    """Standard normals ``eps`` (K, d) and rates ``exp(mu_tilde + sigma_tilde * eps)``."""
    eps = stream(seed, _LAMBDA_STREAM).standard_normal((K, vp.n_rates))
    return eps, np.exp(vp.mu_tilde + vp.sigma_tilde * eps)


def _pseudo_jet(leaves, t_cut, vp, K, seed, algorithm, track_grad):
    eps, lambdas = draw_particle_rates(vp, K, seed)
    sigma = vp.sigma_tilde
    z = (np.log(lambdas) - vp.mu0) / vp.sigma0
    # log-normal densities in log-rate space; the 1/lambda Jacobians cancel
    extra = (-0.5 * z**2 - np.log(vp.sigma0) + 0.5 * eps**2 + vp.log_sigma_tilde).sum(1)
    d_extra_d_eta = -z / vp.sigma0
    d_extra_d_log_sigma = 1.0
    if len(leaves) < 2:
        # no topology to sum over: Z_hat is the mean importance weight
        mx = extra.max()
        probs = np.exp(extra - mx)
        value = float(mx + math.log(probs.mean()))
        if not track_grad:
            return value, None
        probs /= probs.sum()
        d_eta = probs[:, None] * d_extra_d_eta
        return value, np.concatenate([d_eta.sum(0), (d_eta * sigma * eps).sum(0) + probs.sum() * d_extra_d_log_sigma])
    params = GinkgoParams.for_leaves(lambdas[0], t_cut, leaves)
    res = run_smc(leaves, params, K, seed, algorithm, lambdas=lambdas, log_extra=extra, track_grad=track_grad)
    if not track_grad:
        return res.log_z, None
    probs = res.first_rank_probs
    d_eta = res.grad_lambda * lambdas + probs[:, None] * d_extra_d_eta
    g_mu = d_eta.sum(0)
    g_log_sigma = (d_eta * sigma * eps).sum(0) + probs.sum() * d_extra_d_log_sigma
    return res.log_z, np.concatenate([g_mu, g_log_sigma])


def _jet_value_grad(args):
    leaves, t_cut, vp, K, seed, algorithm, track_grad = args
    if vp.mode == PSEUDO:
        return _pseudo_jet(leaves, t_cut, vp, K, seed, algorithm, track_grad)
    lam = vp.lambda_hat
    if len(leaves) < 2:
        return 0.0, (np.zeros_like(lam) if track_grad else None)
    params = GinkgoParams.for_leaves(lam, t_cut, leaves)
    res = run_smc(leaves, params, K, seed, algorithm, track_grad=track_grad)
    return res.log_z, (res.grad_lambda.sum(0) if track_grad else None)


def _average(dataset, vp, K, algorithm, seed, track_grad, jobs=1):
    items = [_jet_fields(item) for item in dataset]
    if not items:
        raise ValueError("empty dataset")
    tasks = [(leaves, t_cut, vp, K, child_seed(seed, j), algorithm, track_grad) for j, (leaves, t_cut) in enumerate(items)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_jet_value_grad, tasks))
    else:
        results = [_jet_value_grad(t) for t in tasks]
    # summed in jet order so the result does not depend on the worker count
    n = len(results)
    value = sum(v for v, _ in results) / n
    grad = sum(g for _, g in results) / n if track_grad else None
    return value, grad


def elbo_estimate(dataset: Iterable, vp: VariationalParams, K: int, algorithm: str = "ncsmc", seed: Seed = 0,
                  jobs: int = 1) -> float:
    """Average ``log Z_hat`` over jets.

    Dataset items are objects with ``leaves`` and ``t_cut`` or
    ``(leaves, t_cut)`` pairs.  Jet ``j`` uses seed ``child_seed(seed, j)``.
    """
    return _average(dataset, vp, K, algorithm, seed, False, jobs)[0]


def grad_elbo(dataset: Iterable, vp: VariationalParams, K: int, algorithm: str = "ncsmc", seed: Seed = 0,
              jobs: int = 1) -> np.ndarray:
    """Gradient of :func:`elbo_estimate` with respect to ``vp.active()`` at a fixed seed."""
    return _average(dataset, vp, K, algorithm, seed, True, jobs)[1]


def elbo_and_grad(dataset: Iterable, vp: VariationalParams, K: int, algorithm: str = "ncsmc", seed: Seed = 0,
                  jobs: int = 1) -> tuple[float, np.ndarray]:
    return _average(dataset, vp, K, algorithm, seed, True, jobs)


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 100
    step_size: float = 0.05
    clip_norm: Optional[float] = 10.0


def fit(dataset: Iterable, vp0: VariationalParams, K: int, algorithm: str = "ncsmc",
        config: OptimizerConfig = OptimizerConfig(), seed: Seed = 0, jobs: int = 1,
        callback: Optional[Callable[[FitStep], None]] = None) -> tuple[VariationalParams, FitTrace]:
    """Plain SGD ascent with a fresh seed per step.

    Point mode steps in log-rate space so the rates stay positive.  Raises
    :class:`FitAborted` on a non-finite objective or gradient.
    """
    dataset = list(dataset)
    point = vp0.mode == POINT
    x = np.log(vp0.lambda_hat) if point else vp0.active()
    trace = FitTrace()
    vp = vp0
    for step in range(config.steps):
        t0 = time.perf_counter()
        vp = vp0.with_active(np.exp(x) if point else x)
        value, grad = elbo_and_grad(dataset, vp, K, algorithm, child_seed(seed, step), jobs)
        if point:
            grad = grad * vp.lambda_hat  # chain rule into log-rate space
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise FitAborted(f"non-finite objective at step {step}: {value}")
        norm = float(np.linalg.norm(grad))
        if config.clip_norm is not None and norm > config.clip_norm:
            grad = grad * (config.clip_norm / norm)
        x = x + config.step_size * grad
        rec = FitStep(step, value, vp.active(), norm, 1e3 * (time.perf_counter() - t0))
        trace.append(rec)
        if callback is not None:
            callback(rec)
        with np.errstate(over="ignore"):
            rates = np.exp(x) if point else np.exp(x[: vp0.n_rates])
        if not np.all(np.isfinite(rates) & (rates > 0)):
            raise FitAborted(f"step {step} moved the rates out of range: {rates}")
    return vp0.with_active(np.exp(x) if point else x), trace
