"""Combinatorial SMC over forests of jet subtrees.

A partial state of rank ``r`` is a forest of ``N - r`` disjoint trees whose
target density is the product of the member trees' likelihoods.  Each rank
resamples, merges one pair of trees and reweights.  Two proposals are
provided:

* ``csmc``: pick uniformly among the pairs allowed by :func:`validate_merge`.
* ``ncsmc``: score every pair (one-step look-ahead) and pick proportionally
  to the look-ahead weights.

The incremental weight divides by the number of non-singleton trees in the
new forest, i.e. the number of ways to have reached it by one merge.  With
that correction the product of the mean weights is an unbiased estimate of
the sum of tree likelihoods.

The scalar ``PartialState`` API (``csmc_propose``, ``csmc_weight``,
``ncsmc_potentials``) works one particle at a time; :func:`run_csmc` and
:func:`run_ncsmc` run all ``K`` particles as arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from ._rng import Seed, stream
from .core import (
    MERGE_OK,
    GinkgoParams,
    Topology,
    _split_terms,
    squared_mass,
    valid_merge_mask,
    validate_merge,
)
from .errors import DeadEndError, TotalDeathError

_RANK_STREAM = 21


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - mx), axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis)


def logmeanexp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    return logsumexp(x, axis=axis) - math.log(x.shape[axis])


def multinomial_resample(log_weights, rng: np.random.Generator, u=None) -> np.ndarray:
    """Draw ``K`` i.i.d. ancestor indices with probabilities ``softmax(log_weights)``.

    ``u`` (uniforms in [0, 1)) may be supplied instead of drawing from ``rng``.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.isfinite(log_weights).any():
        raise TotalDeathError("all particle weights are zero")
    w = np.exp(log_weights - log_weights.max())
    cdf = np.cumsum(w)
    if u is None:
        u = rng.random(len(log_weights))
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(log_weights) - 1)


# ---------------------------------------------------------------------------
# One-particle API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tree:
    mask: int
    structure: object
    vector: np.ndarray
    t: float
    loglik: float

    @property
    def n_leaves(self) -> int:
        return bin(self.mask).count("1")


@dataclass(frozen=True)
class PartialState:
    trees: tuple[Tree, ...]
    n_leaves: int

    @property
    def rank(self) -> int:
        return self.n_leaves - len(self.trees)

    @property
    def log_pi(self) -> float:
        return float(sum(tr.loglik for tr in self.trees))

    def topology(self, leaves) -> Topology:
        if len(self.trees) != 1:
            raise ValueError("only a rank N-1 state is a complete tree")
        return Topology.from_nested(self.trees[0].structure, leaves)


def initial_state(leaves) -> PartialState:
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    trees = tuple(Tree(1 << i, i, leaves[i].copy(), float(squared_mass(leaves[i])), 0.0) for i in range(len(leaves)))
    return PartialState(trees, len(leaves))


def overcounting_log_nu(state: PartialState) -> float:
    """Log of the number of forests one merge away below ``state``."""
    count = sum(1 for tr in state.trees if tr.n_leaves >= 2)
    return math.log(count) if count else 0.0


def merge_pair(state: PartialState, i: int, j: int, params: GinkgoParams) -> PartialState:
    """Forest with trees ``i`` and ``j`` joined under a new root."""
    i, j = min(i, j), max(i, j)
    a, b = state.trees[i], state.trees[j]
    vec = a.vector + b.vector
    t = float(squared_mass(vec))
    lam = params.lambda_root if len(state.trees) == 2 else params.lambda_inner
    term, _ = _split_terms(a.t, b.t, lam, params.t_cut, t)
    merged = Tree(a.mask | b.mask, (a.structure, b.structure), vec, t, a.loglik + b.loglik + float(term))
    trees = state.trees[:i] + (merged,) + state.trees[i + 1: j] + state.trees[j + 1:]
    return PartialState(trees, state.n_leaves)


def valid_pairs(state: PartialState, t_cut: float) -> list[tuple[int, int]]:
    out = []
    for i, a in enumerate(state.trees):
        for j in range(i + 1, len(state.trees)):
            b = state.trees[j]
            if validate_merge(a.t, b.t, a.vector + b.vector, t_cut) == MERGE_OK:
                out.append((i, j))
    return out


def csmc_propose(state: PartialState, params: GinkgoParams, rng: np.random.Generator) -> tuple[PartialState, float]:
    """Merge a uniformly chosen valid pair; returns ``(new_state, log q)``."""
    pairs = valid_pairs(state, params.t_cut)
    if not pairs:
        raise DeadEndError(f"no valid merge among {len(state.trees)} trees")
    i, j = pairs[int(rng.integers(len(pairs)))]
    return merge_pair(state, i, j, params), -math.log(len(pairs))


def csmc_weight(prev: PartialState, new: PartialState, log_q: float) -> float:
    with np.errstate(invalid="ignore"):
        return new.log_pi - prev.log_pi - overcounting_log_nu(new) - log_q


def ncsmc_potentials(state: PartialState, params: GinkgoParams) -> list[tuple[tuple[int, int], float]]:
    """Look-ahead log weight of every pair (proposal density taken as 1)."""
    valid = set(valid_pairs(state, params.t_cut))
    out = []
    for i in range(len(state.trees)):
        for j in range(i + 1, len(state.trees)):
            if (i, j) in valid:
                out.append(((i, j), csmc_weight(state, merge_pair(state, i, j, params), 0.0)))
            else:
                out.append(((i, j), -math.inf))
    return out


# ---------------------------------------------------------------------------
# Vectorized particle system
# ---------------------------------------------------------------------------


@dataclass
class ParticleSystem:
    """Final particles plus the per-rank weights and ancestry.

    ``log_weights[r-1]`` are the rank-``r`` incremental log weights and
    ``ancestors[r-1]`` the indices resampled before rank ``r`` (identity at
    rank 1).  ``parents[k]`` is particle ``k``'s final parent table.
    """

    log_weights: np.ndarray
    ancestors: np.ndarray
    parents: np.ndarray
    log_pi: np.ndarray
    origins: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.parents.shape[0]

    @property
    def log_z_increments(self) -> np.ndarray:
        return logmeanexp(self.log_weights, axis=1)

    @property
    def log_z(self) -> float:
        return float(self.log_z_increments.sum())

    def topology(self, k: int, leaves) -> Topology:
        return Topology(self.parents[k], leaves)


@dataclass
class SMCResult:
    system: ParticleSystem
    log_z: float
    best_tree: Topology
    best_log_likelihood: float
    # d log Z / d lambda of each rank-1 particle's rate vector, shape (K, n_rates)
    grad_lambda: Optional[np.ndarray] = None
    # softmax of the rank-1 weights, needed to differentiate extra rank-1 terms
    first_rank_probs: Optional[np.ndarray] = None


class _Forests:
    """Forests of ``K`` particles, each with ``m`` live trees stored in slots."""

    def __init__(self, leaves: np.ndarray, K: int):
        n = len(leaves)
        self.n = n
        self.K = K
        self.rows = np.arange(K)
        self.vec = np.broadcast_to(leaves, (K, n, 4)).copy()
        self.t = np.broadcast_to(squared_mass(leaves), (K, n)).copy()
        self.nonsingle = np.zeros((K, n), dtype=bool)
        self.node = np.broadcast_to(np.arange(n), (K, n)).copy()
        self.parent = np.full((K, 2 * n - 1), -1, dtype=np.int64)
        self.log_pi = np.zeros(K)
        self.origin = np.arange(K)
        self.extra: dict[str, np.ndarray] = {}

    @property
    def m(self) -> int:
        return self.vec.shape[1]

    def take(self, anc: np.ndarray):
        self.vec = self.vec[anc]
        self.t = self.t[anc]
        self.nonsingle = self.nonsingle[anc]
        self.node = self.node[anc]
        self.parent = self.parent[anc]
        self.log_pi = self.log_pi[anc]
        self.origin = self.origin[anc]
        for k, v in self.extra.items():
            self.extra[k] = v[anc]

    def validity_row(self, slot: np.ndarray, t_cut: float) -> np.ndarray:
        """Validity of merging tree ``slot[k]`` with every slot, shape (K, m)."""
        v = self.vec[self.rows, slot]
        merged = self.vec + v[:, None, :]
        ok = valid_merge_mask(self.t[self.rows, slot][:, None], self.t, squared_mass(merged), t_cut)
        ok[self.rows, slot] = False
        return ok

    def merge(self, a: np.ndarray, b: np.ndarray, new_vec: np.ndarray, new_t: np.ndarray, new_id: int,
              carry: tuple[str, ...] = ()):
        """Join slots ``a < b``; the new tree takes slot ``a`` and slot ``m-1`` moves into ``b``."""
        rows, m = self.rows, self.m
        self.parent[rows, self.node[rows, a]] = new_id
        self.parent[rows, self.node[rows, b]] = new_id
        arrays = [self.vec, self.t, self.nonsingle, self.node] + [self.extra[name] for name in carry]
        for arr in arrays:
            arr[rows, b] = arr[:, m - 1]
        self.vec, self.t, self.nonsingle, self.node = (arr[:, : m - 1] for arr in arrays[:4])
        for name, arr in zip(carry, arrays[4:]):
            self.extra[name] = arr[:, : m - 1]
        self.vec[rows, a] = new_vec
        self.t[rows, a] = new_t
        self.nonsingle[rows, a] = True
        self.node[rows, a] = new_id


@lru_cache(maxsize=None)
def _pairs(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(m, 1)


def _pick(cum: np.ndarray, target: np.ndarray) -> np.ndarray:
    # first index whose cumulative count exceeds target
    return np.argmax(cum > target[:, None], axis=1)


def _run(*args, **kw) -> SMCResult:
    # -inf weights for dead or invalid merges are expected
    with np.errstate(divide="ignore", invalid="ignore"):
        return _run_arrays(*args, **kw)


def _run_arrays(leaves, params: GinkgoParams, K: int, seed: Seed, algorithm: str,
                lambdas: Optional[np.ndarray] = None, log_extra: Optional[np.ndarray] = None,
                track_grad: bool = False) -> SMCResult:
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    n = len(leaves)
    if n < 1:
        raise ValueError("no leaves")
    if K < 1:
        raise ValueError("K must be >= 1")
    if algorithm not in ("csmc", "ncsmc"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if lambdas is None:
        lambdas = np.broadcast_to(np.asarray(params.lambdas, dtype=float), (K, len(params.lambdas)))
    lambdas = np.asarray(lambdas, dtype=float)
    d = lambdas.shape[1]
    t_cut = params.t_cut
    R = n - 1

    f = _Forests(leaves, K)
    f.extra["lam"] = lambdas.copy()
    if algorithm == "csmc":
        merged0 = leaves[:, None, :] + leaves[None, :, :]
        t0 = squared_mass(leaves)
        v0 = valid_merge_mask(t0[:, None], t0[None, :], squared_mass(merged0), t_cut)
        np.fill_diagonal(v0, False)
        f.extra["count"] = np.broadcast_to(v0.sum(1), (K, n)).astype(np.int64).copy()

    if n == 1:
        empty = np.empty((0, K))
        system = ParticleSystem(empty, empty.astype(np.int64), f.parent, f.log_pi, f.origin)
        grad0 = np.zeros((K, d)) if track_grad else None
        probs0 = np.full(K, 1.0 / K)
        return SMCResult(system, 0.0, Topology(f.parent[0], leaves), 0.0, grad0, probs0)

    log_w = np.empty((R, K))
    ancestors = np.empty((R, K), dtype=np.int64)
    grad = np.zeros((K, d)) if track_grad else None
    first_probs = None
    rows = f.rows
    # fixed-size draws per rank keep random numbers common across rate values
    uniforms = stream(seed, _RANK_STREAM).random((R, 3, K))

    for r in range(1, R + 1):
        u_res, u1, u2 = uniforms[r - 1]
        if r == 1:
            anc = rows.copy()
        else:
            anc = multinomial_resample(log_w[r - 2], None, u=u_res)
            f.take(anc)
        ancestors[r - 1] = anc
        m = f.m
        final = m == 2
        lam_col = 0 if (final and d == 2) else d - 1
        lam = f.extra["lam"][:, lam_col]
        new_id = n + r - 1

        if algorithm == "csmc":
            count = f.extra["count"]
            total = count.sum(1)
            dead = total == 0
            i = _pick(np.cumsum(count, axis=1), np.floor(u1 * total))
            row_i = f.validity_row(i, t_cut)
            j = _pick(np.cumsum(row_i, axis=1), np.floor(u2 * count[rows, i]))
            i = np.where(dead, 0, i)
            j = np.where(dead, 1, j)
            a, b = np.minimum(i, j), np.maximum(i, j)
            row_j = f.validity_row(j, t_cut)
            row_a = np.where((a == i)[:, None], row_i, row_j)
            row_b = np.where((a == i)[:, None], row_j, row_i)
            new_vec = f.vec[rows, a] + f.vec[rows, b]
            new_t = squared_mass(new_vec)
            term, dterm = _split_terms(f.t[rows, a], f.t[rows, b], lam, t_cut, new_t, grad=track_grad)
            f.extra["count"] = count - row_a - row_b
            f.merge(a, b, new_vec, new_t, new_id, carry=("count",))
            row_new = f.validity_row(a, t_cut)
            f.extra["count"] += row_new
            f.extra["count"][rows, a] = row_new.sum(1)
            log_q = -np.log(total / 2.0)
            log_nu = np.log(f.nonsingle.sum(1))
            w = term - log_nu - log_q
            w[dead] = -np.inf
            dw = dterm
        else:
            iu, ju = _pairs(m)
            # np.take gathers along an inner axis much faster than fancy indexing
            merged = np.take(f.vec, iu, axis=1) + np.take(f.vec, ju, axis=1)
            mt = squared_mass(merged)
            ta, tb = np.take(f.t, iu, axis=1), np.take(f.t, ju, axis=1)
            ok = valid_merge_mask(ta, tb, mt, t_cut)
            term_all, dterm_all = _split_terms(ta, tb, lam[:, None], t_cut, mt, grad=track_grad)
            ns = f.nonsingle.astype(np.int64)
            nu_new = ns.sum(1)[:, None] + 1 - np.take(ns, iu, axis=1) - np.take(ns, ju, axis=1)
            pot = np.where(ok, term_all - np.log(nu_new), -np.inf)
            # sum of look-ahead weights: the mean over L pairs divided by the uniform density 1/L
            peak = pot.max(1)
            dead = peak == -np.inf
            shifted = np.exp(pot - np.where(dead, 0.0, peak)[:, None])
            cum = np.cumsum(shifted, axis=1)
            total = cum[:, -1]
            with np.errstate(divide="ignore"):
                w = np.log(total) + peak
            sel = _pick(cum, u1 * total)
            a, b = iu[sel], ju[sel]
            new_vec = merged[rows, sel]
            new_t = mt[rows, sel]
            term = term_all[rows, sel]
            f.merge(a, b, new_vec, new_t, new_id)
            dw = None
            if track_grad:
                with np.errstate(invalid="ignore"):
                    dw = (shifted * np.nan_to_num(dterm_all)).sum(1) / total

        f.log_pi = f.log_pi + term
        if r == 1 and log_extra is not None:
            w = w + log_extra
        log_w[r - 1] = w
        if not np.isfinite(w).any():
            raise TotalDeathError(f"all {K} particles died at rank {r}")
        if track_grad or r == 1:
            probs_k = np.exp(w - logsumexp(w))
            if r == 1:
                first_probs = probs_k
            if track_grad:
                contrib = np.zeros((K, d))
                contrib[:, lam_col] = np.where(np.isfinite(w), probs_k * np.nan_to_num(dw), 0.0)
                np.add.at(grad, f.origin, contrib)

    system = ParticleSystem(log_w, ancestors, f.parent, f.log_pi, f.origin)
    alive = np.isfinite(log_w[-1])
    best = int(np.argmax(np.where(alive, f.log_pi, -np.inf)))
    best_tree = Topology(f.parent[best], leaves)
    return SMCResult(system, system.log_z, best_tree, float(f.log_pi[best]), grad, first_probs)


def run_csmc(leaves, params: GinkgoParams, K: int, seed: Seed, **kw) -> SMCResult:
    """Combinatorial SMC with a uniform proposal over valid merges."""
    return _run(leaves, params, K, seed, "csmc", **kw)


def run_ncsmc(leaves, params: GinkgoParams, K: int, seed: Seed, M: int = 1, **kw) -> SMCResult:
    """Nested combinatorial SMC: merges drawn from exhaustive one-step look-ahead."""
    if M != 1:
        raise ValueError("only M = 1 is supported: parent vectors are deterministic")
    return _run(leaves, params, K, seed, "ncsmc", **kw)


def run_smc(leaves, params: GinkgoParams, K: int, seed: Seed, algorithm: str = "csmc", **kw) -> SMCResult:
    return _run(leaves, params, K, seed, algorithm, **kw)
