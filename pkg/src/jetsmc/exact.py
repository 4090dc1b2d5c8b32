"""Exact computations for small jets.

Two independent routes to the marginal likelihood over all topologies:
explicit enumeration of every binary tree, and a dynamic program over leaf
subsets (the cluster trellis).  The trellis also yields the exact MAP tree.
The prior over topologies is uniform and taken as the constant 1, so the
marginal is the plain sum of tree likelihoods.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from scipy.special import logsumexp

from .core import GinkgoParams, Topology, _split_terms, squared_mass
from .errors import SizeGuardError

MAX_COUNT_N = 20
MAX_ENUMERATE_N = 12
MAX_BRUTE_N = 10
MAX_TRELLIS_N = 25


def count_topologies(n: int) -> int:
    """Number of rooted binary trees on ``n`` labelled leaves, ``(2n-3)!!``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_COUNT_N:
        raise OverflowError(f"(2n-3)!! requested for n={n} > {MAX_COUNT_N}")
    out = 1
    for k in range(2 * n - 3, 0, -2):
        out *= k
    return out


def _nested_trees(n: int) -> Iterator:
    # stepwise insertion: leaf k goes above every existing node of each tree on 0..k-1
    if n == 1:
        yield 0
        return

    def insert(tree, k):
        yield (tree, k)
        if not isinstance(tree, int):
            left, right = tree
            for sub in insert(left, k):
                yield (sub, right)
            for sub in insert(right, k):
                yield (left, sub)

    for tree in _nested_trees(n - 1):
        yield from insert(tree, n - 1)


def enumerate_topologies(leaves) -> Iterator[Topology]:
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    n = len(leaves)
    if n > MAX_ENUMERATE_N:
        raise SizeGuardError(f"enumeration limited to N <= {MAX_ENUMERATE_N}, got {n}")
    for tree in _nested_trees(n):
        yield Topology.from_nested(tree, leaves)


def _insert_leaf(parents: np.ndarray, node: int) -> np.ndarray:
    """Add the next leaf as a sibling of ``node`` in every tree of ``parents``.

    Trees on ``m`` leaves use ids ``0..m-1`` for leaves and ``m..2m-2`` for
    internal nodes; the new leaf takes id ``m``, old internal ids shift up by
    one and the new internal node takes id ``2m``.
    """
    m = (parents.shape[1] + 1) // 2
    shifted = np.where(parents >= m, parents + 1, parents)
    out = np.empty((parents.shape[0], 2 * m + 1), dtype=parents.dtype)
    out[:, :m] = shifted[:, :m]
    out[:, m + 1: 2 * m] = shifted[:, m:]
    v = node + 1 if node >= m else node
    out[:, 2 * m] = out[:, v]
    out[:, v] = 2 * m
    out[:, m] = 2 * m
    return out


_FULL_TABLE_N = 8


def _parent_tables(n: int) -> Iterator[np.ndarray]:
    """Every topology on ``n`` leaves as parent tables, in chunks of rows."""
    if n == 1:
        yield np.array([[-1]], dtype=np.int16)
        return
    base = np.array([[2, 2, -1]], dtype=np.int16)
    for m in range(2, min(n, _FULL_TABLE_N)):
        base = np.concatenate([_insert_leaf(base, v) for v in range(2 * m - 1)])
    if n <= _FULL_TABLE_N:
        yield base
        return

    def grow(tables: np.ndarray, m: int):
        if m == n:
            yield tables
            return
        for v in range(2 * m - 1):
            yield from grow(_insert_leaf(tables, v), m + 1)

    yield from grow(base, _FULL_TABLE_N)


def _subset_masses(leaves: np.ndarray) -> np.ndarray:
    n = len(leaves)
    vec = np.zeros((1 << n, 4))
    for b in range(n):
        vec[1 << b: 1 << (b + 1)] = vec[: 1 << b] + leaves[b]
    return squared_mass(vec)


def _evaluate_tables(parents: np.ndarray, subset_t: np.ndarray, params: GinkgoParams) -> np.ndarray:
    n = (parents.shape[1] + 1) // 2
    rows = np.arange(len(parents))[:, None]
    order = np.argsort(parents, axis=1, kind="stable")
    # sorted parent ids read -1, n, n, n+1, n+1, ...: children of internal node n+i sit at 1+2i, 2+2i
    left, right = order[:, 1::2], order[:, 2::2]
    mask = np.zeros(parents.shape, dtype=np.int64)
    mask[:, :n] = 1 << np.arange(n)
    for _ in range(n - 1):
        mask[:, n:] = mask[rows, left] | mask[rows, right]
    t = subset_t[mask]
    is_root = (order[:, :1] == np.arange(n, 2 * n - 1))
    lam = np.where(is_root, params.lambda_root, params.lambda_inner)
    term, _ = _split_terms(t[rows, left], t[rows, right], lam, params.t_cut, t[:, n:])
    return term.sum(axis=1)


def _brute_chunks(leaves, params: GinkgoParams):
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    n = len(leaves)
    if n > MAX_BRUTE_N:
        raise SizeGuardError(f"brute force limited to N <= {MAX_BRUTE_N}, got {n}")
    subset_t = _subset_masses(leaves)
    for tables in _parent_tables(n):
        if n == 1:
            yield tables, np.zeros(1)
        else:
            yield tables, _evaluate_tables(tables.astype(np.int64), subset_t, params)


def all_tree_log_likelihoods(leaves, params: GinkgoParams) -> np.ndarray:
    """Log-likelihood of every topology (memory grows as (2N-3)!!)."""
    return np.concatenate([ll for _, ll in _brute_chunks(leaves, params)])


def brute_force_log_marginal(leaves, params: GinkgoParams) -> float:
    parts = [float(logsumexp(ll)) for _, ll in _brute_chunks(leaves, params) if np.isfinite(ll).any()]
    return float(logsumexp(parts)) if parts else -np.inf


def brute_force_log_map(leaves, params: GinkgoParams) -> tuple[Topology, float]:
    """Argmax over the explicit enumeration."""
    best_ll, best_parent = -np.inf, None
    for tables, ll in _brute_chunks(leaves, params):
        i = int(np.argmax(ll))
        if best_parent is None or ll[i] > best_ll:
            best_ll, best_parent = float(ll[i]), tables[i].astype(np.int64)
    return Topology(best_parent, leaves), best_ll


class _Trellis:
    """Subset DP; masks index every non-empty subset of the leaves."""

    def __init__(self, leaves, params: GinkgoParams):
        leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
        n = len(leaves)
        if n > MAX_TRELLIS_N:
            raise SizeGuardError(f"trellis limited to N <= {MAX_TRELLIS_N}, got {n}")
        self.n = n
        self.leaves = leaves
        self.params = params
        size = 1 << n
        self.t = _subset_masses(leaves)
        self.log_z = np.full(size, -np.inf)
        self.log_max = np.full(size, -np.inf)
        self.best_left = np.zeros(size, dtype=np.int64)

    def run(self):
        n, p = self.n, self.params
        full = (1 << n) - 1
        for b in range(n):
            self.log_z[1 << b] = 0.0
            self.log_max[1 << b] = 0.0
        bit_cache: dict[int, np.ndarray] = {}
        for mask in range(3, full + 1):
            if mask & (mask - 1) == 0:
                continue
            low = mask & -mask
            rest = mask ^ low
            bits = [1 << b for b in range(n) if rest >> b & 1]
            k = len(bits)
            if k not in bit_cache:
                ar = np.arange((1 << k) - 1, dtype=np.int64)
                bit_cache[k] = (ar[:, None] >> np.arange(k)) & 1
            sub = bit_cache[k] @ np.array(bits, dtype=np.int64)
            left = low | sub
            right = mask ^ left
            lam = p.lambda_root if mask == full else p.lambda_inner
            term, _ = _split_terms(self.t[left], self.t[right], lam, p.t_cut, self.t[mask])
            with np.errstate(invalid="ignore"):
                tot = term + self.log_z[left] + self.log_z[right]
                mx = term + self.log_max[left] + self.log_max[right]
            if np.isfinite(tot).any():
                self.log_z[mask] = logsumexp(tot)
            j = int(np.argmax(mx))
            self.log_max[mask] = mx[j]
            self.best_left[mask] = left[j]
        return self

    def nested(self, mask: int):
        if mask & (mask - 1) == 0:
            return mask.bit_length() - 1
        left = int(self.best_left[mask])
        return (self.nested(left), self.nested(mask ^ left))


def trellis_log_marginal(leaves, params: GinkgoParams) -> float:
    tr = _Trellis(leaves, params).run()
    return float(tr.log_z[(1 << tr.n) - 1])


def trellis_log_map(leaves, params: GinkgoParams) -> tuple[Topology, float]:
    """Exact maximum-likelihood tree and its log-likelihood."""
    tr = _Trellis(leaves, params).run()
    full = (1 << tr.n) - 1
    return Topology.from_nested(tr.nested(full), tr.leaves), float(tr.log_max[full])


def trellis(leaves, params: GinkgoParams) -> tuple[float, Topology, float]:
    """``(log marginal, MAP tree, MAP log-likelihood)`` from one DP pass."""
    tr = _Trellis(leaves, params).run()
    full = (1 << tr.n) - 1
    return float(tr.log_z[full]), Topology.from_nested(tr.nested(full), tr.leaves), float(tr.log_max[full])
