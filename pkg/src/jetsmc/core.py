"""Ginkgo kinematics, splitting likelihoods and tree likelihoods.

Four-vectors are plain ``float64`` arrays whose last axis is
``(E, px, py, pz)``; everything here broadcasts over leading axes so the same
kernels serve the scalar API, the trellis and the vectorized particle
filters.  Probabilities live in the natural-log domain and ``-inf`` means
probability zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, StructureError

LOG_4PI = math.log(4.0 * math.pi)

FourVector = np.ndarray


def four_vector(E: float, px: float = 0.0, py: float = 0.0, pz: float = 0.0) -> FourVector:
    return np.array([E, px, py, pz], dtype=float)


def squared_mass(z) -> np.ndarray | float:
    """``t = E^2 - |p|^2`` along the last axis."""
    z = np.asarray(z, dtype=float)
    t = z[..., 0] ** 2 - (z[..., 1] ** 2 + z[..., 2] ** 2 + z[..., 3] ** 2)
    return float(t) if t.ndim == 0 else t


@dataclass(frozen=True)
class GinkgoParams:
    """Model parameters.

    ``lambdas`` has one rate (QCD-like jet) or two (heavy resonance: the root
    split uses ``lambdas[0]``, every later split ``lambdas[1]``).
    """

    lambdas: tuple[float, ...]
    t_cut: float
    root: FourVector = field(default_factory=lambda: four_vector(1.0))

    def __post_init__(self):
        lam = tuple(float(x) for x in np.atleast_1d(self.lambdas))
        if len(lam) not in (1, 2):
            raise DomainError(f"expected 1 or 2 rates, got {len(lam)}")
        if any(not (x > 0) for x in lam):
            raise DomainError(f"rates must be positive: {lam}")
        if not (self.t_cut > 0):
            raise DomainError(f"t_cut must be positive: {self.t_cut}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "t_cut", float(self.t_cut))
        object.__setattr__(self, "root", np.asarray(self.root, dtype=float).reshape(4))

    @classmethod
    def for_leaves(cls, lambdas, t_cut: float, leaves) -> "GinkgoParams":
        return cls(tuple(np.atleast_1d(lambdas)), t_cut, np.asarray(leaves, dtype=float).sum(axis=0))

    @property
    def heavy_resonance(self) -> bool:
        return len(self.lambdas) == 2

    @property
    def lambda_root(self) -> float:
        return self.lambdas[0]

    @property
    def lambda_inner(self) -> float:
        return self.lambdas[-1]

    def with_lambdas(self, lambdas) -> "GinkgoParams":
        return GinkgoParams(tuple(np.atleast_1d(lambdas)), self.t_cut, self.root)


# ---------------------------------------------------------------------------
# Density kernels
# ---------------------------------------------------------------------------


def _log1mexp(a):
    """log(1 - exp(-a)) for a > 0."""
    return np.log(-np.expm1(-a))


def _log_trunc_exp(t, lam, T):
    # no domain checks; callers mask the support themselves
    return -_log1mexp(lam) + np.log(lam) - np.log(T) - lam * t / T


def _log_one_minus_stop(lam, t_cut, T):
    # log(1 - F_s) for T > t_cut
    c = t_cut / T
    return -lam * c + _log1mexp(lam * (1.0 - c)) - _log1mexp(lam)


def truncated_exp_logpdf(t: float, lam: float, t_parent: float) -> float:
    """Log density of the exponential in ``t`` truncated to ``[0, t_parent]``."""
    if not (lam > 0 and t_parent > 0):
        raise DomainError(f"need lam > 0 and t_parent > 0, got {lam}, {t_parent}")
    if not (0.0 <= t <= t_parent):
        raise DomainError(f"t={t} outside [0, {t_parent}]")
    return float(_log_trunc_exp(t, lam, t_parent))


def stop_cdf(t_cut: float, t_parent: float, lam: float) -> float:
    """Probability that a node of squared mass ``t_parent`` does not split."""
    if not (lam > 0 and t_cut > 0 and t_parent > 0):
        raise DomainError("stop_cdf needs positive arguments")
    if t_parent <= t_cut:
        return 1.0
    return float(-np.expm1(-lam * t_cut / t_parent) / -np.expm1(-lam))


def split_factor_log(t_child: float, lam: float, t_cut: float, t_parent_i: float, t_parent: float) -> float:
    """Log of one child's factor: the truncated exponential in ``t_child`` with
    scale ``t_parent_i`` when the parent splits, else the stop probability."""
    if t_parent <= t_cut:
        return math.log(stop_cdf(t_cut, t_parent, lam))
    return truncated_exp_logpdf(t_child, lam, t_parent_i)


def _split_terms(t_a, t_b, lam, t_cut, t_p, grad: bool = False):
    """Vectorized node term and its rate derivative (NaN off the support)."""
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    t_p = np.asarray(t_p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    tl = np.maximum(t_a, t_b)
    tr = np.minimum(t_a, t_b)
    ok = (t_p > t_cut) & (tr >= 0.0) & (tl <= t_p)
    tp = np.where(ok, t_p, 2.0 * t_cut + 1.0)
    tpr = (np.sqrt(tp) - np.sqrt(np.where(ok, tl, 0.0))) ** 2
    ok &= (tpr > 0.0) & (tr <= tpr)
    tpr = np.where(ok, tpr, 1.0)
    c = t_cut / tp
    # the three factors share their normalisers, which depend on the rate only
    rate_part = 2.0 * np.log(lam) - 3.0 * _log1mexp(lam) - LOG_4PI
    scaled = c + tl / tp + tr / tpr
    with np.errstate(divide="ignore", invalid="ignore"):
        val = rate_part + _log1mexp(lam * (1.0 - c)) - lam * scaled - np.log(tp * tpr)
    val = np.where(ok, val, -np.inf)
    if not grad:
        return val, None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rate_grad = 2.0 / lam - 3.0 / np.expm1(lam)
        d = rate_grad + (1.0 - c) / np.expm1(lam * (1.0 - c)) - scaled
    return val, np.where(ok, d, np.nan)


def node_split_log_likelihood(t_L, t_R, lam, t_cut, t_parent):
    """Log-likelihood that a parent of squared mass ``t_parent`` splits into
    children of squared masses ``t_L`` and ``t_R``.

    Symmetric in the two children (the heavier one plays the left role).
    Returns ``-inf`` when the parent sits at or below ``t_cut`` or the child
    masses fall outside the kinematically allowed region.  Broadcasts.
    """
    val, _ = _split_terms(t_L, t_R, lam, t_cut, t_parent)
    return float(val) if val.ndim == 0 else val


def node_split_grad_lambda(t_L, t_R, lam, t_cut, t_parent):
    """``d/d lam`` of :func:`node_split_log_likelihood` (NaN where that is -inf)."""
    _, d = _split_terms(t_L, t_R, lam, t_cut, t_parent, grad=True)
    return float(d) if d.ndim == 0 else d


# ---------------------------------------------------------------------------
# Merge validity
# ---------------------------------------------------------------------------

MERGE_OK = 0
NONPOSITIVE_MASS = 1
BELOW_CUT = 2
NOT_HEAVIER = 3


def validate_merge(left_t: float, right_t: float, merged, t_cut: float) -> int:
    """Check the three coalescence conditions for a candidate inner node.

    Returns ``MERGE_OK`` (0) or the id of the first violated condition:
    1 for ``t <= 0``, 2 for ``t <= t_cut``, 3 for ``t <= max(t_l, t_r)``.
    """
    t = squared_mass(merged)
    if not t > 0.0:
        return NONPOSITIVE_MASS
    if not t > t_cut:
        return BELOW_CUT
    if not t > max(left_t, right_t):
        return NOT_HEAVIER
    return MERGE_OK


def valid_merge_mask(t_a, t_b, t_merged, t_cut):
    """Vectorized ``validate_merge(...) == MERGE_OK``."""
    return (t_merged > 0.0) & (t_merged > t_cut) & (t_merged > np.maximum(t_a, t_b))


# ---------------------------------------------------------------------------
# Topologies
# ---------------------------------------------------------------------------


class Topology:
    """Rooted binary tree over ``n_leaves`` leaves as a parent-pointer table.

    Leaves are nodes ``0..N-1`` and internal nodes ``N..2N-2``; the root's
    parent is ``-1``.  ``node_vectors[i]`` holds the four-vector of node ``i``;
    internal vectors are the sums of their children.
    """

    def __init__(self, parent, leaves):
        leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
        parent = np.asarray(parent, dtype=np.int64)
        n = len(leaves)
        if n < 1 or parent.shape != (2 * n - 1,):
            raise StructureError(f"parent table of length {parent.shape} does not fit {n} leaves")
        self.n_leaves = n
        self.parent = parent
        self._children = self._build_children()
        self.node_vectors = self._sum_vectors(leaves)

    def _build_children(self) -> list[list[int]]:
        n, m = self.n_leaves, len(self.parent)
        children: list[list[int]] = [[] for _ in range(m)]
        roots = []
        for node, p in enumerate(self.parent):
            if p == -1:
                roots.append(node)
            elif not (0 <= p < m) or p == node:
                raise StructureError(f"node {node} has invalid parent {p}")
            else:
                children[p].append(node)
        if len(roots) != 1:
            raise StructureError(f"expected one root, found {len(roots)}")
        for node in range(m):
            want = 0 if node < n else 2
            if len(children[node]) != want:
                raise StructureError(f"node {node} has {len(children[node])} children, expected {want}")
        self.root = roots[0]
        return children

    def _sum_vectors(self, leaves) -> np.ndarray:
        vec = np.zeros((len(self.parent), 4))
        vec[: self.n_leaves] = leaves
        seen = 0
        for node in self.postorder():
            seen += 1
            if node >= self.n_leaves:
                a, b = self._children[node]
                vec[node] = vec[a] + vec[b]
        if seen != len(self.parent):
            raise StructureError("parent table contains a cycle")
        return vec

    def children(self, node: int) -> tuple[int, ...]:
        return tuple(self._children[node])

    def internal_nodes(self) -> range:
        return range(self.n_leaves, 2 * self.n_leaves - 1)

    def postorder(self) -> list[int]:
        out, stack = [], [(self.root, False)]
        while stack:
            node, done = stack.pop()
            if done or not self._children[node]:
                out.append(node)
                continue
            stack.append((node, True))
            for c in reversed(self._children[node]):
                stack.append((c, False))
        return out

    def leaf_vectors(self) -> np.ndarray:
        return self.node_vectors[: self.n_leaves]

    def nested(self, node: int | None = None):
        """Canonical nested-tuple form; children ordered by their smallest leaf."""
        node = self.root if node is None else node
        if node < self.n_leaves:
            return node
        a, b = (self.nested(c) for c in self._children[node])
        return (a, b) if _min_leaf(a) < _min_leaf(b) else (b, a)

    def canonical(self) -> frozenset | int:
        """Order-free key: equal iff the two trees have the same clusters."""
        return _canonical(self.nested())

    @classmethod
    def from_nested(cls, structure, leaves) -> "Topology":
        leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
        n = len(leaves)
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        counter = [n]

        def visit(s) -> int:
            if isinstance(s, (int, np.integer)):
                return int(s)
            a, b = visit(s[0]), visit(s[1])
            node = counter[0]
            counter[0] += 1
            parent[a] = node
            parent[b] = node
            return node

        visit(structure)
        if counter[0] != 2 * n - 1:
            raise StructureError("nested structure does not cover all leaves")
        return cls(parent, leaves)

    @classmethod
    def from_merges(cls, merges: Sequence[tuple[int, int]], leaves) -> "Topology":
        """Build from a merge list; merge ``i`` creates node ``N + i``."""
        leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
        n = len(leaves)
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        for i, (a, b) in enumerate(merges):
            parent[a] = parent[b] = n + i
        return cls(parent, leaves)

    def __eq__(self, other):
        return isinstance(other, Topology) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())

    def __repr__(self):
        return f"Topology({self.nested()!r})"


def _min_leaf(s) -> int:
    if isinstance(s, (int, np.integer)):
        return int(s)
    return min(_min_leaf(s[0]), _min_leaf(s[1]))


def _canonical(s):
    if isinstance(s, (int, np.integer)):
        return int(s)
    return frozenset((_canonical(s[0]), _canonical(s[1])))


def node_lambdas(topology: Topology, params: GinkgoParams) -> dict[int, float]:
    return {
        node: (params.lambda_root if node == topology.root else params.lambda_inner)
        for node in topology.internal_nodes()
    }


def _node_terms(topology: Topology, params: GinkgoParams, grad: bool = False):
    nodes = np.fromiter(topology.internal_nodes(), dtype=np.int64)
    if len(nodes) == 0:
        return nodes, np.zeros(0), np.zeros(0)
    kids = np.array([topology.children(n) for n in nodes])
    t = squared_mass(topology.node_vectors)
    t = np.atleast_1d(t)
    lam = np.where(nodes == topology.root, params.lambda_root, params.lambda_inner)
    val, d = _split_terms(t[kids[:, 0]], t[kids[:, 1]], lam, params.t_cut, t[nodes], grad=grad)
    return nodes, val, d


def tree_log_likelihood(topology: Topology, params: GinkgoParams) -> float:
    """Sum of the per-node splitting log-likelihoods; 0 for a single leaf."""
    _, val, _ = _node_terms(topology, params)
    return float(val.sum()) if len(val) else 0.0


def grad_lambda_tree_log_likelihood(topology: Topology, params: GinkgoParams) -> np.ndarray:
    """Gradient of :func:`tree_log_likelihood` with respect to ``params.lambdas``."""
    nodes, val, d = _node_terms(topology, params, grad=True)
    if not np.all(np.isfinite(val)):
        raise DomainError("gradient requested at a zero-likelihood tree")
    out = np.zeros(len(params.lambdas))
    if params.heavy_resonance:
        is_root = nodes == topology.root
        out[0] = d[is_root].sum()
        out[1] = d[~is_root].sum()
    else:
        out[0] = d.sum()
    return out
