"""Greedy and beam-search clustering baselines.

Forests are tuples of trees ordered by their smallest leaf; a candidate merge
is the pair ``(i, j)``, ``i < j``, of positions in that order, and all ties
are broken toward the lexicographically smallest pair.  A forest's score is
the sum of the splitting log-likelihoods of the merges made so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GinkgoParams, Topology, _split_terms, squared_mass, valid_merge_mask
from .errors import DeadEndError


@dataclass(frozen=True)
class _Tree:
    mask: int
    structure: object  # leaf int or (left, right), children ordered by min leaf
    vector: np.ndarray
    t: float

    @property
    def min_leaf(self) -> int:
        return (self.mask & -self.mask).bit_length() - 1


class _MergeCache:
    """Merge terms depend only on the two leaf sets, so they are shared across forests."""

    def __init__(self, leaves, params: GinkgoParams):
        self.n = len(leaves)
        self.params = params
        self._cache: dict[tuple[int, int, bool], tuple[float, np.ndarray, float]] = {}

    def merge(self, a: _Tree, b: _Tree, is_root: bool):
        key = (a.mask, b.mask, is_root)
        hit = self._cache.get(key)
        if hit is None:
            vec = a.vector + b.vector
            t = float(squared_mass(vec))
            if valid_merge_mask(a.t, b.t, t, self.params.t_cut):
                lam = self.params.lambda_root if is_root else self.params.lambda_inner
                term, _ = _split_terms(a.t, b.t, lam, self.params.t_cut, t)
                term = float(term)
            else:
                term = -np.inf
            hit = (term, vec, t)
            self._cache[key] = hit
        return hit


def _singletons(leaves) -> tuple[_Tree, ...]:
    return tuple(_Tree(1 << i, i, np.array(v, dtype=float), float(squared_mass(v))) for i, v in enumerate(leaves))


def _expand(forest: tuple[_Tree, ...], cache: _MergeCache):
    """Yield ``(term, i, j, merged_tree)`` for every valid pair."""
    is_root = len(forest) == 2
    for i in range(len(forest)):
        a = forest[i]
        for j in range(i + 1, len(forest)):
            b = forest[j]
            term, vec, t = cache.merge(a, b, is_root)
            if term == -np.inf:
                continue
            yield term, i, j, _Tree(a.mask | b.mask, (a.structure, b.structure), vec, t)


def _replace(forest: tuple[_Tree, ...], i: int, j: int, merged: _Tree) -> tuple[_Tree, ...]:
    # merged keeps position i: its min leaf is forest[i]'s, so the order is preserved
    return forest[:i] + (merged,) + forest[i + 1: j] + forest[j + 1:]


def greedy_cluster(leaves, params: GinkgoParams) -> tuple[Topology, float]:
    """Repeatedly merge the valid pair with the largest splitting log-likelihood."""
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    cache = _MergeCache(leaves, params)
    forest = _singletons(leaves)
    score = 0.0
    while len(forest) > 1:
        best = None
        for term, i, j, merged in _expand(forest, cache):
            if best is None or term > best[0]:
                best = (term, i, j, merged)
        if best is None:
            raise DeadEndError(f"greedy clustering stuck with {len(forest)} trees")
        term, i, j, merged = best
        score += term
        forest = _replace(forest, i, j, merged)
    return Topology.from_nested(forest[0].structure, leaves), score


def beam_search(leaves, params: GinkgoParams, beam_width: int) -> tuple[Topology, float]:
    """Keep the ``beam_width`` best distinct forests per level.

    Candidates are ranked by cumulative score, then by the rank of the parent
    forest in the previous beam, then by merge pair.  Identical forests
    reached along different merge orders are kept once.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    leaves = np.asarray(leaves, dtype=float).reshape(-1, 4)
    cache = _MergeCache(leaves, params)
    beam: list[tuple[float, tuple[_Tree, ...]]] = [(0.0, _singletons(leaves))]
    for _ in range(len(leaves) - 1):
        candidates = []
        for rank, (score, forest) in enumerate(beam):
            for term, i, j, merged in _expand(forest, cache):
                candidates.append((-(score + term), rank, i, j, merged))
        if not candidates:
            raise DeadEndError("every beam reached a forest with no valid merge")
        seen: set = set()
        nxt: list[tuple[float, tuple[_Tree, ...]]] = []
        candidates.sort(key=lambda c: c[:4])
        for neg, rank, i, j, merged in candidates:
            forest = _replace(beam[rank][1], i, j, merged)
            key = tuple(t.structure for t in forest)
            if key in seen:
                continue
            seen.add(key)
            nxt.append((-neg, forest))
            if len(nxt) == beam_width:
                break
        beam = nxt
    score, forest = beam[0]
    return Topology.from_nested(forest[0].structure, leaves), score
