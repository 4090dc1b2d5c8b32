"""Wall-clock benchmark of the clustering methods against the leaf count."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import GinkgoParams
from .exact import MAX_TRELLIS_N, trellis
from .search import beam_search, greedy_cluster
from .sim import default_root, generate_dataset
from .smc import run_csmc, run_ncsmc

BENCH_METHODS = ("csmc", "ncsmc", "greedy", "beam", "trellis")
DEFAULT_SIZES = (4, 8, 16, 32, 64)

# t_cut ladder used to find a jet of a requested size; smaller cuts give more leaves
_T_CUT_LADDER = (400.0, 100.0, 64.0, 36.0, 16.0, 9.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.02)


def jet_with_leaves(n: int, seed: int, lambdas=(1.5,), tries_per_cut: int = 200):
    """A generated jet with exactly ``n`` leaves (its ``params`` carry the t_cut used)."""
    # leaf count falls roughly as t_cut**-0.37 at the default root; try nearby cuts first
    guess = 4.0 * (25.0 / n) ** 2.7
    for t_cut in sorted(_T_CUT_LADDER, key=lambda c: abs(np.log(c / guess))):
        params = GinkgoParams(lambdas, t_cut, default_root())
        try:
            return generate_dataset(params, 1, [seed, n], min_leaves=n, max_leaves=n, max_tries=tries_per_cut)[0]
        except RuntimeError:
            continue
    raise RuntimeError(f"no generated jet with {n} leaves")


@dataclass(frozen=True)
class BenchRow:
    method: str
    N: int
    K_or_b: int
    median_ms: float

    def as_tuple(self):
        return (self.method, self.N, self.K_or_b, self.median_ms)


def _runner(method: str, K: int, beam: int) -> tuple[Callable, int]:
    if method == "csmc":
        return (lambda jet, s: run_csmc(jet.leaves, jet.params, K, s)), K
    if method == "ncsmc":
        return (lambda jet, s: run_ncsmc(jet.leaves, jet.params, K, s)), K
    if method == "greedy":
        return (lambda jet, s: greedy_cluster(jet.leaves, jet.params)), 1
    if method == "beam":
        return (lambda jet, s: beam_search(jet.leaves, jet.params, beam)), beam
    if method == "trellis":
        return (lambda jet, s: trellis(jet.leaves, jet.params)), 0
    raise ValueError(f"unknown bench method {method!r}")


def time_method(method: str, jets: Sequence, K: int = 64, beam: int = 64, repeats: int = 1) -> float:
    """Median wall-clock in ms over jets and repeats (one untimed warm-up)."""
    run, _ = _runner(method, K, beam)
    run(jets[0], 0)
    times = []
    for s, jet in enumerate(jets):
        for r in range(repeats):
            t0 = time.perf_counter()
            run(jet, [s, r])
            times.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(times))


def run_bench(methods: Sequence[str] = BENCH_METHODS, sizes: Sequence[int] = DEFAULT_SIZES, K: int = 64,
              beam: int = 64, n_seeds: int = 3, trellis_max_n: int = 12, repeats: int = 1,
              lambdas=(1.5,)) -> list[BenchRow]:
    """Median timing per (method, N) over ``n_seeds`` jets of exactly N leaves.

    Methods with a size guard are skipped above it (the trellis also above
    ``trellis_max_n``, since its cost grows as 3^N).
    """
    jets = {n: [jet_with_leaves(n, s, lambdas) for s in range(n_seeds)] for n in sizes}
    rows = []
    for method in methods:
        _, setting = _runner(method, K, beam)
        for n in sizes:
            if method == "trellis" and n > min(trellis_max_n, MAX_TRELLIS_N):
                continue
            rows.append(BenchRow(method, n, setting, time_method(method, jets[n], K, beam, repeats)))
    return rows


def loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
