"""Toy parton-shower jet generator.

A node with squared mass above ``t_cut`` splits into two children whose
squared masses are drawn from truncated exponentials (left child first, the
right child's scale shrunk so the pair stays kinematically allowed), decays
isotropically in its rest frame and is boosted back to the lab frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import Seed, stream
from .core import GinkgoParams, Topology, four_vector, squared_mass, tree_log_likelihood
from .errors import DomainError

# spawn-key tag for per-node streams
_NODE_STREAM = 11


@dataclass(frozen=True)
class GeneratedJet:
    truth: Topology
    leaves: np.ndarray
    params: GinkgoParams
    seed: int
    truth_loglik: float

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def t_cut(self) -> float:
        return self.params.t_cut


def sample_truncated_exp(t_parent: float, lam: float, u: float) -> float:
    """Inverse CDF of the exponential truncated to ``[0, t_parent]``."""
    return -(t_parent / lam) * math.log1p(u * math.expm1(-lam))


def sample_child_masses(t_parent: float, lam: float, rng: np.random.Generator) -> tuple[float, float]:
    u_left, u_right = rng.random(2)
    t_left = sample_truncated_exp(t_parent, lam, u_left)
    t_right = sample_truncated_exp((math.sqrt(t_parent) - math.sqrt(t_left)) ** 2, lam, u_right)
    return t_left, t_right


def sample_unit_sphere(rng: np.random.Generator) -> np.ndarray:
    cos_theta = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    sin_theta = math.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
    return np.array([sin_theta * math.cos(phi), sin_theta * math.sin(phi), cos_theta])


def two_body_decay(t_parent: float, t_left: float, t_right: float, direction) -> tuple[np.ndarray, np.ndarray]:
    """Children four-vectors in the parent rest frame.

    The left child travels along ``direction`` and the right child opposite.
    """
    s = t_parent
    half = 0.5 * math.sqrt(s)
    radicand = 1.0 - 2.0 * (t_left + t_right) / s + (t_left - t_right) ** 2 / s**2
    if radicand < -1e-12:
        raise DomainError(f"children ({t_left}, {t_right}) too heavy for parent {t_parent}")
    p = half * math.sqrt(max(radicand, 0.0))
    e_left = half * (1.0 + t_left / s - t_right / s)
    e_right = half * (1.0 + t_right / s - t_left / s)
    direction = np.asarray(direction, dtype=float)
    z_left = np.concatenate(([e_left], p * direction))
    z_right = np.concatenate(([e_right], -p * direction))
    return z_left, z_right


def lorentz_boost(z_rest, parent_lab) -> np.ndarray:
    """Boost ``z_rest`` from the rest frame of ``parent_lab`` into the lab."""
    z_rest = np.asarray(z_rest, dtype=float)
    parent_lab = np.asarray(parent_lab, dtype=float)
    t_p = squared_mass(parent_lab)
    if not t_p > 0:
        raise DomainError("cannot boost into the frame of a non-timelike parent")
    m = math.sqrt(t_p)
    p_vec = parent_lab[1:]
    p_abs = float(np.linalg.norm(p_vec))
    if p_abs == 0.0:
        return z_rest.copy()
    gamma = parent_lab[0] / m
    gamma_beta = p_abs / m
    n = p_vec / p_abs
    e, p = z_rest[0], z_rest[1:]
    p_par = float(p @ n)
    e_lab = gamma * e + gamma_beta * p_par
    p_lab = p + ((gamma - 1.0) * p_par + gamma_beta * e) * n
    return np.concatenate(([e_lab], p_lab))


def default_root(energy: float = 400.0, t_root: float = 6400.0) -> np.ndarray:
    """Root moving along z with the given energy and squared mass."""
    return four_vector(energy, 0.0, 0.0, math.sqrt(energy**2 - t_root))


def generate_jet(params: GinkgoParams, seed: int) -> GeneratedJet:
    """Shower ``params.root`` until every branch falls below ``t_cut``.

    Each node draws from its own stream keyed by its left/right path from the
    root, so the jet depends only on ``(params, seed)``.
    """
    leaves: list[np.ndarray] = []
    # (node id placeholder, children) assembled post-order
    internal: list[tuple[object, object]] = []

    def shower(z: np.ndarray, t: float, path: tuple[int, ...]):
        if not t > params.t_cut:
            leaves.append(z)
            return len(leaves) - 1
        rng = stream(seed, _NODE_STREAM, len(path), _path_code(path))
        lam = params.lambda_root if not path else params.lambda_inner
        t_left, t_right = sample_child_masses(t, lam, rng)
        direction = sample_unit_sphere(rng)
        z_left, z_right = two_body_decay(t, t_left, t_right, direction)
        left = shower(lorentz_boost(z_left, z), t_left, path + (0,))
        right = shower(lorentz_boost(z_right, z), t_right, path + (1,))
        internal.append((left, right))
        return ("node", len(internal) - 1)

    root_t = squared_mass(params.root)
    top = shower(params.root.copy(), root_t, ())
    n = len(leaves)
    parent = np.full(2 * n - 1, -1, dtype=np.int64)

    def node_id(ref) -> int:
        return ref if isinstance(ref, int) else n + ref[1]

    for i, (a, b) in enumerate(internal):
        parent[node_id(a)] = n + i
        parent[node_id(b)] = n + i
    assert node_id(top) == 2 * n - 2
    leaf_arr = np.array(leaves)
    truth = Topology(parent, leaf_arr)
    return GeneratedJet(truth, leaf_arr, params, int(seed), tree_log_likelihood(truth, params))


def _path_code(path: tuple[int, ...]) -> int:
    code = 0
    for bit in path:
        code = 2 * code + bit
    return code


def generate_dataset(params: GinkgoParams, n_jets: int, seed: Seed, min_leaves: int = 1,
                     max_leaves: int | None = None, max_tries: int = 100_000) -> list[GeneratedJet]:
    """Generate ``n_jets`` jets, keeping only those with a leaf count in range.

    Jet ``j`` of the candidate sequence uses seed ``hash(seed, j)``; rejected
    candidates are skipped, so the output is a deterministic function of the
    arguments.
    """
    out: list[GeneratedJet] = []
    for j in range(max_tries):
        if len(out) == n_jets:
            break
        jet_seed = int(np.random.SeedSequence(seed if isinstance(seed, int) else list(seed),
                                              spawn_key=(j,)).generate_state(1, dtype=np.uint64)[0])
        jet = generate_jet(params, jet_seed)
        if jet.n_leaves >= min_leaves and (max_leaves is None or jet.n_leaves <= max_leaves):
            out.append(jet)
    if len(out) < n_jets:
        raise RuntimeError(f"only {len(out)} of {n_jets} jets fell in the leaf range after {max_tries} tries")
    return out
