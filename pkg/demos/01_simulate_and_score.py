"""Simulate one jet and compare the trees different methods recover.

The generator records the tree that produced the leaves.  Here the same
leaves go to greedy clustering, beam search, NCSMC and the exact trellis,
and each recovered tree is scored under the generating rate.
"""

from jetsmc import GinkgoParams, beam_search, generate_dataset, greedy_cluster, run_ncsmc, tree_log_likelihood
from jetsmc.exact import trellis
from jetsmc.sim import default_root

params = GinkgoParams((1.5,), 16.0, default_root())
jet = generate_dataset(params, 1, seed=7, min_leaves=9, max_leaves=9)[0]

print(f"{jet.n_leaves} leaves; generating tree {jet.truth.nested()}")
print(f"  log-likelihood of the generating tree: {jet.truth_loglik:9.3f}")

log_z, map_tree, map_ll = trellis(jet.leaves, params)
results = {
    "greedy": greedy_cluster(jet.leaves, params),
    "beam (b=9)": beam_search(jet.leaves, params, 9),
}
smc = run_ncsmc(jet.leaves, params, K=256, seed=0)
results["NCSMC (K=256)"] = (smc.best_tree, smc.best_log_likelihood)
results["exact MAP"] = (map_tree, map_ll)

for name, (tree, score) in results.items():
    same = "same as MAP" if tree == map_tree else ""
    print(f"  {name:<14} {score:9.3f}  {same}")
    assert abs(tree_log_likelihood(tree, params) - score) < 1e-9

print(f"\nlog marginal over all trees: exact {log_z:.4f}, NCSMC estimate {smc.log_z:.4f}")
