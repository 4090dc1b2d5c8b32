"""How fast do the particle estimators approach the exact marginal likelihood?

For a six-leaf jet the trellis gives log Z exactly.  The median absolute
error of log Z_hat over 20 seeds is printed for growing particle counts.
"""

import numpy as np

from jetsmc import GinkgoParams, generate_dataset
from jetsmc.exact import trellis_log_marginal
from jetsmc.sim import default_root
from jetsmc.smc import run_smc

params = GinkgoParams((1.5,), 16.0, default_root())
jet = generate_dataset(params, 1, seed=11, min_leaves=6, max_leaves=6)[0]
exact = trellis_log_marginal(jet.leaves, params)
print(f"exact log Z = {exact:.5f}\n")
print(f"{'K':>6} {'CSMC':>10} {'NCSMC':>10}")
for K in (4, 16, 64, 256, 1024, 4096):
    row = [np.median([abs(run_smc(jet.leaves, params, K, s, alg).log_z - exact) for s in range(20)])
           for alg in ("csmc", "ncsmc")]
    print(f"{K:>6} {row[0]:>10.4f} {row[1]:>10.4f}")
