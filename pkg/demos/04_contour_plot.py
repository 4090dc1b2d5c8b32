"""Draw the heavy-resonance likelihood surface with the pseudo-marginal fit path.

Writes ``contour.png`` to the current directory.  Needs matplotlib
(``pip install jetsmc[plot]``).
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from jetsmc import GinkgoParams, VariationalParams, fit, generate_dataset
from jetsmc.exact import trellis_log_marginal
from jetsmc.sim import default_root
from jetsmc.variational import OptimizerConfig

heavy = GinkgoParams((3.0, 1.5), 16.0, default_root())
jet = generate_dataset(heavy, 1, seed=2024, min_leaves=8, max_leaves=10)[0]
log_grid = np.linspace(math.log(0.3), math.log(10.0), 15)
surface = np.array([[trellis_log_marginal(jet.leaves, heavy.with_lambdas((math.exp(a), math.exp(b))))
                     for a in log_grid] for b in log_grid])

_, trace = fit([jet], VariationalParams.pseudo([0.0, 0.0], [-1.0, -1.0]), K=64, algorithm="ncsmc",
               config=OptimizerConfig(steps=150, step_size=0.05), seed=1)
path = trace.params[:, :2]

fig, ax = plt.subplots(figsize=(5, 4))
levels = surface.max() - np.array([8.0, 4.0, 2.0, 1.0, 0.5])
cs = ax.contour(log_grid, log_grid, surface, levels=levels)
ax.clabel(cs, fmt="%.1f", fontsize=7)
ax.plot(path[:, 0], path[:, 1], color="red", lw=1)
ax.set_xlabel("log rate at the root split")
ax.set_ylabel("log rate at later splits")
fig.tight_layout()
fig.savefig("contour.png", dpi=120)
print("wrote contour.png")
