"""Train the edge policy on a two-mode reward and compare it with the exact target.

With 4 nodes and 2 edges per trajectory there are only 15 terminal edge
sets, so R(x)/Z can be computed by brute force and set against what the
trained sampler actually produces.  Pass a step count to train longer:

    python demos/02_proportional_sampling.py 10000
"""

import sys

import numpy as np

from edgeflow.experiments import proportional_config
from edgeflow.metrics import db_residuals, empirical_terminal_distribution, target_distribution, tv_distance
from edgeflow.trainer import build_state, sample_edge_sets, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
state = build_state(proportional_config(seed=0, max_steps=steps))
g = state.config.graph_config

target = target_distribution(state.set_log_rewards, g.num_edges, g.num_steps)
before = empirical_terminal_distribution(sample_edge_sets(state, 1000, np.random.default_rng(1)))
print(f"untrained policy: TV to target = {tv_distance(target, before):.3f}")

train(state)
after = empirical_terminal_distribution(sample_edge_sets(state, 5000, np.random.default_rng(2)))
print(f"after {state.step} steps: TV to target = {tv_distance(target, after):.4f}")

print("\n set      target   sampled")
for s, p in zip(target.support, target.probs):
    print(f" {str(s):8} {p:.4f}   {after.prob(s):.4f}")

rep = db_residuals(state.flow_model(), state.set_log_rewards, g.num_edges, g.num_steps)
print(f"\ndetailed-balance residuals: mean square {rep.mean_square:.2e}, max {rep.max_abs:.3f}")
