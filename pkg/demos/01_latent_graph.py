"""Tour of the latent graph: edge numbering, step budgets, trajectories and masks."""

import numpy as np

from edgeflow.errors import MaskViolationError
from edgeflow.latent_graph import (
    GraphConfig,
    append_edges,
    edge_count,
    edge_to_pair,
    enumerate_terminal_sets,
    init_trajectories,
    step_budget,
)

# A 4-node graph has 6 possible edges, numbered row by row.
n = 4
for e in range(1, edge_count(n) + 1):
    print(f"edge {e} joins nodes {edge_to_pair(e, n)}")

# The sparsity rho withholds a fraction of those edges; each trajectory gets the rest.
print("S for 4 nodes, rho=2/3:", step_budget(4, 2 / 3))
print("S for 20 nodes, rho=0.83:", step_budget(20, 0.83))
print("S for 8 nodes, rho=0.70:", step_budget(8, 0.70))

# When a published configuration disagrees with the floor rule, pin S explicitly.
cfg = GraphConfig(num_nodes=20, sparsity=0.82, num_trajectories=40, steps=33)
print(f"20 nodes, rho=0.82: floor gives {cfg.derived_steps}, override uses {cfg.num_steps}")

# Three trajectories, two steps each.  Masks mark what is already taken.
trajs = init_trajectories(3, 6, 2)
trajs = append_edges(trajs, [2, 5, 2])
trajs = append_edges(trajs, [6, 1, 3])
print("sequences:", trajs.sequences())
print("forward mask (1 = added, cannot add again):")
print(trajs.forward_mask)
print("backward mask (0 = removable):")
print(trajs.backward_mask)

one = append_edges(init_trajectories(1, 6, 2), [4])
try:
    append_edges(one, [4])
except MaskViolationError as exc:
    print("repeat rejected:", exc)

# Small graphs can be enumerated completely; this is what the proportionality check relies on.
sets = enumerate_terminal_sets(6, 2)
print(len(sets), "terminal edge sets:", sets)
# Policy states are multi-hot, so insertion order does not matter.
ab = append_edges(append_edges(init_trajectories(1, 6, 2), [2]), [6])
ba = append_edges(append_edges(init_trajectories(1, 6, 2), [6]), [2])
print("2 then 6 equals 6 then 2:", np.array_equal(ab.state_matrix(), ba.state_matrix()))
