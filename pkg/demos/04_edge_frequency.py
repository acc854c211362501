"""Which edges does the policy favour for one condition over another?

Two conditions are compared by how often each edge appears in sampled
trajectories.  The top edge for condition A is then appended to every
trajectory and the shift in decoded conditions is measured.
"""

import numpy as np

from edgeflow.decoder import append_and_decode, decode_trajectories, blend
from edgeflow.experiments import proportional_config
from edgeflow.metrics import edge_frequency_delta
from edgeflow.policy import rollout
from edgeflow.trainer import build_state, sample_edge_sets, train

cfg = proportional_config(seed=0, max_steps=2000).replace(graph={"n": 5, "rho": 0.7, "m": 4},
                                                          reward={"center_sets": [[1, 2, 3], [8, 9, 10]]})
state = build_state(cfg)
train(state)

rng = np.random.default_rng(0)
cond_a = state.condition
cond_b = -state.condition
sets_a = sample_edge_sets(state, 500, rng, condition=cond_a)
sets_b = sample_edge_sets(state, 500, rng, condition=cond_b)
top = edge_frequency_delta(sets_a, sets_b, state.num_edges, 5)
print("edge  freq(A)  freq(B)  delta")
for f in top:
    print(f"{f.edge:4d}  {f.freq_a:7.3f}  {f.freq_b:7.3f}  {f.delta:+.3f}")

# Append an edge to finished trajectories and see how far the conditions move.
code = state.policy.encode_condition(cond_b)
trajs = rollout(state.policy, code, 4, state.num_steps, rng).trajectories
base = blend(decode_trajectories(state.decoder, trajs), cond_b, cfg.decoder.gamma).data
free = [f.edge for f in top if all(f.edge not in s for s in trajs.sequences())]
if free:
    moved = append_and_decode(state.decoder, trajs, [free[0]], cond_b, cfg.decoder.gamma).data
    print(f"\nappending edge {free[0]}: mean shift in c_hat = {np.linalg.norm(moved - base, axis=1).mean():.4f}")
else:
    print("\nevery top edge already appears in some trajectory; nothing to append")
