"""Finite-difference audit of the whole training loss.

One rollout and one denoising draw are frozen, then every policy, decoder
and denoiser coordinate is nudged both ways and compared against the
reverse-mode gradient.
"""

import time

from edgeflow.config import TrainConfig
from edgeflow.trainer import build_state, composite_grad_check

cfg = TrainConfig.from_dict({
    "graph": {"n": 4, "rho": 0.5, "m": 3},
    "policy": {"h_g": 6, "h_c": 6, "hidden": 6},
    "decoder": {"d_dim": 4, "s_c": 4, "embed_scale": 0.5},
    "diffusion": {"t_steps": 10, "hidden": 6},
    "train": {"alpha": 0.2, "beta": 0.8},
})
state = build_state(cfg)
count = sum(p.data.size for p in state.named_parameters().values())
t0 = time.perf_counter()
err = composite_grad_check(state)
print(f"{count} parameters, max relative error {err:.2e}, {time.perf_counter() - t0:.1f}s")
