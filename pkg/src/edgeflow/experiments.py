"""Ready-made instances used by the acceptance suite and the demo scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .latent_graph import enumerate_terminal_sets
from .metrics import mode_coverage, vendi_score
from .trainer import TrainState, build_state, sample, train


def proportional_config(seed: int = 0, max_steps: int = 10_000) -> TrainConfig:
    """4 nodes, 2 edges per trajectory, 4 trajectories, two-mode analytic reward.

    Every one of the 15 terminal edge sets is enumerable, so the sampler
    can be checked against ``R / Z`` exactly.
    """
    return TrainConfig.from_dict(
        {
            "graph": {"n": 4, "rho": 2.0 / 3.0, "m": 4},
            "reward": {"mode": "analytic", "center_sets": [[1, 2], [5, 6]], "widths": [0.008]},
            "train": {"alpha": 1.0, "beta": 0.0, "lr": 1e-3, "max_steps": max_steps, "seed": seed, "log_every": 0},
            "diffusion": {"freeze_denoiser": True},
        }
    )


def spread_center_sets(config: TrainConfig, k: int) -> list[list[int]]:
    """Greedy farthest-point choice of ``k`` terminal sets in blended-condition space."""
    state = build_state(config, pretrain=False)
    g = config.graph_config
    sets = enumerate_terminal_sets(g.num_edges, g.num_steps, config.eval.enumeration_cap)
    reps = state.decode_sets(sets)
    chosen = [0]
    dist = np.linalg.norm(reps - reps[0], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(reps - reps[nxt], axis=1))
    return [list(sets[i]) for i in chosen]


def ablation_config(num_trajectories: int, seed: int, max_steps: int = 1500) -> TrainConfig:
    """Toy conditional generation task with four reward modes.

    The denoiser is pretrained so that each reward mode's condition vector
    produces one of four 2-d blobs, then frozen; only the policy learns.
    """
    base = {
        "graph": {"n": 5, "rho": 0.7, "m": num_trajectories},
        "decoder": {"embed_scale": 1.0},
        "reward": {"mode": "analytic", "center_sets": [[1, 2, 3]], "widths": [1.0]},
        "diffusion": {"freeze_denoiser": True, "pretrain_steps": 3000, "num_modes": 4, "t_steps": 50,
                      "a_start": 0.999, "a_end": 0.8},
        "train": {"alpha": 1.0, "beta": 0.0, "lr": 1e-3, "max_steps": max_steps, "seed": seed, "log_every": 0},
        "eval": {"coverage_radius": 0.75},
    }
    probe = TrainConfig.from_dict(base)
    centers = spread_center_sets(probe, 4)
    probe_state = build_state(probe, pretrain=False)
    reps = probe_state.decode_sets(centers)
    gaps = np.linalg.norm(reps[:, None] - reps[None], axis=2)
    width = 0.25 * gaps[gaps > 0].min()
    base["reward"] = {"mode": "analytic", "center_sets": centers, "widths": [float(width)]}
    return TrainConfig.from_dict(base)


@dataclass
class DiversityReport:
    mean_vendi: float
    mean_coverage: float
    per_call_vendi: list
    per_call_coverage: list


def diversity_report(state: TrainState, calls: int, rng: np.random.Generator, kernel: str = "rbf") -> DiversityReport:
    """Vendi score and mode coverage of the ``M`` samples of each inference call.

    Noise is shared within a call, so diversity inside a call can only come
    from the ``M`` distinct decoded conditions.
    """
    radius = state.config.eval.coverage_radius
    vs, cov = [], []
    for _ in range(calls):
        out = sample(state, rng, shared_noise=True)
        vs.append(vendi_score(out.samples, kernel=kernel) if len(out.samples) > 1 else 1.0)
        cov.append(mode_coverage(out.samples, state.task.centers, radius))
    return DiversityReport(float(np.mean(vs)), float(np.mean(cov)), vs, cov)


def run_m_ablation(seeds=(0, 1, 2), ms=(1, 8), max_steps: int = 1500, calls: int = 32) -> dict:
    """Train one model per ``(seed, M)`` and measure per-call diversity."""
    results = {}
    for seed in seeds:
        for m in ms:
            state = build_state(ablation_config(m, seed, max_steps))
            train(state)
            results[(seed, m)] = diversity_report(state, calls, np.random.default_rng(10_000 + seed))
    return results
