"""Joint training of the edge policy, graph decoder and toy denoiser.

One :func:`train_step` rolls out ``M`` trajectories, decodes and blends
them into condition vectors, scores them, and takes one Adam step on
``alpha * L_GFN + beta * L_LDM``.  The reward is a constant inside the
GFlowNet loss, so that loss only reaches the policy while the denoising
loss only reaches the decoder and (unless frozen) the denoiser.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .decoder import DecoderNet, append_and_decode, blend
from .diffusion import (
    DenoiserNet,
    MixtureReward,
    NoiseSchedule,
    ToyTask,
    add_noise,
    ldm_loss,
    make_schedule,
    make_toy_task,
    predict_noise,
    pretrain_denoiser,
    sample_reverse,
)
from .errors import ConfigError
from .optim import Adam
from .policy import PolicyNet, apply_terminal_reward, db_loss, replay, rollout

log = logging.getLogger(__name__)


@dataclass
class StepResult:
    step: int
    l_gfn: float
    l_ldm: float
    l_total: float
    log_rewards: np.ndarray
    explore: float


@dataclass
class TrainState:
    config: TrainConfig
    policy: PolicyNet
    decoder: DecoderNet
    denoiser: DenoiserNet
    schedule: NoiseSchedule
    condition: np.ndarray
    task: ToyTask
    oracle: Optional[MixtureReward]
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def num_edges(self) -> int:
        return self.policy.num_edges

    @property
    def num_steps(self) -> int:
        return self.config.graph_config.num_steps

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, module in (("policy", self.policy), ("decoder", self.decoder), ("denoiser", self.denoiser)):
            for name, p in module.named_parameters().items():
                out[f"{prefix}/{name}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {
            "buffer/condition": self.condition,
            "buffer/task_centers": self.task.centers,
            "buffer/task_conditions": self.task.conditions,
        }
        if self.oracle is not None:
            out["buffer/reward_centers"] = self.oracle.centers
            out["buffer/reward_widths"] = self.oracle.widths
            out["buffer/reward_weights"] = self.oracle.weights
        return out

    def trainable_names(self) -> list[str]:
        cfg = self.config
        names = [n for n in self.named_parameters() if n.startswith("policy/")]
        if cfg.train.beta > 0:
            names += [n for n in self.named_parameters() if n.startswith("decoder/")]
            if not cfg.diffusion.freeze_denoiser:
                names += [n for n in self.named_parameters() if n.startswith("denoiser/")]
        return names

    # reward plumbing shared with the evaluation code
    def decode_sets(self, edge_sets: Sequence[Sequence[int]], condition=None) -> np.ndarray:
        cond = self.condition if condition is None else np.asarray(condition, dtype=np.float64)
        decoded = self.decoder.decode(edge_sets, set_mode=self.config.set_mode)
        return blend(decoded, cond, self.config.decoder.gamma).data

    def set_log_rewards(self, edge_sets: Sequence[Sequence[int]], condition=None) -> np.ndarray:
        if self.oracle is None:
            raise ConfigError("exact log-rewards need the analytic reward mode")
        return self.oracle(self.decode_sets(edge_sets, condition))

    def flow_model(self, condition=None) -> "PolicyFlowModel":
        cond = self.condition if condition is None else condition
        return PolicyFlowModel(self.policy, cond)


class PolicyFlowModel:
    """Adapter exposing a policy as a state-scoring flow model."""

    def __init__(self, policy: PolicyNet, condition):
        self.policy = policy
        self.code = policy.encode_condition(np.asarray(condition, dtype=np.float64))

    def evaluate(self, states: np.ndarray):
        states = np.asarray(states, dtype=np.float64)
        nonempty = states.sum(axis=1) > 0
        lf, _, flow = self.policy.heads(states, self.code, with_backward=False)
        lb = np.full(states.shape, np.nan)
        if nonempty.any():
            _, lb_part, _ = self.policy.heads(states[nonempty], self.code)
            lb[nonempty] = lb_part.data
        return lf.data, lb, flow.data[:, 0]


def _spawn_streams(seed: int):
    init_ss, cond_ss, pre_ss, data_ss = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(s) for s in (init_ss, cond_ss, pre_ss, data_ss))


def _mixture_from_config(cfg: TrainConfig, decoder: DecoderNet, condition: np.ndarray) -> Optional[MixtureReward]:
    rc = cfg.reward
    if rc.mode != "analytic":
        return None
    if rc.centers:
        centers = np.asarray(rc.centers, dtype=np.float64)
    else:
        decoded = decoder.decode([tuple(s) for s in rc.center_sets], set_mode=cfg.set_mode)
        centers = blend(decoded, condition, cfg.decoder.gamma).data
    if centers.ndim != 2 or centers.shape[1] != cfg.decoder.s_c:
        raise ConfigError(f"reward centers must have width s_c={cfg.decoder.s_c}")
    k = centers.shape[0]
    widths = np.asarray(rc.widths, dtype=np.float64)
    weights = np.asarray(rc.weights, dtype=np.float64)
    if widths.size not in (1, k) or weights.size not in (1, k):
        raise ConfigError(f"widths/weights need 1 or {k} entries")
    return MixtureReward(centers, widths, weights)


def build_state(config: TrainConfig, pretrain: bool = True) -> TrainState:
    """Fresh, seeded training state.  ``pretrain=False`` skips denoiser pretraining."""
    config.validate()
    g = config.graph_config
    e = g.num_edges
    init_rng, cond_rng, pre_rng, data_rng = _spawn_streams(config.train.seed)
    pc, dc, fc = config.policy, config.decoder, config.diffusion
    policy = PolicyNet(e, dc.s_c, init_rng, graph_dim=pc.h_g, cond_hidden=pc.h_c, hidden=pc.hidden)
    decoder = DecoderNet(e, dc.s_c, init_rng, embed_dim=dc.d_dim, pooling=dc.pooling, embed_scale=dc.embed_scale)
    denoiser = DenoiserNet(fc.data_dim, dc.s_c, fc.t_steps, init_rng, hidden=fc.hidden)
    schedule = make_schedule(fc.t_steps, fc.a_start, fc.a_end)
    condition = config.train.condition_scale * cond_rng.standard_normal(dc.s_c)
    oracle = _mixture_from_config(config, decoder, condition)
    if oracle is not None and oracle.centers.shape[0] == fc.num_modes:
        mode_conditions = oracle.centers.copy()
    else:
        mode_conditions = init_rng.standard_normal((fc.num_modes, dc.s_c))
    if fc.data_dim != 2:
        raise ConfigError("the toy task generates 2-d data; set data_dim = 2")
    task = make_toy_task(fc.num_modes, mode_conditions, radius=fc.radius, spread=fc.spread)
    if pretrain and fc.pretrain_steps > 0:
        losses = pretrain_denoiser(denoiser, task, schedule, pre_rng, steps=fc.pretrain_steps, lr=fc.pretrain_lr)
        log.info("denoiser pretrained: final loss %.4f", float(np.mean(losses[-50:])))
    state = TrainState(
        config=config,
        policy=policy,
        decoder=decoder,
        denoiser=denoiser,
        schedule=schedule,
        condition=condition,
        task=task,
        oracle=oracle,
        optimizer=None,  # set below once trainable names are known
        rng=data_rng,
    )
    params = state.named_parameters()
    state.optimizer = Adam({n: params[n] for n in state.trainable_names()}, lr=config.train.lr)
    return state


def exploration_rate(config: TrainConfig, step: int) -> float:
    """Linear anneal from the start to the end rate over ``max_steps``."""
    pc = config.policy
    total = max(config.train.max_steps, 1)
    frac = min(step / total, 1.0)
    return pc.eps_explore_start + frac * (pc.eps_explore_end - pc.eps_explore_start)


def _denoising_terms(state: TrainState, cond_hat: Tensor):
    """Per-trajectory MSE and L_LDM from one shared ``(z_0, t, eps)`` draw."""
    _, z0 = state.task.sample(1, state.rng)
    t = int(state.rng.integers(1, state.schedule.num_steps + 1))
    z_t, eps = add_noise(z0[0], t, state.schedule, state.rng)
    per_row, l_ldm = ldm_loss(eps, predict_noise(z_t, t, cond_hat, state.denoiser))
    return per_row, l_ldm


def train_step(state: TrainState) -> StepResult:
    cfg = state.config
    alpha, beta = cfg.train.alpha, cfg.train.beta
    m, s = cfg.graph.m, state.num_steps
    explore = exploration_rate(cfg, state.step)

    code = state.policy.encode_condition(state.condition)
    ro = rollout(state.policy, code, m, s, state.rng, explore)
    decoded = state.decoder.decode(ro.trajectories.sequences(), set_mode=cfg.set_mode)
    cond_hat = blend(decoded, state.condition, cfg.decoder.gamma)

    l_ldm = None
    if cfg.reward.mode == "denoiser":
        per_row, l_ldm = _denoising_terms(state, cond_hat)
        log_r = -per_row.data
    else:
        log_r = state.oracle(cond_hat.data)
        if beta > 0:
            _, l_ldm = _denoising_terms(state, cond_hat)

    apply_terminal_reward(ro.ll_diff, Tensor(log_r))
    l_gfn = db_loss(ro.ll_diff)
    total = ad.mul(l_gfn, alpha)
    if l_ldm is not None:
        total = ad.add(total, ad.mul(l_ldm, beta))
    named = [("L_GFN", l_gfn), ("L_total", total), ("log_reward", log_r)]
    if l_ldm is not None:
        named.insert(1, ("L_LDM", l_ldm))
    ad.check_finite(named)

    state.optimizer.zero_grad()
    if total.requires_grad:
        total.backward()
        state.optimizer.step()
    state.step += 1
    result = StepResult(
        step=state.step,
        l_gfn=l_gfn.item(),
        l_ldm=0.0 if l_ldm is None else l_ldm.item(),
        l_total=total.item(),
        log_rewards=np.asarray(log_r),
        explore=explore,
    )
    return result


@dataclass
class FrozenBatch:
    """Everything random about one training step, held fixed."""

    sequences: np.ndarray  # (M, S)
    z_t: np.ndarray
    t: int
    eps: np.ndarray
    log_rewards: np.ndarray


def draw_batch(state: TrainState, rng: np.random.Generator) -> FrozenBatch:
    """Sample a rollout and a denoising draw, and score it at the current parameters."""
    cfg = state.config
    code = state.policy.encode_condition(state.condition)
    ro = rollout(state.policy, code, cfg.graph.m, state.num_steps, rng)
    seqs = np.asarray(ro.trajectories.sequences(), dtype=np.int64)
    _, z0 = state.task.sample(1, rng)
    t = int(rng.integers(1, state.schedule.num_steps + 1))
    z_t, eps = add_noise(z0[0], t, state.schedule, rng)
    cond_hat = blend(state.decoder.decode(seqs, set_mode=cfg.set_mode), state.condition, cfg.decoder.gamma)
    if cfg.reward.mode == "denoiser":
        per_row, _ = ldm_loss(eps, predict_noise(z_t, t, cond_hat, state.denoiser))
        log_r = -per_row.data
    else:
        log_r = state.oracle(cond_hat.data)
    return FrozenBatch(seqs, z_t, t, eps, log_r)


def composite_loss(state: TrainState, batch: FrozenBatch) -> tuple[Tensor, Tensor, Tensor]:
    """``(L_total, L_GFN, L_LDM)`` for a frozen batch under the current parameters.

    The log-rewards stay at their values in ``batch``, matching their
    treatment as constants during training.
    """
    cfg = state.config
    code = state.policy.encode_condition(state.condition)
    acc = replay(state.policy, code, batch.sequences, state.num_steps)
    apply_terminal_reward(acc, Tensor(batch.log_rewards))
    l_gfn = db_loss(acc)
    cond_hat = blend(state.decoder.decode(batch.sequences, set_mode=cfg.set_mode), state.condition, cfg.decoder.gamma)
    _, l_ldm = ldm_loss(batch.eps, predict_noise(batch.z_t, batch.t, cond_hat, state.denoiser))
    total = ad.add(ad.mul(l_gfn, cfg.train.alpha), ad.mul(l_ldm, cfg.train.beta))
    return total, l_gfn, l_ldm


def composite_grad_check(state: TrainState, seed: int = 0, eps: float = 1e-6) -> float:
    """Finite-difference check of ``L_total`` over every policy, decoder and denoiser parameter."""
    batch = draw_batch(state, np.random.default_rng(seed))
    params = list(state.named_parameters().values())
    return ad.grad_check(lambda: composite_loss(state, batch)[0], params, eps=eps)


LOG_FIELDS = ["step", "l_gfn", "l_ldm", "l_total", "mean_log_reward"]


def train(state: TrainState, num_steps: Optional[int] = None, out_dir=None) -> TrainState:
    """Run ``num_steps`` (default: remaining ``max_steps``) steps.

    With ``out_dir`` the per-step losses are appended to ``train_log.csv``,
    periodic checkpoints go to ``ckpt_<step>.bin`` and the final state to
    ``checkpoint.bin``.
    """
    from .checkpoint import save_checkpoint

    cfg = state.config
    if num_steps is None:
        num_steps = max(cfg.train.max_steps - state.step, 0)
    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        fresh = state.step == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_FIELDS)
    try:
        for _ in range(num_steps):
            r = train_step(state)
            state.history.append((r.l_gfn, r.l_ldm, r.l_total))
            if writer is not None:
                writer.writerow([r.step, repr(r.l_gfn), repr(r.l_ldm), repr(r.l_total), repr(float(np.mean(r.log_rewards)))])
            if cfg.train.log_every and r.step % cfg.train.log_every == 0:
                log.info("step %d  L_GFN %.5f  L_LDM %.5f  L_total %.5f", r.step, r.l_gfn, r.l_ldm, r.l_total)
            if out_dir is not None and cfg.train.checkpoint_every and r.step % cfg.train.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"ckpt_{r.step}.bin")
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(state, out_dir / "checkpoint.bin")
    return state


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.empty(0)
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


@dataclass
class SampleResult:
    sequences: list
    cond_hat: np.ndarray  # (M, S_c)
    samples: np.ndarray  # (M, data_dim)


def sample(
    state: TrainState,
    rng: np.random.Generator,
    condition=None,
    num_trajectories: Optional[int] = None,
    extra_edges: Sequence[int] = (),
    shared_noise: bool = False,
) -> SampleResult:
    """Inference: pure-policy trajectories, their blended conditions, and one
    reverse-diffusion sample per trajectory.

    ``shared_noise`` gives every trajectory the same starting point and
    per-step noise, so the samples differ only through their conditions.
    """
    cfg = state.config
    cond = state.condition if condition is None else np.asarray(condition, dtype=np.float64)
    m = cfg.graph.m if num_trajectories is None else int(num_trajectories)
    code = state.policy.encode_condition(cond)
    ro = rollout(state.policy, code, m, state.num_steps, rng, explore=0.0)
    cond_hat = append_and_decode(
        state.decoder, ro.trajectories, extra_edges, cond, cfg.decoder.gamma, set_mode=cfg.set_mode
    ).data
    d = state.denoiser.data_dim
    z_T = rng.standard_normal((1, d)) if shared_noise else rng.standard_normal((m, d))
    samples = sample_reverse(z_T, cond_hat, state.denoiser, state.schedule, rng, shared_noise=shared_noise)
    return SampleResult(ro.trajectories.sequences(), cond_hat, samples)


def sample_edge_sets(state: TrainState, num_rollouts: int, rng: np.random.Generator, condition=None) -> list:
    """Terminal edge sets from ``num_rollouts`` pure-policy rollouts of ``M`` trajectories."""
    cond = state.condition if condition is None else condition
    code = state.policy.encode_condition(np.asarray(cond, dtype=np.float64))
    out = []
    for _ in range(num_rollouts):
        ro = rollout(state.policy, code, state.config.graph.m, state.num_steps, rng)
        out.extend(ro.trajectories.edge_sets())
    return out


def write_samples_csv(result: SampleResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    s_c = result.cond_hat.shape[1]
    d = result.samples.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "edges"] + [f"c_hat_{i}" for i in range(s_c)] + [f"x_{i}" for i in range(d)])
        for i, seq in enumerate(result.sequences):
            w.writerow([i, " ".join(map(str, seq))] + [repr(float(v)) for v in result.cond_hat[i]] + [repr(float(v)) for v in result.samples[i]])
