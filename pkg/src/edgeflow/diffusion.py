"""Desk-scale conditional diffusion: schedule, noise predictor, losses, rewards.

The retention coefficients of the forward process are called ``a_t`` here
(``alpha`` is reserved for the GFlowNet loss weight).  Noising uses the
closed form ``z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, EdgeIndexError, NumericError, ShapeError
from .nn import MLP, Module
from .optim import Adam


@dataclass(frozen=True)
class NoiseSchedule:
    retention: np.ndarray  # a_1..a_T

    def __post_init__(self):
        a = np.asarray(self.retention, dtype=np.float64)
        if a.ndim != 1 or a.size == 0 or np.any(a < 0) or np.any(a > 1):
            raise ConfigError("retention coefficients must lie in [0, 1]")

    @property
    def num_steps(self) -> int:
        return self.retention.shape[0]

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumprod(self.retention)

    def alpha_bar(self, t: int) -> float:
        """Cumulative retention, with ``alpha_bar(0) == 1``."""
        if not 0 <= t <= self.num_steps:
            raise EdgeIndexError(f"timestep {t} outside 0..{self.num_steps}")
        return 1.0 if t == 0 else float(np.prod(self.retention[:t]))


def make_schedule(num_steps: int, a_first: float, a_last: float) -> NoiseSchedule:
    """Linear interpolation of retention coefficients from ``a_first`` to ``a_last``."""
    if num_steps < 1:
        raise ConfigError("a schedule needs at least one step")
    if not 0.0 < a_last <= a_first <= 1.0:
        raise ConfigError(f"need 0 < a_last <= a_first <= 1, got {a_first}, {a_last}")
    return NoiseSchedule(np.linspace(a_first, a_last, num_steps))


def add_noise(z0, t: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """Return ``(z_t, eps)`` with ``eps ~ N(0, I)`` drawn from ``rng``."""
    if not 1 <= t <= schedule.num_steps:
        raise EdgeIndexError(f"timestep {t} outside 1..{schedule.num_steps}")
    z0 = np.asarray(z0, dtype=np.float64)
    eps = rng.standard_normal(z0.shape)
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps, eps


def timestep_features(t, num_steps: int, width: int = 8) -> np.ndarray:
    """Sinusoidal features of ``t / T``; shape ``(len(t), width)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) / num_steps
    freqs = np.pi * 2.0 ** np.arange(width // 2)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class DenoiserNet(Module):
    """Noise predictor: tanh MLP over ``[z_t, time features, condition]``."""

    def __init__(
        self,
        data_dim: int,
        cond_dim: int,
        num_timesteps: int,
        rng: np.random.Generator,
        hidden: int = 64,
        time_width: int = 8,
    ):
        self.data_dim = data_dim
        self.cond_dim = cond_dim
        self.num_timesteps = num_timesteps
        self.time_width = time_width
        self.mlp = MLP([data_dim + time_width + cond_dim, hidden, hidden, data_dim], rng)

    def __call__(self, z_t, t, cond) -> Tensor:
        return predict_noise(z_t, t, cond, self)


def predict_noise(z_t, t, cond, net: DenoiserNet) -> Tensor:
    """``eps_hat`` for every row of ``cond``; a single ``z_t`` row is shared by all rows."""
    cond = ad.as_tensor(cond)
    if cond.ndim == 1:
        cond = ad.reshape(cond, (1, -1))
    rows = cond.shape[0]
    if cond.shape[1] != net.cond_dim:
        raise ShapeError(f"condition width {cond.shape[1]} != {net.cond_dim}")
    z = ad.as_tensor(z_t)
    if z.ndim == 1:
        z = ad.reshape(z, (1, -1))
    if z.shape[1] != net.data_dim:
        raise ShapeError(f"data width {z.shape[1]} != {net.data_dim}")
    if z.shape[0] == 1 and rows > 1:
        z = ad.gather_rows(z, [0] * rows)
    elif z.shape[0] != rows:
        raise ShapeError(f"{z.shape[0]} data rows for {rows} conditions")
    feats = timestep_features(t, net.num_timesteps, net.time_width)
    if feats.shape[0] == 1:
        feats = np.repeat(feats, rows, axis=0)
    return net.mlp(ad.concat([z, Tensor(feats), cond], axis=1))


def ldm_loss(eps, eps_hat) -> tuple[Tensor, Tensor]:
    """Per-row mean squared error against ``eps`` and its mean over rows."""
    eps_hat = ad.as_tensor(eps_hat)
    eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=np.float64)
    if eps.ndim == 1:
        eps = np.broadcast_to(eps, eps_hat.shape)
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"noise shape {eps.shape} != prediction shape {eps_hat.shape}")
    per_row = ad.mse(eps_hat, Tensor(eps), axis=1)
    return per_row, ad.mean(per_row)


def log_reward(mse) -> np.ndarray:
    """``log R = -mse``; the reward itself is never exponentiated for training."""
    mse = np.asarray(mse, dtype=np.float64)
    if not np.all(np.isfinite(mse)):
        raise NumericError("mse must be finite")
    if np.any(mse < 0):
        raise ContractError("mse cannot be negative")
    return -mse


@dataclass
class MixtureReward:
    """Isotropic Gaussian-mixture reward over condition vectors."""

    centers: np.ndarray  # (K, S_c)
    widths: np.ndarray  # (K,)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        k = self.centers.shape[0]
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=np.float64), (k,)).copy()
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), (k,)).copy()
        if np.any(self.weights <= 0) or np.any(self.widths <= 0):
            raise ConfigError("mixture weights and widths must be positive")

    def __call__(self, cond_hat) -> np.ndarray:
        return analytic_log_reward(cond_hat, self)


def analytic_log_reward(cond_hat, oracle: MixtureReward) -> np.ndarray:
    """``log sum_k w_k exp(-|c - mu_k|^2 / (2 sigma_k^2))`` per row."""
    x = np.atleast_2d(np.asarray(cond_hat.data if isinstance(cond_hat, Tensor) else cond_hat))
    if not np.all(np.isfinite(x)):
        raise NumericError("condition vectors must be finite")
    sq = ((x[:, None, :] - oracle.centers[None, :, :]) ** 2).sum(axis=2)
    terms = np.log(oracle.weights)[None, :] - sq / (2.0 * oracle.widths[None, :] ** 2)
    top = terms.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True)))[:, 0]


def sample_reverse(
    z_T,
    cond,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    shared_noise: bool = False,
) -> np.ndarray:
    """Ancestral sampling from ``t = T`` down to 1, one row per condition row.

    With ``shared_noise`` every row receives the same per-step noise draw,
    so differences between rows come only from their conditions and ``z_T``.
    """
    cond = np.atleast_2d(np.asarray(cond.data if isinstance(cond, Tensor) else cond))
    z = np.atleast_2d(np.array(z_T, dtype=np.float64))
    if z.shape[1] != net.data_dim or cond.shape[1] != net.cond_dim:
        raise ShapeError("data or condition width does not match the denoiser")
    if z.shape[0] == 1 and cond.shape[0] > 1:
        z = np.repeat(z, cond.shape[0], axis=0)
    if z.shape[0] != cond.shape[0]:
        raise ShapeError(f"{z.shape[0]} starting points for {cond.shape[0]} conditions")
    if np.any(schedule.retention == 0):
        raise ConfigError("reverse sampling needs every retention coefficient above 0")
    abar = schedule.cumulative
    for t in range(schedule.num_steps, 0, -1):
        a_t = schedule.retention[t - 1]
        eps_hat = predict_noise(z, t, cond, net).data
        # a_t == 1 adds no noise at this step, so nothing is removed either
        coef = 0.0 if a_t == 1.0 else (1.0 - a_t) / np.sqrt(1.0 - abar[t - 1])
        z = (z - coef * eps_hat) / np.sqrt(a_t)
        if t > 1:
            shape = (1, z.shape[1]) if shared_noise else z.shape
            z = z + np.sqrt(1.0 - a_t) * rng.standard_normal(shape)
    return z


@dataclass
class ToyTask:
    """2-d Gaussian blobs on a circle, one per mode, each tied to a condition vector."""

    centers: np.ndarray  # (K, 2)
    conditions: np.ndarray  # (K, S_c)
    spread: float = 0.2

    @property
    def num_modes(self) -> int:
        return self.centers.shape[0]

    @property
    def ambiguous_condition(self) -> np.ndarray:
        return self.conditions.mean(axis=0)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(0, self.num_modes, size=n)
        points = self.centers[labels] + self.spread * rng.standard_normal((n, self.centers.shape[1]))
        return labels, points


def make_toy_task(
    num_modes: int,
    conditions: np.ndarray,
    radius: float = 2.0,
    spread: float = 0.2,
) -> ToyTask:
    angles = 2.0 * np.pi * (np.arange(num_modes) + 0.5) / num_modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if conditions.shape[0] != num_modes:
        raise ConfigError(f"{conditions.shape[0]} conditions for {num_modes} modes")
    return ToyTask(centers, conditions, spread)


def pretrain_denoiser(
    net: DenoiserNet,
    task: ToyTask,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    steps: int = 2000,
    batch_size: int = 128,
    lr: float = 2e-3,
    condition_noise: float = 0.0,
) -> list[float]:
    """Fit ``net`` on (mode condition, blob sample) pairs; returns the loss curve.

    ``condition_noise`` jitters the conditions so the net also behaves
    sensibly between the mode condition vectors.
    """
    opt = Adam(net.named_parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        labels, z0 = task.sample(batch_size, rng)
        t = rng.integers(1, schedule.num_steps + 1, size=batch_size)
        eps = rng.standard_normal(z0.shape)
        abar = schedule.cumulative[t - 1][:, None]
        z_t = np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps
        cond = task.conditions[labels]
        if condition_noise > 0:
            cond = cond + condition_noise * rng.standard_normal(cond.shape)
        _, loss = ldm_loss(eps, predict_noise(z_t, t, cond, net))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses
