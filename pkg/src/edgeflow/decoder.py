"""Decode finished trajectories into condition vectors.

Edge indices are embedded, run through a GRU, pooled over time and
projected to the condition width.  The result is blended with the original
condition: ``gamma * decoded + (1 - gamma) * c``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, EdgeIndexError, MaskViolationError
from .latent_graph import TrajectorySet
from .nn import GRUCell, Linear, Module

POOLINGS = ("mean", "last")


class DecoderNet(Module):
    def __init__(
        self,
        num_edges: int,
        cond_dim: int,
        rng: np.random.Generator,
        embed_dim: int = 32,
        pooling: str = "mean",
        embed_scale: float = 0.02,
    ):
        if pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
        self.num_edges = num_edges
        self.cond_dim = cond_dim
        self.pooling = pooling
        # row 0 is the start sentinel
        self.embedding = Tensor(
            embed_scale * rng.standard_normal((num_edges + 1, embed_dim)), requires_grad=True
        )
        self.cell = GRUCell(embed_dim, embed_dim, rng)
        self.projection = Linear(embed_dim, cond_dim, rng)

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    def embed_edges(self, trajectory: Sequence[int], set_mode: bool = True) -> Tensor:
        idx = np.asarray(trajectory, dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > self.num_edges):
            raise EdgeIndexError(f"edge indices {idx.tolist()} outside 1..{self.num_edges}")
        if set_mode:
            idx = np.sort(idx)
        return ad.gather_rows(self.embedding, idx)

    def decode(self, sequences: Sequence[Sequence[int]], set_mode: bool = True) -> Tensor:
        """Condition vectors ``(M, S_c)`` for equal-length edge sequences."""
        seqs = np.asarray([list(s) for s in sequences], dtype=np.int64)
        if seqs.ndim != 2 or seqs.shape[1] == 0:
            raise ContractError("decode needs M non-empty sequences of equal length")
        if seqs.min() < 1 or seqs.max() > self.num_edges:
            raise EdgeIndexError(f"edge indices outside 1..{self.num_edges}")
        if set_mode:
            seqs = np.sort(seqs, axis=1)
        m, length = seqs.shape
        h = Tensor(np.zeros((m, self.embed_dim)))
        hidden = []
        for t in range(length):
            h = self.cell(ad.gather_rows(self.embedding, seqs[:, t]), h)
            hidden.append(h)
        if self.pooling == "mean":
            pooled = ad.mean(ad.stack(hidden, axis=0), axis=0)
        else:
            pooled = hidden[-1]
        return self.projection(pooled)


def decode_trajectories(decoder: DecoderNet, trajs: TrajectorySet, set_mode: bool = True) -> Tensor:
    if not trajs.complete:
        raise ContractError("every trajectory must hold its full step budget before decoding")
    return decoder.decode(trajs.sequences(), set_mode=set_mode)


def blend(decoded, condition, gamma: float) -> Tensor:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"blending factor must lie in [0, 1], got {gamma}")
    decoded, condition = ad.as_tensor(decoded), ad.as_tensor(condition)
    if decoded.shape[-1] != condition.shape[-1]:
        raise ConfigError(f"decoded width {decoded.shape[-1]} != condition width {condition.shape[-1]}")
    return ad.add(ad.mul(decoded, gamma), ad.mul(condition, 1.0 - gamma))


def append_and_decode(
    decoder: DecoderNet,
    trajs: TrajectorySet,
    extra_edges: Sequence[int],
    condition,
    gamma: float,
    set_mode: bool = True,
) -> Tensor:
    """Blend of decoding each trajectory with ``extra_edges`` appended.

    ``trajs`` itself is left untouched.
    """
    extra = [int(e) for e in extra_edges]
    seqs = []
    for seq in trajs.sequences():
        longer = list(seq) + extra
        if len(set(longer)) != len(longer):
            raise MaskViolationError(f"appending {extra} to {list(seq)} repeats an edge")
        seqs.append(longer)
    if not trajs.complete:
        raise ContractError("every trajectory must hold its full step budget before decoding")
    return blend(decoder.decode(seqs, set_mode=set_mode), condition, gamma)
