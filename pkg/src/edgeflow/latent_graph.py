"""Combinatorics of the undirected latent graph.

Edges of an ``N``-node graph are numbered ``1..E`` in row-major upper
triangular order, ``E = N(N-1)/2``; index ``0`` is reserved for the start
sentinel every trajectory begins with.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    BudgetError,
    ConfigError,
    EdgeIndexError,
    EnumerationTooLargeError,
    InvalidGraphError,
    InvalidSparsityError,
    MaskViolationError,
)

DEFAULT_ENUMERATION_CAP = 200_000


def edge_count(num_nodes: int) -> int:
    if num_nodes < 2:
        raise InvalidGraphError(f"a latent graph needs at least 2 nodes, got {num_nodes}")
    return num_nodes * (num_nodes - 1) // 2


def step_budget(num_nodes: int, sparsity: float) -> int:
    """Number of edges each trajectory receives, ``floor((1 - rho) * E)``."""
    if not 0.0 <= sparsity < 1.0:
        raise InvalidSparsityError(f"sparsity must lie in [0, 1), got {sparsity}")
    total = edge_count(num_nodes)
    # tolerance absorbs products like 0.3 * 28 = 8.399999...
    budget = math.floor((1.0 - sparsity) * total + 1e-9)
    if budget < 1:
        raise InvalidSparsityError(
            f"sparsity {sparsity} leaves no edges on a {num_nodes}-node graph"
        )
    return budget


def _row_offset(i: int, num_nodes: int) -> int:
    return i * num_nodes - i * (i + 1) // 2


def edge_to_pair(edge: int, num_nodes: int) -> tuple[int, int]:
    total = edge_count(num_nodes)
    if not 1 <= edge <= total:
        raise EdgeIndexError(f"edge {edge} outside 1..{total}")
    for i in range(num_nodes - 1):
        last = _row_offset(i + 1, num_nodes)
        if edge <= last:
            return i, i + edge - _row_offset(i, num_nodes)
    raise AssertionError("unreachable")


def pair_to_edge(i: int, j: int, num_nodes: int) -> int:
    if not (0 <= i < j < num_nodes):
        raise EdgeIndexError(f"pair ({i}, {j}) is not a valid edge of a {num_nodes}-node graph")
    return _row_offset(i, num_nodes) + (j - i)


@dataclass(frozen=True)
class GraphConfig:
    """Sizes governing the latent graph and the sampler built on it.

    ``steps`` overrides the sparsity-derived budget when given; published
    configurations whose step count disagrees with the floor rule are
    reproduced this way.
    """

    num_nodes: int
    sparsity: float
    num_trajectories: int = 1
    steps: Optional[int] = None

    def __post_init__(self):
        total = edge_count(self.num_nodes)
        if self.num_trajectories < 1:
            raise ConfigError("num_trajectories must be at least 1")
        if self.steps is None:
            step_budget(self.num_nodes, self.sparsity)
        elif not 1 <= self.steps <= total:
            raise InvalidSparsityError(f"step override {self.steps} outside 1..{total}")
        elif not 0.0 <= self.sparsity < 1.0:
            raise InvalidSparsityError(f"sparsity must lie in [0, 1), got {self.sparsity}")

    @property
    def num_edges(self) -> int:
        return edge_count(self.num_nodes)

    @property
    def num_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return step_budget(self.num_nodes, self.sparsity)

    @property
    def derived_steps(self) -> int:
        return step_budget(self.num_nodes, self.sparsity)

    def to_dict(self) -> dict:
        return {
            "n": self.num_nodes,
            "rho": self.sparsity,
            "m": self.num_trajectories,
            "s_override": self.steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphConfig":
        return cls(
            num_nodes=int(d["n"]),
            sparsity=float(d["rho"]),
            num_trajectories=int(d.get("m", 1)),
            steps=None if d.get("s_override") is None else int(d["s_override"]),
        )


@dataclass(frozen=True)
class TrajectorySet:
    """``M`` partially built trajectories plus their availability masks.

    Both masks use exclude-marked semantics: a 1 removes the edge from the
    corresponding distribution.  ``forward_mask`` marks added edges (they
    cannot be added again); ``backward_mask`` starts all ones and is cleared
    where an edge was added, so only added edges can be removed.
    """

    edges: np.ndarray  # (M, S) int, 0-padded
    lengths: np.ndarray  # (M,) int
    forward_mask: np.ndarray  # (M, E) int8
    backward_mask: np.ndarray  # (M, E) int8
    num_steps: int = field(default=0)

    @property
    def num_trajectories(self) -> int:
        return self.edges.shape[0]

    @property
    def num_edges(self) -> int:
        return self.forward_mask.shape[1]

    @property
    def complete(self) -> bool:
        return bool(np.all(self.lengths == self.num_steps))

    def sequences(self) -> list[tuple[int, ...]]:
        """Edge indices of each trajectory in insertion order."""
        return [tuple(int(e) for e in row[:n]) for row, n in zip(self.edges, self.lengths)]

    def edge_sets(self) -> list[tuple[int, ...]]:
        return [tuple(sorted(seq)) for seq in self.sequences()]

    def state_matrix(self) -> np.ndarray:
        """Order-free multi-hot encoding of added edges, shape (M, E)."""
        return self.forward_mask.astype(np.float64)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return iter(self.sequences())


def init_trajectories(num_trajectories: int, num_edges: int, num_steps: int) -> TrajectorySet:
    if num_trajectories < 1:
        raise ConfigError("at least one trajectory is required")
    if not 1 <= num_steps <= num_edges:
        raise InvalidSparsityError(f"step budget {num_steps} outside 1..{num_edges}")
    return TrajectorySet(
        edges=np.zeros((num_trajectories, num_steps), dtype=np.int64),
        lengths=np.zeros(num_trajectories, dtype=np.int64),
        forward_mask=np.zeros((num_trajectories, num_edges), dtype=np.int8),
        backward_mask=np.ones((num_trajectories, num_edges), dtype=np.int8),
        num_steps=num_steps,
    )


def append_edges(trajs: TrajectorySet, actions: Sequence[int]) -> TrajectorySet:
    """Add one edge to every trajectory; returns a new set."""
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    m = trajs.num_trajectories
    if actions.shape[0] != m:
        raise ConfigError(f"expected {m} actions, got {actions.shape[0]}")
    if np.any(actions < 1) or np.any(actions > trajs.num_edges):
        raise EdgeIndexError(f"actions {actions.tolist()} outside 1..{trajs.num_edges}")
    if np.any(trajs.lengths >= trajs.num_steps):
        raise BudgetError(f"trajectories already hold {trajs.num_steps} edges")
    rows = np.arange(m)
    cols = actions - 1
    if np.any(trajs.forward_mask[rows, cols]):
        bad = rows[trajs.forward_mask[rows, cols] == 1].tolist()
        raise MaskViolationError(f"edge already present in trajectories {bad}")
    edges = trajs.edges.copy()
    edges[rows, trajs.lengths] = actions
    fwd = trajs.forward_mask.copy()
    bwd = trajs.backward_mask.copy()
    fwd[rows, cols] += 1
    bwd[rows, cols] -= 1
    return TrajectorySet(edges, trajs.lengths + 1, fwd, bwd, trajs.num_steps)


def trajectories_from_sequences(
    sequences: Sequence[Sequence[int]], num_edges: int, num_steps: Optional[int] = None
) -> TrajectorySet:
    """Rebuild a set by replaying per-trajectory edge sequences of equal length."""
    lengths = {len(s) for s in sequences}
    if len(lengths) != 1:
        raise ConfigError("all sequences must have the same length")
    (length,) = lengths
    trajs = init_trajectories(len(sequences), num_edges, num_steps or max(length, 1))
    for step in range(length):
        trajs = append_edges(trajs, [s[step] for s in sequences])
    return trajs


def _check_cap(count: int, cap: int) -> None:
    if count > cap:
        raise EnumerationTooLargeError(f"{count} terminal objects exceed the enumeration cap {cap}")


def enumerate_terminal_sets(
    num_edges: int, num_steps: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[tuple[int, ...]]:
    """All size-``num_steps`` subsets of ``1..num_edges`` in lexicographic order."""
    if not 0 <= num_steps <= num_edges:
        raise ConfigError(f"cannot choose {num_steps} of {num_edges} edges")
    _check_cap(math.comb(num_edges, num_steps), cap)
    return list(itertools.combinations(range(1, num_edges + 1), num_steps))


def enumerate_terminal_sequences(
    num_edges: int, num_steps: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[tuple[int, ...]]:
    """Ordered variant used when the reward depends on insertion order."""
    if not 0 <= num_steps <= num_edges:
        raise ConfigError(f"cannot choose {num_steps} of {num_edges} edges")
    _check_cap(math.perm(num_edges, num_steps), cap)
    return list(itertools.permutations(range(1, num_edges + 1), num_steps))


def multi_hot(edge_sets: Sequence[Sequence[int]], num_edges: int) -> np.ndarray:
    out = np.zeros((len(edge_sets), num_edges), dtype=np.float64)
    for row, edges in enumerate(edge_sets):
        for e in edges:
            out[row, e - 1] = 1.0
    return out
