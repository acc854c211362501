"""Verification and evaluation metrics.

Exhaustive target distributions, total-variation distance, detailed-balance
residual audits, the Vendi diversity score, mode coverage and edge
frequency comparisons.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import ContractError, EnumerationTooLargeError, NumericError
from .latent_graph import DEFAULT_ENUMERATION_CAP, enumerate_terminal_sets, multi_hot

NORMALIZATION_TOL = 1e-12
EIGEN_FLOOR = -1e-10


@dataclass(frozen=True)
class TerminalDistribution:
    support: tuple  # sorted edge tuples, lexicographic
    probs: np.ndarray

    def __post_init__(self):
        if len(set(self.support)) != len(self.support):
            raise ContractError("support entries must be unique")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.support),) or np.any(p < 0):
            raise ContractError("probabilities must be nonnegative, one per support entry")
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL * max(1, len(p)):
            raise ContractError(f"probabilities sum to {p.sum()!r}, not 1")

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs.tolist()))

    def prob(self, item) -> float:
        return self.as_dict().get(tuple(item), 0.0)


def distribution_from_log_weights(support: Sequence[tuple], log_weights) -> TerminalDistribution:
    """Normalize ``exp(log_weights)`` over ``support`` and sort lexicographically."""
    lw = np.asarray(log_weights, dtype=np.float64)
    if not np.all(np.isfinite(lw)):
        raise NumericError("log weights must be finite")
    order = sorted(range(len(support)), key=lambda i: tuple(support[i]))
    lw = lw[order]
    p = np.exp(lw - lw.max())
    p /= p.sum()
    return TerminalDistribution(tuple(tuple(support[i]) for i in order), p)


def target_distribution(
    log_reward_fn: Callable[[list], np.ndarray],
    num_edges: int,
    num_steps: int,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> TerminalDistribution:
    """``R(x) / Z`` over every size-``num_steps`` edge set.

    ``log_reward_fn`` maps a list of edge tuples to their log-rewards.
    """
    support = enumerate_terminal_sets(num_edges, num_steps, cap)
    return distribution_from_log_weights(support, log_reward_fn(support))


def empirical_terminal_distribution(edge_sets: Iterable[Sequence[int]]) -> TerminalDistribution:
    counts = Counter(tuple(sorted(s)) for s in edge_sets)
    if not counts:
        raise ContractError("no samples")
    support = sorted(counts)
    freq = np.array([counts[s] for s in support], dtype=np.float64)
    return TerminalDistribution(tuple(support), freq / freq.sum())


def tv_distance(p: TerminalDistribution, q: TerminalDistribution) -> float:
    pd, qd = p.as_dict(), q.as_dict()
    keys = set(pd) | set(qd)
    return 0.5 * math.fsum(abs(pd.get(k, 0.0) - qd.get(k, 0.0)) for k in keys)


class FlowModel(Protocol):
    """Anything that scores batches of multi-hot states.

    ``evaluate(states)`` returns ``(log_forward, log_backward, log_flow)``
    as arrays of shapes ``(K, E)``, ``(K, E)`` and ``(K,)``; backward rows of
    the empty state are ignored.
    """

    def evaluate(self, states: np.ndarray) -> tuple: ...


@dataclass
class ResidualReport:
    max_abs: float
    mean_square: float
    residuals: np.ndarray
    transitions: list  # (parent edge set, added edge)


def db_residuals(
    model: FlowModel,
    log_reward_fn: Callable[[list], np.ndarray],
    num_edges: int,
    num_steps: int,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ResidualReport:
    """Detailed-balance log-ratios over every legal transition.

    Intermediate transition ``s -> s'``:
    ``log F(s) + log P_F(s'|s) - log F(s') - log P_B(s|s')``.
    Transition into a terminal ``x``: ``log F(s) + log P_F(x|s) - log R(x)``.
    """
    levels = [[()]]
    for size in range(1, num_steps + 1):
        count = math.comb(num_edges, size)
        if count > cap:
            raise EnumerationTooLargeError(f"{count} states at depth {size} exceed cap {cap}")
        levels.append(enumerate_terminal_sets(num_edges, size, cap))
    scored = {}
    for size in range(num_steps):
        states = levels[size]
        lf, lb, flow = model.evaluate(multi_hot(states, num_edges))
        for k, s in enumerate(states):
            scored[s] = (lf[k], lb[k] if size > 0 else None, float(np.reshape(flow, -1)[k]))
    terminal = levels[num_steps]
    log_r = dict(zip(terminal, np.asarray(log_reward_fn(terminal), dtype=np.float64)))
    residuals, transitions = [], []
    for size in range(num_steps):
        for s in levels[size]:
            lf, _, flow = scored[s]
            for e in range(1, num_edges + 1):
                if e in s:
                    continue
                child = tuple(sorted(s + (e,)))
                head = flow + lf[e - 1]
                if size + 1 == num_steps:
                    r = head - log_r[child]
                else:
                    _, c_lb, c_flow = scored[child]
                    r = head - c_flow - c_lb[e - 1]
                residuals.append(r)
                transitions.append((s, e))
    res = np.asarray(residuals)
    if not np.all(np.isfinite(res)):
        raise NumericError("non-finite residuals")
    return ResidualReport(float(np.abs(res).max()), float(np.mean(res**2)), res, transitions)


def _gram(samples: np.ndarray, kernel: str, bandwidth: Optional[float]) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if kernel == "linear":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ContractError("normalized linear kernel is undefined for zero vectors")
        u = x / norms
        return u @ u.T
    if kernel == "rbf":
        sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        if bandwidth is None:
            off = np.sqrt(sq[np.triu_indices(len(x), k=1)])
            bandwidth = float(np.median(off)) if off.size and np.median(off) > 0 else 1.0
        return np.exp(-sq / (2.0 * bandwidth**2))
    raise ContractError(f"unknown kernel {kernel!r}")


def vendi_score(samples, kernel: str = "linear", bandwidth: Optional[float] = None) -> float:
    """``exp`` of the Shannon entropy of the eigenvalues of ``K / n``.

    ``kernel`` is ``"linear"`` (cosine similarity) or ``"rbf"``; the RBF
    bandwidth defaults to the median pairwise distance.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = x.shape[0]
    if n < 1:
        raise ContractError("need at least one sample")
    eig = np.linalg.eigvalsh(_gram(x, kernel, bandwidth) / n)
    if eig.min() < EIGEN_FLOOR:
        raise NumericError(f"Gram matrix is not PSD (eigenvalue {eig.min():.3e})")
    eig = np.clip(eig, 0.0, None)
    nz = eig[eig > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def mode_coverage(samples, centers, radius: float) -> float:
    if radius <= 0:
        raise ContractError("radius must be positive")
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    c = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    dist = np.linalg.norm(x[:, None, :] - c[None, :, :], axis=2)
    return float(np.mean((dist <= radius).any(axis=0)))


@dataclass(frozen=True)
class EdgeFrequency:
    edge: int
    freq_a: float
    freq_b: float

    @property
    def delta(self) -> float:
        return self.freq_a - self.freq_b


def edge_frequency_delta(
    trajs_a: Sequence[Sequence[int]],
    trajs_b: Sequence[Sequence[int]],
    num_edges: int,
    k: int,
) -> list[EdgeFrequency]:
    """Top-``k`` edges by inclusion frequency in ``a`` minus that in ``b``.

    Ties go to the smaller edge index.
    """
    if not trajs_a or not trajs_b:
        raise ContractError("both trajectory collections must be nonempty")
    if not 0 <= k <= num_edges:
        raise ContractError(f"k={k} outside 0..{num_edges}")
    fa = multi_hot(trajs_a, num_edges).mean(axis=0)
    fb = multi_hot(trajs_b, num_edges).mean(axis=0)
    order = sorted(range(num_edges), key=lambda i: (-(fa[i] - fb[i]), i))
    return [EdgeFrequency(i + 1, float(fa[i]), float(fb[i])) for i in order[:k]]


def write_metrics(rows: Sequence[dict], csv_path, json_path=None) -> None:
    """Write ``metric,instance,seed,value`` rows as CSV and mirror them to JSON."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["metric", "instance", "seed", "value"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row[f] for f in fields})
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump([{f: row[f] for f in fields} for row in rows], fh, indent=2, sort_keys=True)
            fh.write("\n")
