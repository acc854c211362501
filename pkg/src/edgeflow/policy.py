"""Edge-adding GFlowNet policy trained with the detailed-balance objective.

The policy sees each partial trajectory as the multi-hot vector of edges
added so far, concatenated with an encoding of the condition.  One head
emits ``E`` forward logits plus a log state-flow, the other ``E`` backward
logits.  :class:`LLDiff` accumulates per-transition log-ratios while a
rollout runs; the squared mean of that table is the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .errors import ContractError, DegenerateDistributionError, NumericError, ShapeError
from .latent_graph import TrajectorySet, append_edges, init_trajectories
from .nn import MLP, Linear, Module


@dataclass
class PolicyOutputs:
    log_forward: Tensor  # (M, E)
    log_backward: Optional[Tensor]  # (M, E); None while nothing has been added
    log_flow: Tensor  # (M, 1)


class PolicyNet(Module):
    def __init__(
        self,
        num_edges: int,
        cond_dim: int,
        rng: np.random.Generator,
        graph_dim: int = 64,
        cond_hidden: int = 64,
        hidden: int = 64,
    ):
        self.num_edges = num_edges
        self.cond_dim = cond_dim
        self.cond_encoder = Linear(cond_dim, cond_hidden, rng)
        self.graph_encoder = Linear(num_edges, graph_dim, rng)
        width = graph_dim + cond_hidden
        self.forward_head = MLP([width, hidden, hidden, num_edges + 1], rng)
        self.backward_head = MLP([width, hidden, hidden, num_edges], rng)

    def encode_condition(self, condition) -> Tensor:
        c = ad.as_tensor(condition)
        if c.shape != (self.cond_dim,):
            raise ShapeError(f"condition must have shape ({self.cond_dim},), got {c.shape}")
        return ad.reshape(self.cond_encoder(ad.reshape(c, (1, self.cond_dim))), (-1,))

    def _representation(self, states: np.ndarray, cond_code: Tensor) -> Tensor:
        rows = states.shape[0]
        rep_g = self.graph_encoder(Tensor(states))
        rep_c = ad.gather_rows(ad.reshape(cond_code, (1, -1)), [0] * rows)
        return ad.concat([rep_g, rep_c], axis=1)

    def heads(self, states: np.ndarray, cond_code: Tensor, with_backward: bool = True):
        """Raw outputs for arbitrary multi-hot states ``(K, E)``.

        Returns ``(log_forward, log_backward, log_flow)``; ``log_backward``
        is ``None`` when ``with_backward`` is false.
        """
        states = np.asarray(states, dtype=np.float64)
        rep = self._representation(states, cond_code)
        pred = self.forward_head(rep)
        e = self.num_edges
        log_forward = ad.masked_log_softmax(pred[:, :e], states)
        log_flow = pred[:, e:]
        log_backward = None
        if with_backward:
            log_backward = ad.masked_log_softmax(self.backward_head(rep), 1.0 - states)
        return log_forward, log_backward, log_flow


def policy_forward(net: PolicyNet, trajs: TrajectorySet, cond_code: Tensor) -> PolicyOutputs:
    if np.any(trajs.lengths >= trajs.num_steps):
        raise ContractError("a trajectory is already complete; no forward action is legal")
    # the backward distribution is undefined until something has been added
    with_backward = bool(np.all(trajs.lengths > 0))
    log_forward, log_backward, log_flow = net.heads(
        trajs.state_matrix(), cond_code, with_backward=with_backward
    )
    return PolicyOutputs(log_forward, log_backward, log_flow)


def sample_actions(log_forward, rng: np.random.Generator, explore: float = 0.0) -> np.ndarray:
    """One edge index (1-based) per row drawn from ``exp(log_forward)``.

    ``explore`` mixes in the uniform distribution over legal edges.
    """
    logp = log_forward.data if isinstance(log_forward, Tensor) else np.asarray(log_forward)
    if np.isnan(logp).any():
        raise NumericError("forward log-probabilities contain NaN")
    legal = logp > NEG_INF / 2
    if not legal.any(axis=1).all():
        raise DegenerateDistributionError("a row has no legal edge to sample")
    probs = np.where(legal, np.exp(np.where(legal, logp, 0.0)), 0.0)
    if explore > 0.0:
        uniform = legal / legal.sum(axis=1, keepdims=True)
        probs = (1.0 - explore) * probs + explore * uniform
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    choice = (cdf <= u[:, None]).sum(axis=1)
    # guard against landing on a zero-probability tail entry through roundoff
    last_legal = probs.shape[1] - 1 - np.argmax(legal[:, ::-1], axis=1)
    choice = np.minimum(choice, last_legal)
    return choice + 1


class LLDiff:
    """``(S + 1) x M`` table of per-transition log-ratios; row 0 stays zero."""

    def __init__(self, num_steps: int, num_trajectories: int):
        self.num_steps = num_steps
        self.num_trajectories = num_trajectories
        self._terms: list[list[Tensor]] = [[] for _ in range(num_steps + 1)]

    def add(self, row: int, value: Tensor) -> None:
        if not 1 <= row <= self.num_steps:
            raise ContractError(f"row {row} outside 1..{self.num_steps}")
        value = ad.as_tensor(value)
        if value.shape != (self.num_trajectories,):
            raise ShapeError(f"row update must have shape ({self.num_trajectories},)")
        self._terms[row].append(value)

    def subtract(self, row: int, value: Tensor) -> None:
        self.add(row, ad.mul(value, -1.0))

    def row(self, row: int) -> Tensor:
        terms = self._terms[row]
        if not terms:
            return Tensor(np.zeros(self.num_trajectories))
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out

    def matrix(self) -> Tensor:
        return ad.stack([self.row(i) for i in range(self.num_steps + 1)], axis=0)


def accumulate_ll_diff(
    acc: LLDiff,
    step: int,
    outputs: PolicyOutputs,
    actions,
    previous_actions=None,
) -> None:
    """Flow bookkeeping for the transition ``s_{step-1} -> s_step``.

    ``outputs`` are evaluated at ``s_{step-1}``.  Row ``step`` gains
    ``log F(s_{step-1}) + log P_F(action)``.  For ``step > 1`` the previous
    transition is closed: row ``step - 1`` loses ``log F(s_{step-1})`` and
    ``log P_B`` of removing ``previous_actions`` from ``s_{step-1}``.
    """
    if not 1 <= step <= acc.num_steps:
        raise ContractError(f"step {step} outside 1..{acc.num_steps}")
    actions = np.asarray(actions, dtype=np.int64)
    log_flow = ad.reshape(outputs.log_flow, (-1,))
    acc.add(step, ad.add(log_flow, ad.pick(outputs.log_forward, actions - 1)))
    if step > 1:
        if outputs.log_backward is None or previous_actions is None:
            raise ContractError("closing a transition needs backward log-probs and the previous actions")
        prev = np.asarray(previous_actions, dtype=np.int64)
        acc.subtract(step - 1, ad.add(log_flow, ad.pick(outputs.log_backward, prev - 1)))


def apply_terminal_reward(acc: LLDiff, log_reward) -> None:
    acc.subtract(acc.num_steps, ad.as_tensor(log_reward))


def db_loss(acc) -> Tensor:
    """Mean of squared entries over the whole table, row 0 included."""
    table = acc.matrix() if isinstance(acc, LLDiff) else ad.as_tensor(acc)
    if not np.all(np.isfinite(table.data)):
        raise NumericError("ll_diff holds non-finite entries")
    return ad.mean(ad.square(table))


@dataclass
class Rollout:
    trajectories: TrajectorySet
    ll_diff: LLDiff


def rollout(
    net: PolicyNet,
    cond_code: Tensor,
    num_trajectories: int,
    num_steps: int,
    rng: np.random.Generator,
    explore: float = 0.0,
) -> Rollout:
    """Build ``M`` trajectories of ``S`` edges, filling ``ll_diff`` rows 1..S.

    The terminal reward is not applied; see :func:`apply_terminal_reward`.
    """
    trajs = init_trajectories(num_trajectories, net.num_edges, num_steps)
    acc = LLDiff(num_steps, num_trajectories)
    previous = None
    for step in range(1, num_steps + 1):
        outputs = policy_forward(net, trajs, cond_code)
        actions = sample_actions(outputs.log_forward, rng, explore)
        accumulate_ll_diff(acc, step, outputs, actions, previous)
        trajs = append_edges(trajs, actions)
        previous = actions
    return Rollout(trajs, acc)


def replay(net: PolicyNet, cond_code: Tensor, sequences, num_steps: int) -> LLDiff:
    """Rebuild ``ll_diff`` along fixed edge sequences (no sampling).

    Used to re-evaluate the loss of a given rollout under perturbed
    parameters, e.g. for finite-difference checks.
    """
    seqs = np.asarray(sequences, dtype=np.int64)
    m = seqs.shape[0]
    trajs = init_trajectories(m, net.num_edges, num_steps)
    acc = LLDiff(num_steps, m)
    previous = None
    for step in range(1, seqs.shape[1] + 1):
        outputs = policy_forward(net, trajs, cond_code)
        actions = seqs[:, step - 1]
        accumulate_ll_diff(acc, step, outputs, actions, previous)
        trajs = append_edges(trajs, actions)
        previous = actions
    return acc
