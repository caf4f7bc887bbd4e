"""Subspace-based hindsight intrinsic reward.

A trajectory is cut at the timesteps where key states were first
achieved.  Each piece is rewarded for closing the Manhattan distance to
its key state, measured only on the indices the key state's
discriminator reads.  The last piece, which ended without reaching a key
state, aims at a subgoal planned from the memory tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .ksmt import KeyStateChain, KeyStateRegistry, Ksmt, NoCandidate, plan_subgoal


class EmptySubspace(ValueError):
    pass


class SubspaceIndexError(IndexError):
    pass


METRICS = ("manhattan",)


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 10.0
    beta: float = 0.1
    metric: str = "manhattan"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {METRICS}")


@dataclass
class Transition:
    s: tuple
    joint_action: tuple
    s_next: tuple
    r_ext: float
    r_blend: float | None = None


@dataclass
class Trajectory:
    """States ``s_0..s_T`` with the ``T`` joint actions and extrinsic rewards between them."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    success: bool = False
    # per-step learner keys, one tuple per agent; only filled by rollouts
    views: list | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(len(self.rewards), -1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if len(self.states) != len(self.rewards) + 1:
            raise ValueError("need exactly one more state than rewards")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def transitions(self) -> list[Transition]:
        s = [tuple(int(v) for v in row) for row in self.states]
        return [
            Transition(s[t], tuple(int(a) for a in self.actions[t]), s[t + 1], float(self.rewards[t]))
            for t in range(len(self))
        ]


@dataclass
class RelabeledTrajectory:
    trajectory: Trajectory
    r_blend: np.ndarray
    chain: KeyStateChain
    planned_symbol: str | None = None
    segments: list[tuple[int, int, str | None]] = field(default_factory=list)

    @property
    def transitions(self) -> list[Transition]:
        out = self.trajectory.transitions
        for tr, r in zip(out, self.r_blend):
            tr.r_blend = float(r)
        return out


def _check(a: Sequence, goal: Sequence, indices: Sequence[int]) -> None:
    if len(indices) == 0:
        raise EmptySubspace("subspace distance needs at least one index")
    if len(goal) != len(indices):
        raise ValueError("goal values must match the subspace indices one to one")
    for i in indices:
        if not 0 <= i < len(a):
            raise SubspaceIndexError(f"index {i} outside state of length {len(a)}")


def subspace_distance(a: Sequence, b_subvalues: Sequence, indices: Sequence[int]) -> float:
    """Manhattan distance between ``a`` restricted to ``indices`` and the goal values.

    Goal values pair positionally with the indices in ascending order.
    """
    _check(a, b_subvalues, indices)
    return float(sum(abs(a[e] - b) for e, b in zip(sorted(indices), b_subvalues)))


def shir_step(s_t: Sequence, s_next: Sequence, goal_subvalues: Sequence, indices: Sequence[int]) -> float:
    return subspace_distance(s_t, goal_subvalues, indices) - subspace_distance(
        s_next, goal_subvalues, indices
    )


def relabel(
    traj: Trajectory,
    chain: KeyStateChain,
    registry: KeyStateRegistry,
    tree: Ksmt | None,
    cfg: RewardConfig,
    rng,
    plan: bool = True,
) -> RelabeledTrajectory:
    """Blend ``alpha * r_ext + beta * r_I`` over every step of ``traj``.

    Steps up to each chain entry aim at the achieving state's own subspace
    values; the tail aims at a subgoal sampled from ``tree`` (exemplar
    values from ``registry``), or gets no intrinsic term when nothing can
    be planned or ``plan`` is off.
    """
    T = len(traj)
    goals: list[tuple[int, int, tuple[int, ...], tuple]] = []
    segments: list[tuple[int, int, str | None]] = []
    t_start = 0
    for t_end, sym in chain:
        if not 0 <= t_end <= T:
            raise ValueError(f"chain timestep {t_end} outside trajectory of length {T}")
        idx = registry.indices[sym]
        goal = tuple(traj.states[t_end, list(idx)]) if idx else ()
        if t_end > t_start:
            goals.append((t_start, t_end, idx, goal))
        segments.append((t_start, t_end, sym))
        t_start = max(t_start, t_end)

    planned = None
    if t_start < T and plan and tree is not None:
        try:
            planned = plan_subgoal(tree, chain, rng)
        except NoCandidate:
            planned = None
        if planned is not None:
            idx, goal = registry.goal(planned)
            goals.append((t_start, T, idx, goal))
    if t_start < T:
        segments.append((t_start, T, planned))

    intrinsic = np.zeros(T, dtype=np.float64)
    for a, b, idx, goal in goals:
        if not idx:
            raise EmptySubspace("key state with an empty subspace cannot be a goal")
        kernels.segment_shaping(traj.states, a, b, np.asarray(idx, dtype=np.int64),
                                np.asarray(goal, dtype=np.float64), intrinsic)
    r_blend = cfg.alpha * traj.rewards + cfg.beta * intrinsic
    return RelabeledTrajectory(traj, r_blend, KeyStateChain(chain), planned, segments)
