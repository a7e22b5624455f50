"""Policy interface and scripted stand-ins for a trained reaching policy.

A policy maps an :class:`Observation` to an :class:`Action` holding a raw,
unclipped joint delta (radians) plus a gripper flag.  Policies never touch
the environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

__all__ = [
    "Action",
    "GreedyPolicy",
    "Observation",
    "Policy",
    "RandomPolicy",
    "ReplayPolicy",
    "TraceLoadError",
    "ZeroPolicy",
    "load_trace",
    "make_greedy",
    "make_random",
    "make_replay",
    "policy_act",
    "save_trace",
]


@dataclass(frozen=True)
class Observation:
    q: np.ndarray
    qdot: np.ndarray
    peg_position: np.ndarray
    goal_center: np.ndarray
    time: float = 0.0
    min_distance: float = np.inf
    gripper_open: bool = False


@dataclass(frozen=True)
class Action:
    joint_delta: np.ndarray
    gripper_open: bool = False

    def __post_init__(self):
        d = np.asarray(self.joint_delta, dtype=float).ravel()
        if not np.all(np.isfinite(d)):
            raise ValueError("action entries must be finite")
        object.__setattr__(self, "joint_delta", d)


class Policy(Protocol):
    def act(self, obs: Observation) -> Action: ...

    def reset(self, seed: int | None = None) -> None: ...


def policy_act(policy: Policy, obs: Observation) -> Action:
    return policy.act(obs)


class ZeroPolicy:
    def act(self, obs):
        return Action(np.zeros_like(obs.q))

    def reset(self, seed=None):
        pass


@dataclass
class GreedyPolicy:
    """Straight-line joint-space pursuit of ``q_goal``, saturated in norm."""

    q_goal: np.ndarray
    saturation: float = 1.0

    def __post_init__(self):
        self.q_goal = np.asarray(self.q_goal, dtype=float).ravel()
        if self.saturation <= 0.0:
            raise ValueError("saturation must be positive")

    def act(self, obs):
        err = self.q_goal - obs.q
        norm = float(np.linalg.norm(err))
        if norm > self.saturation:
            err = err * (self.saturation / norm)
        return Action(err)

    def reset(self, seed=None):
        pass


def make_greedy(q_goal, saturation: float = 1.0, model=None) -> GreedyPolicy:
    q_goal = np.asarray(q_goal, dtype=float).ravel()
    if model is not None and (np.any(q_goal < model.q_min) or np.any(q_goal > model.q_max)):
        raise ValueError("q_goal lies outside the joint limits")
    return GreedyPolicy(q_goal, saturation)


@dataclass
class ReplayPolicy:
    """Emits recorded actions in order, then zero deltas."""

    trace: list
    index: int = 0

    def act(self, obs):
        if self.index < len(self.trace):
            a = self.trace[self.index]
            self.index += 1
            return a if isinstance(a, Action) else Action(a)
        return Action(np.zeros_like(obs.q))

    def reset(self, seed=None):
        self.index = 0


class TraceLoadError(ValueError):
    pass


def load_trace(path) -> list[Action]:
    """Read an action trace: one whitespace/comma separated vector per line.

    Blank lines and ``#`` comments are skipped.  A trailing token ``open`` or
    ``closed`` sets the gripper flag.
    """
    actions = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].replace(",", " ").split()
            if not line:
                continue
            gripper = False
            if line[-1] in ("open", "closed"):
                gripper = line.pop() == "open"
            try:
                vec = [float(tok) for tok in line]
            except ValueError:
                raise TraceLoadError(f"{path}:{lineno}: non-numeric entry in {raw.strip()!r}") from None
            if not vec:
                raise TraceLoadError(f"{path}:{lineno}: empty action")
            if width is not None and len(vec) != width:
                raise TraceLoadError(f"{path}:{lineno}: expected {width} values, got {len(vec)}")
            width = len(vec)
            try:
                actions.append(Action(vec, gripper))
            except ValueError as exc:
                raise TraceLoadError(f"{path}:{lineno}: {exc}") from None
    if not actions:
        raise TraceLoadError(f"{path}: trace is empty")
    return actions


def save_trace(actions: Sequence, path) -> None:
    with open(path, "w") as fh:
        for a in actions:
            a = a if isinstance(a, Action) else Action(a)
            fh.write(" ".join(repr(float(v)) for v in a.joint_delta))
            fh.write(" open\n" if a.gripper_open else "\n")


def make_replay(trace) -> ReplayPolicy:
    if isinstance(trace, (str, Path)):
        trace = load_trace(trace)
    trace = [a if isinstance(a, Action) else Action(a) for a in trace]
    if not trace:
        raise ValueError("trace must not be empty")
    return ReplayPolicy(trace)


@dataclass
class RandomPolicy:
    """Seeded uniform joint deltas in ``[-magnitude, magnitude]``."""

    seed: int
    magnitude: float = 1.0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.magnitude <= 0.0:
            raise ValueError("magnitude must be positive")
        self.rng = np.random.default_rng(self.seed)

    def act(self, obs):
        return Action(self.rng.uniform(-self.magnitude, self.magnitude, size=np.shape(obs.q)))

    def reset(self, seed=None):
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)


def make_random(seed: int, magnitude: float = 1.0) -> RandomPolicy:
    return RandomPolicy(seed, magnitude)
