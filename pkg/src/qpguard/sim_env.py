"""Simulated desk-arm environment.

Each joint is an independent damped double integrator driven by a PD joint
position controller::

    I * qdd = tau - b * qdot,     tau = clip(kp * (q_des - q) - kd * qdot, +-tau_max)

integrated with semi-implicit Euler.  One environment command holds a joint
target for ``substeps * sub_dt`` seconds (0.05 s by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmModel, JointState, link_frames
from .geometry import Scene, clearance
from .policies import Observation

__all__ = [
    "ArmEnv",
    "ControllerGains",
    "EnvState",
    "EnvUsageError",
    "MAX_REWARD",
    "PlantParams",
    "ResetError",
    "RewardBreakdown",
    "SUCCESS_FRACTION",
    "env_step",
    "is_success",
    "pd_torque",
    "reset",
    "reward",
]

MAX_REWARD = 1.5
SUCCESS_FRACTION = 0.975


class EnvUsageError(RuntimeError):
    """Raised when stepping an environment that is already done."""


class ResetError(RuntimeError):
    """No collision-free perturbed start pose was found."""


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 50.0
    kd: float = 0.25

    def __post_init__(self):
        if not self.kp > 0.0 or not self.kd >= 0.0:
            raise ValueError("gains need kp > 0 and kd >= 0")


@dataclass(frozen=True)
class PlantParams:
    inertia: float = 0.01
    damping: float = 1.25
    tau_max: float = 20.0
    substeps: int = 25
    sub_dt: float = 0.002

    def __post_init__(self):
        if self.inertia <= 0.0 or self.damping < 0.0 or self.tau_max <= 0.0:
            raise ValueError("plant needs inertia > 0, damping >= 0, tau_max > 0")
        if self.substeps < 1 or self.sub_dt <= 0.0:
            raise ValueError("substeps >= 1 and sub_dt > 0 required")

    @property
    def dt(self) -> float:
        return self.substeps * self.sub_dt


def pd_torque(gains: ControllerGains, q_des, state: JointState, tau_max: float = math.inf) -> np.ndarray:
    q_des = np.asarray(q_des, dtype=float)
    if q_des.shape != state.q.shape:
        raise ValueError(f"q_des has shape {q_des.shape}, state has {state.q.shape}")
    tau = gains.kp * (q_des - state.q) - gains.kd * state.qdot
    return np.clip(tau, -tau_max, tau_max)


@dataclass(frozen=True)
class RewardBreakdown:
    r_reach: float
    r_y_align: float
    r_gripper: float
    total: float


def reward(peg, obj, y_g: float, y_obj: float, gripper_open: bool) -> RewardBreakdown:
    r_reach = 1.0 - math.tanh(10.0 * float(np.linalg.norm(np.asarray(peg, float) - np.asarray(obj, float))))
    r_y = 1.0 - math.tanh(10.0 * abs(float(y_g) - float(y_obj)))
    r_g = -100.0 if gripper_open else 0.0
    return RewardBreakdown(r_reach, r_y, r_g, r_reach + 0.5 * r_y + r_g)


@dataclass
class EnvState:
    joint: JointState
    time: float = 0.0
    peg_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper_open: bool = False
    done: bool = False
    collided: bool = False
    min_distance: float = math.inf


class ArmEnv:
    """Single-owner simulation of one arm in one static scene."""

    def __init__(
        self,
        model: ArmModel,
        scene: Scene,
        start_q,
        gains: ControllerGains | None = None,
        plant: PlantParams | None = None,
        peg_offset=(0.0, 0.0, 0.0),
        perturbation: float = 0.05,
        start_buffer: float = 0.015,
        max_resample: int = 100,
    ):
        self.model = model
        self.scene = scene
        self.start_q = np.asarray(start_q, dtype=float).ravel()
        if self.start_q.size != model.dof:
            raise ValueError(f"start pose has {self.start_q.size} joints, arm has {model.dof}")
        self.gains = gains or ControllerGains()
        self.plant = plant or PlantParams()
        self.peg_offset = np.asarray(peg_offset, dtype=float).reshape(3)
        self.perturbation = float(perturbation)
        self.start_buffer = float(start_buffer)
        self.max_resample = int(max_resample)
        self.state = self._make_state(self.start_q, np.zeros(model.dof), 0.0)

    @property
    def dt(self) -> float:
        return self.plant.dt

    def _make_state(self, q, qdot, t) -> EnvState:
        frames = link_frames(self.model, q)
        Rs, ee = frames[0], frames[3]
        peg = ee + Rs[-1] @ self.peg_offset
        d = clearance(self.model, q, self.scene, frames)
        return EnvState(JointState(q, qdot), t, peg, False, False, d < 0.0, d)

    def observation(self) -> Observation:
        s = self.state
        return Observation(
            q=s.joint.q.copy(),
            qdot=s.joint.qdot.copy(),
            peg_position=s.peg_position.copy(),
            goal_center=self.scene.goal_center.copy(),
            time=s.time,
            min_distance=s.min_distance,
            gripper_open=s.gripper_open,
        )

    def reward(self) -> RewardBreakdown:
        s = self.state
        goal = self.scene.goal_center
        return reward(s.peg_position, goal, s.peg_position[1], goal[1], s.gripper_open)

    def is_success(self) -> bool:
        if self.scene.in_goal(self.state.peg_position):
            return True
        return bool(self.reward().total >= SUCCESS_FRACTION * MAX_REWARD)

    def reset(self, seed: int | None = None) -> Observation:
        rng = np.random.default_rng(seed)
        m = self.model
        for _ in range(self.max_resample):
            q = self.start_q + rng.uniform(-self.perturbation, self.perturbation, size=m.dof)
            q = np.clip(q, m.q_min, m.q_max)
            if clearance(m, q, self.scene) >= self.start_buffer:
                self.state = self._make_state(q, np.zeros(m.dof), 0.0)
                self.state.done = self.is_success()
                return self.observation()
        raise ResetError(f"no start pose with clearance >= {self.start_buffer} in {self.max_resample} draws")

    def set_state(self, q, qdot=None, time: float = 0.0) -> Observation:
        """Place the arm directly (no plant integration); ``done`` is re-evaluated."""
        q = np.asarray(q, dtype=float).ravel()
        qdot = np.zeros_like(q) if qdot is None else np.asarray(qdot, dtype=float).ravel()
        if q.size != self.model.dof or qdot.size != self.model.dof:
            raise ValueError(f"state vectors must have {self.model.dof} entries")
        self.state = self._make_state(q, qdot, float(time))
        self.state.done = self.state.collided or self.is_success()
        return self.observation()

    def step(self, q_command) -> tuple[Observation, bool]:
        s = self.state
        if s.done:
            raise EnvUsageError("step() called on a finished episode; call reset()")
        q_command = np.asarray(q_command, dtype=float).ravel()
        if q_command.shape != s.joint.q.shape or not np.all(np.isfinite(q_command)):
            raise ValueError("q_command must be a finite joint vector of the arm's size")
        p, g = self.plant, self.gains
        q = s.joint.q.copy()
        qd = s.joint.qdot.copy()
        for _ in range(p.substeps):
            tau = np.clip(g.kp * (q_command - q) - g.kd * qd, -p.tau_max, p.tau_max)
            qd = qd + p.sub_dt * (tau - p.damping * qd) / p.inertia
            q = q + p.sub_dt * qd
        self.state = self._make_state(q, qd, s.time + p.dt)
        self.state.done = self.state.collided or self.is_success()
        return self.observation(), self.state.done


def env_step(env: ArmEnv, q_command) -> tuple[Observation, bool]:
    return env.step(q_command)


def is_success(env: ArmEnv) -> bool:
    return env.is_success()


def reset(env: ArmEnv, seed: int | None = None) -> Observation:
    return env.reset(seed)
