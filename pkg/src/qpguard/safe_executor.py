"""The corrected execution loop.

Per policy query: observe ``(q0, qdot0)``, clip the policy's joint delta,
correct the straight request ``q0 + clip(a)`` into ``m`` safe points, then
send the first ``n`` of them one at a time, re-observing before each and
stopping early once the arm gets within ``d_coll_buff + proximity_margin``
of anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmModel, link_frames
from .geometry import Scene, clearance
from .sim_env import ArmEnv

__all__ = [
    "EpisodeRecord",
    "ExecutorParams",
    "FailsafeBank",
    "Fixed",
    "Formula",
    "clip_action",
    "run_episode",
    "select_failsafe",
    "select_n",
]


@dataclass(frozen=True)
class Formula:
    """n = ceil(m / 2)."""

    def __str__(self):
        return "ceil(m/2)"


@dataclass(frozen=True)
class Fixed:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("Fixed(n) needs n >= 1")

    def __str__(self):
        return str(self.n)


@dataclass(frozen=True)
class ExecutorParams:
    action_clip: float = 0.2
    n_rule: Formula | Fixed = field(default_factory=Formula)
    proximity_margin: float = 0.005
    max_policy_queries: int = 200
    early_stop: bool = True  # False runs the unshielded baseline loop

    def __post_init__(self):
        if self.action_clip <= 0.0:
            raise ValueError("action_clip must be positive")
        if self.proximity_margin < 0.0:
            raise ValueError("proximity_margin must be non-negative")
        if self.max_policy_queries < 1:
            raise ValueError("max_policy_queries must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ExecutorParams":
        doc = dict(doc or {})
        n = doc.pop("n", doc.pop("n_rule", None))
        if n is not None and n != "formula":
            doc["n_rule"] = Fixed(int(n))
        return cls(**doc)


def clip_action(a, limit: float) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), -limit, limit)


def select_n(m: int, rule: Formula | Fixed | None = None) -> int:
    if m < 1:
        raise ValueError("m must be at least 1")
    if isinstance(rule, Fixed):
        return min(rule.n, m)
    return math.ceil(m / 2)


@dataclass(frozen=True)
class FailsafeBank:
    """Elevated presets facing the left, center and right thirds of the table.

    The lateral axis is world ``y`` with "left" on the positive side.
    """

    left: np.ndarray
    center: np.ndarray
    right: np.ndarray
    table_width: float
    table_center_y: float = 0.0

    def __post_init__(self):
        for name in ("left", "center", "right"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.table_width <= 0.0:
            raise ValueError("table_width must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "FailsafeBank":
        return cls(doc["left"], doc["center"], doc["right"], float(doc["table_width"]),
                   float(doc.get("table_center_y", 0.0)))

    def to_dict(self) -> dict:
        return {"left": self.left.tolist(), "center": self.center.tolist(), "right": self.right.tolist(),
                "table_width": self.table_width, "table_center_y": self.table_center_y}

    def third(self, y: float) -> str:
        edge = self.table_width / 6.0
        if y > self.table_center_y + edge:
            return "left"
        if y < self.table_center_y - edge:
            return "right"
        return "center"

    def verify(self, model: ArmModel, scene: Scene, d_coll_buff: float) -> dict:
        """Clearance of each preset; raises if any is below ``2 * d_coll_buff``."""
        out = {}
        for name in ("left", "center", "right"):
            q = getattr(self, name)
            d = clearance(model, q, scene)
            if d < 2.0 * d_coll_buff or np.any(q < model.q_min) or np.any(q > model.q_max):
                raise ValueError(f"failsafe preset {name!r} is not safe in scene {scene.name!r} (clearance {d:.4f})")
            out[name] = d
        return out


def select_failsafe(bank: FailsafeBank | None, model: ArmModel, scene: Scene, q_current, near_collision: bool,
                    fallback=None) -> np.ndarray:
    """``q_current`` when safe, else the preset for the table third under the gripper.

    Without a bank the ``fallback`` (previous failsafe) is kept when near collision.
    """
    q_current = np.asarray(q_current, dtype=float)
    if not near_collision:
        return q_current.copy()
    if bank is None:
        return q_current.copy() if fallback is None else np.asarray(fallback, dtype=float).copy()
    y = link_frames(model, q_current)[3][1]
    return getattr(bank, bank.third(float(y))).copy()


@dataclass
class EpisodeRecord:
    episode: int
    collided: bool
    min_proximity: float
    success: bool
    policy_queries: int
    env_steps: int
    wall_time: float  # simulated episode duration, seconds
    corrector_calls: int
    mean_corrector_time: float  # measured, seconds per call
    min_commanded_distance: float = math.inf
    failsafe_uses: int = 0
    early_stops: int = 0
    infeasible_calls: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_episode(policy, env: ArmEnv, corrector, params: ExecutorParams | None = None,
                bank: FailsafeBank | None = None, episode: int = 0) -> EpisodeRecord:
    """Run one episode on an already reset ``env``."""
    params = params or ExecutorParams()
    model, scene = env.model, env.scene
    buff = corrector.params.d_coll_buff
    threshold = buff + params.proximity_margin

    obs = env.observation()
    min_prox = obs.min_distance
    min_cmd = math.inf
    q_last_safe = select_failsafe(bank, model, scene, obs.q, obs.min_distance < threshold)
    queries = steps = failsafe_uses = early_stops = infeasible = 0
    retreat = False
    calls0, time0 = corrector.calls, corrector.total_time
    # a step that ends near collision makes the next plan head for the failsafe
    force_failsafe = params.early_stop and bank is not None and obs.min_distance < threshold
    done = env.state.done
    error = None

    try:
        while not done and queries < params.max_policy_queries:
            q0, qdot0 = obs.q, obs.qdot
            action = policy.act(obs)
            queries += 1
            retreat = force_failsafe
            if retreat:
                q1 = q_last_safe.copy()
                force_failsafe = False
            else:
                q1 = q0 + clip_action(action.joint_delta, params.action_clip)
            try:
                traj = corrector.correct(q0, qdot0, q1, q_last_safe)
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                # hold for one cycle, then head for the failsafe
                obs, done = env.step(q0)
                steps += 1
                min_prox = min(min_prox, obs.min_distance)
                q_last_safe = select_failsafe(bank, model, scene, obs.q, True, q_last_safe)
                force_failsafe = bank is not None
                continue
            failsafe_uses += retreat or traj.used_failsafe
            infeasible += not traj.feasible
            # q_c[0] is the start configuration itself; the n points after it move the arm
            n = min(select_n(traj.m, params.n_rule), traj.m - 1)
            for i in range(1, n + 1):
                target = traj.points[i].q
                min_cmd = min(min_cmd, traj.per_point_min_distance[i])
                obs, done = env.step(target)
                steps += 1
                min_prox = min(min_prox, obs.min_distance)
                if not params.early_stop:
                    if done:
                        break
                    continue
                near = obs.min_distance < threshold
                q_last_safe = select_failsafe(bank, model, scene, obs.q, near, q_last_safe)
                if done:
                    break
                if near:
                    early_stops += 1
                    force_failsafe = bank is not None
                    break
    except Exception as exc:  # env fault: abort with an error record
        error = f"{type(exc).__name__}: {exc}"

    calls = corrector.calls - calls0
    spent = corrector.total_time - time0
    return EpisodeRecord(
        episode=episode,
        collided=bool(env.state.collided),
        min_proximity=float(min_prox),
        success=bool(env.state.done and not env.state.collided and env.is_success()),
        policy_queries=queries,
        env_steps=steps,
        wall_time=round(steps * env.dt, 10),
        corrector_calls=calls,
        mean_corrector_time=spent / calls if calls else 0.0,
        min_commanded_distance=float(min_cmd),
        failsafe_uses=failsafe_uses,
        early_stops=early_stops,
        infeasible_calls=infeasible,
        error=error,
    )
