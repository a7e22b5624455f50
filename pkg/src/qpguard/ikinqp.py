"""Collision-aware trajectory correction with one small QP per time step.

Given a start state, a requested target and a time budget, :func:`correct`
produces ``m = round(t1 / dt) + 1`` joint-space points that track a cubic
Hermite reference while keeping every robot body at least ``d_coll_buff``
away from obstacles, the table and its own non-adjacent links, and staying
inside the joint position and velocity limits.

Each step solves for a position increment ``dq``.  Collision pairs closer
than the activation radius enter as linearised constraints
``d + grad(d) . dq >= d_coll_buff``.  The exact distance is re-evaluated
after each solve; a step that lands inside the buffer is shrunk and
re-solved a few times before the arm simply holds position.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmModel, JointState, link_frames
from .geometry import Scene, distance_gradient, proximity_pairs
from .qp_core import QpProblem, QpSolution, QpStatus, solve_qp

__all__ = [
    "CorrectedTrajectory",
    "Corrector",
    "CorrectorParams",
    "HermiteSpline",
    "IdentityCorrector",
    "StepResult",
    "TrajectoryPoint",
    "activation_radius",
    "build_spline",
    "correct",
    "n_points",
    "step_qp",
]


@dataclass(frozen=True)
class CorrectorParams:
    t1: float = 0.5
    dt: float = 0.05
    d_coll_buff: float = 0.015
    w_track: float = 1.0
    w_drift: float = 0.01
    w_smooth: float = 0.05
    interpolate_threshold: float = 0.02
    max_halvings: int = 3
    activation_radius: float | None = None  # None: derived from the arm

    def __post_init__(self):
        if not (0.0 < self.dt <= self.t1):
            raise ValueError(f"need 0 < dt <= t1, got dt={self.dt}, t1={self.t1}")
        if self.d_coll_buff <= 0.0:
            raise ValueError("d_coll_buff must be positive")
        if min(self.w_track, self.w_drift, self.w_smooth) < 0.0 or self.w_track <= 0.0:
            raise ValueError("weights must be non-negative with w_track > 0")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "CorrectorParams":
        doc = dict(doc or {})
        weights = doc.pop("weights", None)
        if weights is not None:
            doc.update({k: weights[k] for k in ("w_track", "w_drift", "w_smooth") if k in weights})
        return cls(**doc)


def n_points(params: CorrectorParams) -> int:
    """Points per corrected trajectory: samples at t = 0, dt, ..., t1."""
    return int(round(params.t1 / params.dt)) + 1


def activation_radius(model: ArmModel, params: CorrectorParams) -> float:
    """Distance inside which a pair gets a QP constraint.

    At least ``5 * d_coll_buff``, widened to the buffer plus the furthest any
    body point can travel in one ``dt`` at full joint speed, so pairs left
    out of the QP cannot cross the buffer within a step.
    """
    if params.activation_radius is not None:
        return params.activation_radius
    offsets = [float(np.linalg.norm(l.offset)) for l in model.links]
    tool = float(np.linalg.norm(model.tool_offset))
    extent = 0.0
    for b in model.collision_bodies:
        s = b.shape
        size = float(np.linalg.norm(s.half_extents)) if hasattr(s, "half_extents") else (
            getattr(s, "radius", 0.0) + getattr(s, "half_length", 0.0))
        extent = max(extent, float(np.linalg.norm(b.pose.position)) + size)
    sweep = 0.0
    for j in range(model.dof):
        lever = sum(offsets[j + 1:]) + tool + extent
        sweep += model.qdot_max[j] * params.dt * lever
    return max(5.0 * params.d_coll_buff, params.d_coll_buff + sweep)


class HermiteSpline:
    """Per-joint cubic Hermite curve on ``[0, t1]``."""

    def __init__(self, q0, qdot0, q1, qdot1, t1: float):
        if t1 <= 0.0:
            raise ValueError("t1 must be positive")
        self.q0 = np.asarray(q0, dtype=float).ravel()
        self.q1 = np.asarray(q1, dtype=float).ravel()
        self.m0 = np.asarray(qdot0, dtype=float).ravel() * t1
        self.m1 = np.asarray(qdot1, dtype=float).ravel() * t1
        self.t1 = float(t1)

    def __call__(self, t: float) -> np.ndarray:
        s = min(1.0, max(0.0, t / self.t1))
        s2, s3 = s * s, s * s * s
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        # h00 = 1 - h01, written so a resting spline is exactly constant
        return self.q0 + h01 * (self.q1 - self.q0) + h10 * self.m0 + h11 * self.m1

    def derivative(self, t: float) -> np.ndarray:
        s = min(1.0, max(0.0, t / self.t1))
        s2 = s * s
        d10 = 3 * s2 - 4 * s + 1
        d01 = -6 * s2 + 6 * s
        d11 = 3 * s2 - 2 * s
        return (d01 * (self.q1 - self.q0) + d10 * self.m0 + d11 * self.m1) / self.t1


def build_spline(q0, qdot0, q1, qdot1, t1: float) -> HermiteSpline:
    return HermiteSpline(q0, qdot0, q1, qdot1, t1)


@dataclass(frozen=True)
class TrajectoryPoint:
    q: np.ndarray
    qdot: np.ndarray
    t: float


@dataclass
class CorrectedTrajectory:
    points: list
    used_failsafe: bool
    per_point_min_distance: list
    target: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feasible: bool = True
    held_steps: int = 0

    def __len__(self):
        return len(self.points)

    @property
    def m(self) -> int:
        return len(self.points)

    def positions(self) -> np.ndarray:
        return np.array([p.q for p in self.points])


@dataclass
class StepResult:
    q: np.ndarray
    qdot: np.ndarray
    status: QpStatus
    min_distance: float
    held: bool = False
    solution: QpSolution | None = None
    reports: list | None = None  # proximity reports at the returned q


def _step(model, scene, q, desired, params, ref_velocity, reports, act_radius, warm_start):
    """One corrected increment from ``q``; see :func:`step_qp`."""
    dt = params.dt
    dof = model.dof
    if reports is None:
        frames = link_frames(model, q)
        reports = proximity_pairs(model, q, scene, frames)
    else:
        frames = None
    step_max = model.qdot_max * dt
    lb = np.maximum(model.q_min - q, -step_max)
    ub = np.minimum(model.q_max - q, step_max)
    lb = np.minimum(lb, 0.0)
    ub = np.maximum(ub, 0.0)

    rows, lo = [], []
    for r in reports:
        if r.distance < act_radius:
            if frames is None:
                frames = link_frames(model, q)
            rows.append(distance_gradient(model, q, scene, r, frames))
            lo.append(params.d_coll_buff - r.distance)
    A = np.array(rows) if rows else None
    l = np.array(lo) if rows else None

    # every soft term is a squared deviation from the reference increment
    v_ref = (desired - q) / dt if ref_velocity is None else np.asarray(ref_velocity, dtype=float)
    W = params.w_track + params.w_smooth + params.w_drift
    target = (params.w_track * (desired - q) + params.w_smooth * v_ref * dt + params.w_drift * (desired - q)) / W
    H = 2.0 * W * np.eye(dof)
    g = -2.0 * W * target

    current_min = min((r.distance for r in reports), default=math.inf)
    scale = 1.0
    sol = None
    for _ in range(params.max_halvings + 1):
        problem = QpProblem(H, g, A, l, None, lb * scale, ub * scale)
        sol = solve_qp(problem, warm_start=warm_start)
        if sol.status is not QpStatus.OPTIMAL:
            break
        dq = np.clip(sol.x, lb * scale, ub * scale)
        q_new = np.clip(q + dq, model.q_min, model.q_max)
        frames_new = link_frames(model, q_new)
        new_reports = proximity_pairs(model, q_new, scene, frames_new)
        d_new = min((r.distance for r in new_reports), default=math.inf)
        if d_new >= params.d_coll_buff:
            return StepResult(q_new, (q_new - q) / dt, sol.status, d_new, False, sol, new_reports)
        scale *= 0.5
        warm_start = None
    status = sol.status if sol is not None else QpStatus.MAX_ITERATIONS
    return StepResult(q.copy(), np.zeros(dof), status, current_min, True, sol, reports)


def step_qp(model: ArmModel, scene: Scene, current: JointState, desired, params: CorrectorParams,
            ref_velocity=None, warm_start: QpSolution | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Solve one corrector QP from ``current`` toward ``desired``.

    The cost pulls the increment toward ``desired`` (tracking, drift) and toward
    ``ref_velocity * dt`` (smoothness; defaults to the velocity that reaches
    ``desired`` in one step).  Returns ``(q_i, qdot_i)``; raises
    ``RuntimeError`` when the QP is infeasible.
    """
    q = np.asarray(current.q, dtype=float)
    res = _step(model, scene, q, np.asarray(desired, dtype=float), params, ref_velocity, None,
                activation_radius(model, params), warm_start)
    if res.status is QpStatus.PRIMAL_INFEASIBLE:
        raise RuntimeError("corrector QP is infeasible")
    return res.q, res.qdot


class Corrector:
    """Stateful corrector bound to one arm and scene (carries QP warm starts)."""

    def __init__(self, model: ArmModel, scene: Scene, params: CorrectorParams | None = None):
        self.model = model
        self.scene = scene
        self.params = params or CorrectorParams()
        self.m = n_points(self.params)
        self.act_radius = activation_radius(model, self.params)
        self.calls = 0
        self.total_time = 0.0
        self._warm: QpSolution | None = None

    def reset(self):
        self._warm = None
        self.calls = 0
        self.total_time = 0.0

    def correct(self, q0, qdot0, q1, q_last_safe, qdot1=None) -> CorrectedTrajectory:
        started = time.perf_counter()
        try:
            return self._correct(q0, qdot0, q1, q_last_safe, qdot1)
        finally:
            self.calls += 1
            self.total_time += time.perf_counter() - started

    def _correct(self, q0, qdot0, q1, q_last_safe, qdot1):
        model, scene, params = self.model, self.scene, self.params
        q0 = np.asarray(q0, dtype=float).ravel()
        qdot0 = np.asarray(qdot0, dtype=float).ravel()
        q1 = np.asarray(q1, dtype=float).ravel()
        qdot1 = np.zeros(model.dof) if qdot1 is None else np.asarray(qdot1, dtype=float).ravel()
        if q0.size != model.dof or q1.size != model.dof or qdot0.size != model.dof:
            raise ValueError(f"joint vectors must have {model.dof} entries")
        if np.any(q0 < model.q_min) or np.any(q0 > model.q_max):
            raise ValueError("start configuration violates the joint position limits")

        frames = link_frames(model, q0)
        reports = proximity_pairs(model, q0, scene, frames)
        d0 = min((r.distance for r in reports), default=math.inf)
        used_failsafe = d0 < params.d_coll_buff
        if used_failsafe:
            q1 = np.asarray(q_last_safe, dtype=float).ravel().copy()
            qdot1 = np.zeros(model.dof)
        q1 = np.clip(q1, model.q_min, model.q_max)

        interpolate = float(np.max(np.abs(q1 - q0))) > params.interpolate_threshold
        spline = build_spline(q0, qdot0, q1, qdot1, params.t1) if interpolate else None

        q = q0.copy()
        prev_ref = q0
        points, dists = [], []
        feasible = True
        held = 0
        for i in range(self.m):
            t = i * params.dt
            if not feasible:
                points.append(TrajectoryPoint(q.copy(), np.zeros(model.dof), t))
                dists.append(dists[-1] if dists else d0)
                held += 1
                continue
            if spline is not None:
                desired = spline(t)
                v_ref = (desired - prev_ref) / params.dt
                prev_ref = desired
            else:
                desired = q1
                v_ref = None
            res = _step(model, scene, q, desired, params, v_ref, reports, self.act_radius, self._warm)
            if res.status is QpStatus.PRIMAL_INFEASIBLE:
                feasible = False
                self._warm = None
                points.append(TrajectoryPoint(q.copy(), np.zeros(model.dof), t))
                dists.append(res.min_distance)
                held += 1
                continue
            if res.held:
                held += 1
            self._warm = res.solution if res.solution is not None and res.solution.ok else None
            q = res.q
            reports = res.reports
            points.append(TrajectoryPoint(q.copy(), res.qdot, t))
            dists.append(res.min_distance)
        return CorrectedTrajectory(points, used_failsafe, dists, q1, feasible, held)


def correct(model: ArmModel, scene: Scene, q0, qdot0, q1, qdot1, q_last_safe,
            params: CorrectorParams | None = None) -> CorrectedTrajectory:
    """Corrected trajectory from ``(q0, qdot0)`` toward ``(q1, qdot1)``.

    If the start is already inside the collision buffer the request is
    replaced by ``q_last_safe`` and ``used_failsafe`` is set.
    """
    return Corrector(model, scene, params).correct(q0, qdot0, q1, q_last_safe, qdot1)


class IdentityCorrector:
    """Pass-through stand-in: samples the reference without any checks.

    Used for the unprotected baseline so that both arms of a comparison share
    the same stepping structure.
    """

    def __init__(self, model: ArmModel, scene: Scene | None = None, params: CorrectorParams | None = None):
        self.model = model
        self.scene = scene
        self.params = params or CorrectorParams()
        self.m = n_points(self.params)
        self.calls = 0
        self.total_time = 0.0

    def reset(self):
        self.calls = 0
        self.total_time = 0.0

    def correct(self, q0, qdot0, q1, q_last_safe=None, qdot1=None) -> CorrectedTrajectory:
        started = time.perf_counter()
        model, params = self.model, self.params
        q0 = np.asarray(q0, dtype=float).ravel()
        q1 = np.clip(np.asarray(q1, dtype=float).ravel(), model.q_min, model.q_max)
        qdot1 = np.zeros(model.dof) if qdot1 is None else qdot1
        spline = build_spline(q0, qdot0, q1, qdot1, params.t1)
        points = []
        prev = q0
        for i in range(self.m):
            t = i * params.dt
            q = spline(t)
            points.append(TrajectoryPoint(q, (q - prev) / params.dt, t))
            prev = q
        dists = [math.nan] * self.m
        self.calls += 1
        self.total_time += time.perf_counter() - started
        return CorrectedTrajectory(points, False, dists, q1)
