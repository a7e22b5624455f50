"""Robot-level clearance queries against a static scene and against itself.

Robot bodies are indexed by their position in ``model.collision_bodies``.
Environment pairs are labelled ``(body_index, obstacle_label)`` with the
table reported as ``"table"``; self pairs are ``(body_index, body_index)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm_model import ArmModel, jacobian, link_frames
from .shapes import (
    Box,
    Capsule,
    HalfSpace,
    Pose,
    Primitive,
    ProximityReport,
    Sphere,
    UnsupportedPairError,
    distance_kernel,
    primitive_distance,
    primitive_from_dict,
    primitive_to_dict,
)

__all__ = [
    "Box",
    "Capsule",
    "HalfSpace",
    "Obstacle",
    "Pose",
    "ProximityReport",
    "Scene",
    "SceneLoadError",
    "Sphere",
    "UnsupportedPairError",
    "clearance",
    "distance_gradient",
    "load_scene",
    "min_robot_env_distance",
    "min_self_distance",
    "primitive_distance",
    "proximity_pairs",
    "TABLE_LABEL",
]

TABLE_LABEL = "table"


class SceneLoadError(ValueError):
    """A scene description failed validation."""


@dataclass(frozen=True)
class Obstacle:
    shape: Primitive
    pose: Pose
    label: str


@dataclass(frozen=True, eq=False)
class Scene:
    obstacles: tuple = ()
    table: HalfSpace | None = field(default_factory=HalfSpace)
    goal_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal_half_extents: np.ndarray = field(default_factory=lambda: np.full(3, 0.05))
    non_colliding_labels: frozenset = frozenset()
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "non_colliding_labels", frozenset(self.non_colliding_labels))
        gc = np.array(self.goal_center, dtype=float).reshape(3)
        gh = np.array(self.goal_half_extents, dtype=float).reshape(3)
        if not np.all(gh > 0.0):
            raise SceneLoadError("goal_region half_extents must be positive")
        object.__setattr__(self, "goal_center", gc)
        object.__setattr__(self, "goal_half_extents", gh)
        labels = [o.label for o in self.obstacles]
        if len(set(labels)) != len(labels) or TABLE_LABEL in labels:
            raise SceneLoadError(f"obstacle labels must be unique and not {TABLE_LABEL!r}: {labels}")
        # colliding obstacles with rotation matrices, cached for the hot path
        active = [(o.label, o.shape, o.pose.rotation, o.pose.position) for o in self.obstacles
                  if o.label not in self.non_colliding_labels]
        if self.table is not None:
            active.append((TABLE_LABEL, self.table, np.eye(3), np.zeros(3)))
        object.__setattr__(self, "_active", tuple(active))

    def in_goal(self, point) -> bool:
        return bool(np.all(np.abs(np.asarray(point) - self.goal_center) <= self.goal_half_extents))

    def with_obstacles(self, obstacles) -> "Scene":
        return Scene(tuple(obstacles), self.table, self.goal_center, self.goal_half_extents,
                     self.non_colliding_labels, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "obstacles": [
                {"label": o.label, "shape": primitive_to_dict(o.shape), "pose": o.pose.to_dict()}
                for o in self.obstacles
            ],
            "table": None if self.table is None else primitive_to_dict(self.table),
            "goal_region": {"center": self.goal_center.tolist(),
                            "half_extents": self.goal_half_extents.tolist()},
            "non_colliding_labels": sorted(self.non_colliding_labels),
        }


def load_scene(document) -> Scene:
    """Build a :class:`Scene` from a JSON path, JSON string or parsed dict."""
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        with open(document) as fh:
            document = json.load(fh)
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise SceneLoadError("scene description must be a JSON object")
    obstacles = []
    for i, od in enumerate(document.get("obstacles", [])):
        try:
            shape = primitive_from_dict(od["shape"])
            label = str(od["label"])
        except KeyError as exc:
            raise SceneLoadError(f"obstacles[{i}] is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise SceneLoadError(f"obstacles[{i}].shape: {exc}") from None
        obstacles.append(Obstacle(shape, Pose.from_dict(od.get("pose")), label))
    table_doc = document.get("table", {"type": "halfspace"})
    table = None
    if table_doc is not None:
        try:
            table = primitive_from_dict(dict(table_doc, type="halfspace"))
        except ValueError as exc:
            raise SceneLoadError(f"table: {exc}") from None
    goal = document.get("goal_region")
    if not isinstance(goal, dict) or "center" not in goal or "half_extents" not in goal:
        raise SceneLoadError("scene needs goal_region with center and half_extents")
    try:
        return Scene(
            tuple(obstacles),
            table,
            goal["center"],
            goal["half_extents"],
            frozenset(document.get("non_colliding_labels", [])),
            str(document.get("name", "scene")),
        )
    except ValueError as exc:
        raise SceneLoadError(str(exc)) from None


# ---------------------------------------------------------------------------
# placement helpers


def body_placements(model: ArmModel, frames) -> list:
    """World ``(R, p)`` of every collision body for precomputed link frames."""
    Rs, ps = frames[0], frames[1]
    out = []
    for body, Rb in zip(model.collision_bodies, model._body_R):
        R = Rs[body.link]
        out.append((R @ Rb, ps[body.link] + R @ body.pose.position))
    return out


def _self_pairs(model: ArmModel):
    bodies = model.collision_bodies
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            if abs(bodies[i].link - bodies[j].link) >= 2:
                yield i, j


def _no_pair(pair=(None, None)) -> ProximityReport:
    nan = np.full(3, np.nan)
    return ProximityReport(math.inf, nan, nan.copy(), pair)


def proximity_pairs(model: ArmModel, q, scene: Scene | None, frames=None, include_self: bool = True) -> list:
    """Reports for every checked (robot, obstacle) and non-adjacent self pair."""
    if frames is None:
        frames = link_frames(model, q)
    placed = body_placements(model, frames)
    out = []
    if scene is not None:
        for i, body in enumerate(model.collision_bodies):
            Ra, pa = placed[i]
            for label, shape, Rb, pb in scene._active:
                if label == TABLE_LABEL and body.link == 0:
                    continue  # base bodies stand on the table
                d, wa, wb, n = distance_kernel(body.shape, Ra, pa, shape, Rb, pb)
                out.append(ProximityReport(float(d), wa, wb, (i, label), n))
    if include_self:
        bodies = model.collision_bodies
        for i, j in _self_pairs(model):
            d, wa, wb, n = distance_kernel(bodies[i].shape, *placed[i], bodies[j].shape, *placed[j])
            out.append(ProximityReport(float(d), wa, wb, (i, j), n))
    return out


def min_robot_env_distance(model: ArmModel, q, scene: Scene, frames=None) -> ProximityReport:
    """Closest (robot body, obstacle or table) pair, skipping non-colliding labels."""
    reports = proximity_pairs(model, q, scene, frames, include_self=False)
    return min(reports, key=lambda r: r.distance) if reports else _no_pair()


def min_self_distance(model: ArmModel, q, frames=None) -> ProximityReport:
    """Closest pair of robot bodies on non-adjacent links (``inf`` if none)."""
    reports = proximity_pairs(model, q, None, frames, include_self=True)
    return min(reports, key=lambda r: r.distance) if reports else _no_pair()


def clearance(model: ArmModel, q, scene: Scene, frames=None) -> float:
    """Smallest environment or self distance at ``q``."""
    reports = proximity_pairs(model, q, scene, frames)
    return min((r.distance for r in reports), default=math.inf)


def distance_gradient(model: ArmModel, q, scene: Scene | None, report: ProximityReport, frames=None) -> np.ndarray:
    """d(distance)/dq for the pair in ``report``.

    Uses the report's separation normal, which stays well defined when the
    witness points coincide (``report.degenerate``).
    """
    if not np.isfinite(report.distance):
        raise ValueError("cannot differentiate an infinite distance")
    if frames is None:
        frames = link_frames(model, q)
    ia, ib = report.pair
    bodies = model.collision_bodies
    g = report.normal @ jacobian(model, q, report.witness_a, bodies[ia].link, frames)
    if isinstance(ib, (int, np.integer)):
        g = g - report.normal @ jacobian(model, q, report.witness_b, bodies[ib].link, frames)
    return g
