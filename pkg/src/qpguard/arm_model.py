"""Serial revolute arm: kinematic chain, limits and attached collision bodies.

Link 0 is the fixed base.  Joint ``j`` connects link ``j`` to link ``j + 1``::

    T_{j+1} = T_j @ Trans(links[j].offset) @ Rot(links[j].axis, q[j])

and the end effector sits at ``T_dof @ Trans(tool_offset)``.  With the default
desk arm all links point straight up at ``q = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .shapes import Pose, Primitive, axis_angle_matrix, primitive_from_dict, primitive_to_dict

__all__ = [
    "ArmLoadError",
    "ArmModel",
    "CollisionBody",
    "JointState",
    "Link",
    "LimitViolation",
    "Pose",
    "check_joint_limits",
    "data_path",
    "default_arm",
    "forward_kinematics",
    "jacobian",
    "link_frames",
    "load_arm",
]


class ArmLoadError(ValueError):
    """An arm description failed validation."""


@dataclass(frozen=True)
class Link:
    axis: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class CollisionBody:
    link: int
    shape: Primitive
    pose: Pose = field(default_factory=Pose)


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        qdot = np.asarray(self.qdot, dtype=float).ravel()
        if q.shape != qdot.shape:
            raise ValueError(f"q has {q.size} entries but qdot has {qdot.size}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


@dataclass(frozen=True, eq=False)
class ArmModel:
    links: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    qdot_max: np.ndarray
    collision_bodies: tuple = ()
    tool_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_pose: Pose = field(default_factory=Pose)
    name: str = "arm"

    def __post_init__(self):
        for attr in ("q_min", "q_max", "qdot_max", "tool_offset"):
            arr = np.array(getattr(self, attr), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "collision_bodies", tuple(self.collision_bodies))
        n = len(self.links)
        for attr in ("q_min", "q_max", "qdot_max"):
            if getattr(self, attr).size != n:
                raise ArmLoadError(f"{attr} has {getattr(self, attr).size} entries for a {n}-joint arm")
        if not np.all(self.q_min < self.q_max):
            raise ArmLoadError("q_min must be strictly below q_max for every joint")
        if not np.all(self.qdot_max > 0.0):
            raise ArmLoadError("qdot_max must be positive for every joint")
        for i, body in enumerate(self.collision_bodies):
            if not 0 <= body.link <= n:
                raise ArmLoadError(f"collision_bodies[{i}].link = {body.link} is not a link of this arm")
        # cached per-body constants used by the geometry fast path
        object.__setattr__(self, "_body_R", tuple(b.pose.rotation for b in self.collision_bodies))

    @property
    def dof(self) -> int:
        return len(self.links)

    @property
    def q_mid(self) -> np.ndarray:
        return 0.5 * (self.q_min + self.q_max)

    def reach(self) -> float:
        """Upper bound on the distance from any joint axis to any body point."""
        total = sum(float(np.linalg.norm(l.offset)) for l in self.links) + float(np.linalg.norm(self.tool_offset))
        extra = 0.0
        for b in self.collision_bodies:
            shape = b.shape
            size = getattr(shape, "radius", 0.0) + getattr(shape, "half_length", 0.0)
            if hasattr(shape, "half_extents"):
                size = float(np.linalg.norm(shape.half_extents))
            extra = max(extra, float(np.linalg.norm(b.pose.position)) + size)
        return total + extra

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dof": self.dof,
            "links": [{"axis": l.axis.tolist(), "offset": l.offset.tolist()} for l in self.links],
            "tool_offset": self.tool_offset.tolist(),
            "base_pose": self.base_pose.to_dict(),
            "q_min": self.q_min.tolist(),
            "q_max": self.q_max.tolist(),
            "qdot_max": self.qdot_max.tolist(),
            "collision_bodies": [
                {"link": b.link, "shape": primitive_to_dict(b.shape), "pose": b.pose.to_dict()}
                for b in self.collision_bodies
            ],
        }


def _check_q(model: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if q.size != model.dof:
        raise ValueError(f"expected {model.dof} joint values, got {q.size}")
    return q


def link_frames(model: ArmModel, q) -> tuple[list, list, np.ndarray, np.ndarray]:
    """World rotations and origins of every link frame plus the tool point.

    Returns ``(Rs, ps, axes, ee)`` where ``Rs[k], ps[k]`` is the frame of
    link ``k`` (``k = 0..dof``), ``axes[j]`` is the world axis of joint ``j``
    (whose origin is ``ps[j + 1]``) and ``ee`` the tool point.
    """
    q = _check_q(model, q)
    R = model.base_pose.rotation
    p = model.base_pose.position
    Rs = [R]
    ps = [p]
    axes = np.empty((model.dof, 3))
    for j, link in enumerate(model.links):
        p = p + R @ link.offset
        axes[j] = R @ link.axis
        R = R @ axis_angle_matrix(link.axis, q[j])
        Rs.append(R)
        ps.append(p)
    ee = p + R @ model.tool_offset
    return Rs, ps, axes, ee


def forward_kinematics(model: ArmModel, q) -> tuple[list[Pose], Pose]:
    """Poses of links ``0..dof`` and of the end effector."""
    Rs, ps, _, ee = link_frames(model, q)
    poses = [Pose.from_matrix(R, p) for R, p in zip(Rs, ps)]
    return poses, Pose.from_matrix(Rs[-1], ee)


def jacobian(model: ArmModel, q, point, link: int, frames=None) -> np.ndarray:
    """Positional Jacobian (3 x dof) of a world point rigidly attached to ``link``.

    Only joints ``0..link-1`` move link ``link``; the remaining columns are zero.
    ``frames`` may pass a precomputed :func:`link_frames` result.
    """
    if not 0 <= link <= model.dof:
        raise ValueError(f"link index {link} outside 0..{model.dof}")
    if frames is None:
        frames = link_frames(model, q)
    _, ps, axes, _ = frames
    point = np.asarray(point, dtype=float)
    J = np.zeros((3, model.dof))
    if link:
        a = axes[:link]
        r = point - np.asarray(ps[1:link + 1])
        J[0, :link] = a[:, 1] * r[:, 2] - a[:, 2] * r[:, 1]
        J[1, :link] = a[:, 2] * r[:, 0] - a[:, 0] * r[:, 2]
        J[2, :link] = a[:, 0] * r[:, 1] - a[:, 1] * r[:, 0]
    return J


@dataclass(frozen=True)
class LimitViolation:
    joint: int
    kind: str  # "position" or "velocity"
    magnitude: float


def check_joint_limits(model: ArmModel, state: JointState) -> list[LimitViolation]:
    """Every breach of the closed position and velocity limits.

    An empty list means the state is legal; values exactly on a bound pass.
    """
    q = _check_q(model, state.q)
    qdot = _check_q(model, state.qdot)
    out = []
    for j in range(model.dof):
        if q[j] > model.q_max[j]:
            out.append(LimitViolation(j, "position", float(q[j] - model.q_max[j])))
        elif q[j] < model.q_min[j]:
            out.append(LimitViolation(j, "position", float(model.q_min[j] - q[j])))
        excess = abs(qdot[j]) - model.qdot_max[j]
        if excess > 0.0:
            out.append(LimitViolation(j, "velocity", float(excess)))
    return out


def _vec(doc, key, size=None):
    try:
        arr = np.asarray(doc[key], dtype=float).ravel()
    except KeyError:
        raise ArmLoadError(f"arm description is missing {key!r}") from None
    except (TypeError, ValueError):
        raise ArmLoadError(f"{key!r} must be a list of numbers") from None
    if size is not None and arr.size != size:
        raise ArmLoadError(f"{key!r} must have {size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ArmLoadError(f"{key!r} contains non-finite values")
    return arr


def load_arm(document) -> ArmModel:
    """Build an :class:`ArmModel` from a JSON path, JSON string or parsed dict."""
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        with open(document) as fh:
            document = json.load(fh)
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise ArmLoadError("arm description must be a JSON object")

    links_doc = document.get("links")
    if not isinstance(links_doc, list) or not links_doc:
        raise ArmLoadError("'links' must be a non-empty list")
    dof = int(document.get("dof", len(links_doc)))
    if dof != len(links_doc):
        raise ArmLoadError(f"'dof' is {dof} but {len(links_doc)} links are listed")

    links = []
    for i, ld in enumerate(links_doc):
        axis = _vec(ld, "axis", 3)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ArmLoadError(f"links[{i}].axis must be non-zero")
        links.append(Link(axis / norm, _vec(ld, "offset", 3)))

    q_min = _vec(document, "q_min", dof)
    q_max = _vec(document, "q_max", dof)
    bad = np.nonzero(q_min >= q_max)[0]
    if bad.size:
        raise ArmLoadError(f"q_min must be below q_max (joint {int(bad[0])})")
    qdot_max = _vec(document, "qdot_max", dof)
    if np.any(qdot_max <= 0.0):
        raise ArmLoadError("qdot_max must be positive")

    bodies = []
    for i, bd in enumerate(document.get("collision_bodies", [])):
        try:
            link = int(bd["link"])
            shape = primitive_from_dict(bd["shape"])
        except KeyError as exc:
            raise ArmLoadError(f"collision_bodies[{i}] is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ArmLoadError(f"collision_bodies[{i}].shape: {exc}") from None
        if not 0 <= link <= dof:
            raise ArmLoadError(f"collision_bodies[{i}].link = {link} references no link (0..{dof})")
        bodies.append(CollisionBody(link, shape, Pose.from_dict(bd.get("pose"))))

    tool = _vec(document, "tool_offset", 3) if "tool_offset" in document else np.zeros(3)
    return ArmModel(
        links=tuple(links),
        q_min=q_min,
        q_max=q_max,
        qdot_max=qdot_max,
        collision_bodies=tuple(bodies),
        tool_offset=tool,
        base_pose=Pose.from_dict(document.get("base_pose")),
        name=str(document.get("name", "arm")),
    )


def data_path(name: str) -> Path:
    """Path of a file bundled in ``qpguard/data``."""
    return Path(str(resources.files("qpguard") / "data" / name))


def default_arm() -> ArmModel:
    """The bundled 3-DOF desk arm (yaw, pitch, pitch; 0.30/0.30/0.15 m)."""
    return load_arm(data_path("desk_arm.json"))
