"""Rigid poses, convex collision primitives and exact pairwise signed distances.

Every primitive lives in its own local frame:

* ``Sphere`` is centred at the frame origin.
* ``Capsule`` is the set of points within ``radius`` of the segment running
  from ``-half_length`` to ``+half_length`` along the local z axis.
* ``Box`` is axis aligned in the local frame with the given half extents.
* ``HalfSpace`` is the solid ``{x : normal . x <= offset}``; ``normal`` points
  out of the solid.

Distances are signed (negative means penetration).  Each query returns a
:class:`ProximityReport` whose ``normal`` is the unit direction in which
moving body ``a`` increases the distance; it is what the distance gradient is
built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Union

import numpy as np

__all__ = [
    "Pose",
    "Sphere",
    "Capsule",
    "Box",
    "HalfSpace",
    "Primitive",
    "ProximityReport",
    "UnsupportedPairError",
    "primitive_distance",
    "primitive_from_dict",
    "primitive_to_dict",
    "quat_to_matrix",
    "matrix_to_quat",
    "axis_angle_matrix",
]

_EYE3 = np.eye(3)
_ZHAT = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# rotations


def quat_to_matrix(quat) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    w, x, y, z = (float(v) for v in quat)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with non-negative w for a rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    x, y, z = axis
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion orientation (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        o = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(o)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("orientation quaternion must be non-zero")
        if abs(n - 1.0) > 1e-9:
            o = o / n
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", o)

    @classmethod
    def from_matrix(cls, R: np.ndarray, p: np.ndarray) -> "Pose":
        return cls(np.array(p, dtype=float), matrix_to_quat(R))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        R = self.rotation
        return Pose.from_matrix(R @ other.rotation, self.position + R @ other.position)

    def transform_point(self, point) -> np.ndarray:
        return self.position + self.rotation @ np.asarray(point, dtype=float)

    @classmethod
    def from_dict(cls, doc: dict | None) -> "Pose":
        if doc is None:
            return cls()
        return cls(doc.get("position", [0.0, 0.0, 0.0]), doc.get("orientation", [1.0, 0.0, 0.0, 0.0]))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "orientation": self.orientation.tolist()}


# ---------------------------------------------------------------------------
# primitives


def _positive(name, value):
    if not (np.all(np.isfinite(value)) and np.all(np.asarray(value) > 0.0)):
        raise ValueError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        _positive("radius", self.radius)


@dataclass(frozen=True)
class Capsule:
    half_length: float
    radius: float

    def __post_init__(self):
        _positive("half_length", self.half_length)
        _positive("radius", self.radius)


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    def __post_init__(self):
        he = tuple(float(v) for v in np.asarray(self.half_extents, dtype=float).reshape(3))
        _positive("half_extents", he)
        object.__setattr__(self, "half_extents", he)


@dataclass(frozen=True)
class HalfSpace:
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"half-space normal must be unit length, got {self.normal!r}")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "offset", float(self.offset))


Primitive = Union[Sphere, Capsule, Box, HalfSpace]


def primitive_from_dict(doc: dict) -> Primitive:
    kind = doc.get("type")
    try:
        if kind == "sphere":
            return Sphere(float(doc["radius"]))
        if kind == "capsule":
            return Capsule(float(doc["half_length"]), float(doc["radius"]))
        if kind == "box":
            return Box(tuple(doc["half_extents"]))
        if kind == "halfspace":
            return HalfSpace(tuple(doc.get("normal", (0.0, 0.0, 1.0))), float(doc.get("offset", 0.0)))
    except KeyError as exc:
        raise ValueError(f"primitive of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise ValueError(f"unknown primitive type {kind!r}")


def primitive_to_dict(shape: Primitive) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "radius": shape.radius}
    if isinstance(shape, Capsule):
        return {"type": "capsule", "half_length": shape.half_length, "radius": shape.radius}
    if isinstance(shape, Box):
        return {"type": "box", "half_extents": list(shape.half_extents)}
    return {"type": "halfspace", "normal": list(shape.normal), "offset": shape.offset}


# ---------------------------------------------------------------------------
# reports


class UnsupportedPairError(TypeError):
    """No distance routine exists for this pair of primitive types."""


@dataclass
class ProximityReport:
    """Signed distance between two bodies with its witness points.

    ``witness_a - witness_b == distance * normal`` whenever ``distance >= 0``.
    """

    distance: float
    witness_a: np.ndarray
    witness_b: np.ndarray
    pair: tuple = (None, None)
    normal: np.ndarray = field(default_factory=lambda: _ZHAT.copy())

    @property
    def degenerate(self) -> bool:
        return abs(self.distance) < 1e-9

    def swapped(self) -> "ProximityReport":
        return ProximityReport(
            self.distance, self.witness_b, self.witness_a, (self.pair[1], self.pair[0]), -self.normal
        )


# ---------------------------------------------------------------------------
# low-level closest point routines (world coordinates)


def _unit(v, fallback):
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n < 1e-12:
        return fallback, 0.0
    return v / n, n


def _perpendicular(d):
    """Some unit vector orthogonal to ``d``."""
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = np.cross(d, a)
    return v / np.linalg.norm(v)


def _closest_on_segment(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, ((p - a) @ ab) / denom))
    return a + t * ab


def _segment_segment(p1, q1, p2, q2):
    """Closest points between segments p1q1 and p2q2 (Ericson, RTCD 5.1.9)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-15
    if a <= eps and e <= eps:
        return p1, p2
    if a <= eps:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    else:
        c = d1 @ r
        if e <= eps:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = min(1.0, max(0.0, (b * f - c * e) / denom)) if denom > eps * a * e else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    return p1 + s * d1, p2 + t * d2


def _point_box_local(p, h):
    """Signed distance, surface point and outward normal of a local-frame box."""
    c = np.clip(p, -h, h)
    diff = p - c
    dist = math.sqrt(diff @ diff)
    if dist > 0.0:
        return dist, c, diff / dist
    # inside: nearest face
    gaps = h - np.abs(p)
    i = int(np.argmin(gaps))
    sign = 1.0 if p[i] >= 0.0 else -1.0
    surf = p.copy()
    surf[i] = sign * h[i]
    n = np.zeros(3)
    n[i] = sign
    return -float(gaps[i]), surf, n


def _segment_box_local(p0, p1, h):
    """Exact closest point on segment p0p1 to an axis-aligned box.

    Returns ``(t, signed_distance)`` where ``t`` parametrises the segment.
    Outside the box the squared distance is piecewise quadratic in ``t``
    with breakpoints where a coordinate crosses a face plane; each piece is
    minimised in closed form.  When the segment reaches the box, the convex
    piecewise-linear interior signed distance is minimised over its
    breakpoints instead.
    """
    # plain floats: this runs on 3-vectors in the corrector's inner loop
    a0, a1, a2 = (float(v) for v in p0)
    d0, d1, d2 = (float(v) for v in (p1 - p0))
    h0, h1, h2 = (float(v) for v in h)
    P, D, Hs = (a0, a1, a2), (d0, d1, d2), (h0, h1, h2)
    cuts = [0.0, 1.0]
    for i in range(3):
        if D[i] != 0.0:
            for b in (-Hs[i], Hs[i]):
                t = (b - P[i]) / D[i]
                if 0.0 < t < 1.0:
                    cuts.append(t)
    cuts.sort()

    def sq_dist(t):
        total = 0.0
        for i in range(3):
            x = P[i] + t * D[i]
            if x > Hs[i]:
                total += (x - Hs[i]) ** 2
            elif x < -Hs[i]:
                total += (x + Hs[i]) ** 2
        return total

    best_t, best_sq = 0.0, math.inf
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        tm = 0.5 * (lo + hi)
        num = 0.0
        den = 0.0
        for i in range(3):
            x = P[i] + tm * D[i]
            if x > Hs[i]:
                num += (P[i] - Hs[i]) * D[i]
                den += D[i] * D[i]
            elif x < -Hs[i]:
                num += (P[i] + Hs[i]) * D[i]
                den += D[i] * D[i]
        t = lo if den == 0.0 else min(hi, max(lo, -num / den))
        for tc in (lo, t, hi):
            sq = sq_dist(tc)
            if sq < best_sq:
                best_sq, best_t = sq, tc
    if best_sq > 1e-24:  # farther than 1e-12 m: rounding cannot fake a separation
        return best_t, math.sqrt(best_sq)
    # segment touches the box: minimise max_i(+-p_i(t) - h_i) over t in [0, 1]
    lines = []
    for i in range(3):
        lines.append((D[i], P[i] - Hs[i]))
        lines.append((-D[i], -P[i] - Hs[i]))
    cand = [0.0, 1.0]
    for j in range(6):
        for k in range(j + 1, 6):
            ds = lines[j][0] - lines[k][0]
            if ds != 0.0:
                t = (lines[k][1] - lines[j][1]) / ds
                if 0.0 <= t <= 1.0:
                    cand.append(t)
    best_t, best_v = 0.0, math.inf
    for t in cand:
        v = max(s * t + c for s, c in lines)
        if v < best_v:
            best_v, best_t = v, t
    return best_t, min(best_v, 0.0)


# ---------------------------------------------------------------------------
# pairwise kernels; each returns (distance, witness_a, witness_b, normal)


def _sphere_sphere(a, Ra, pa, b, Rb, pb):
    n, dist = _unit(pa - pb, _ZHAT)
    return dist - a.radius - b.radius, pa - a.radius * n, pb + b.radius * n, n


def _capsule_ends(c, R, p):
    ax = R[:, 2] * c.half_length
    return p - ax, p + ax


def _sphere_capsule(a, Ra, pa, b, Rb, pb):
    e0, e1 = _capsule_ends(b, Rb, pb)
    c = _closest_on_segment(pa, e0, e1)
    n, dist = _unit(pa - c, None)
    if n is None:
        n = _perpendicular(Rb[:, 2])
    return dist - a.radius - b.radius, pa - a.radius * n, c + b.radius * n, n


def _capsule_capsule(a, Ra, pa, b, Rb, pb):
    a0, a1 = _capsule_ends(a, Ra, pa)
    b0, b1 = _capsule_ends(b, Rb, pb)
    ca, cb = _segment_segment(a0, a1, b0, b1)
    n, dist = _unit(ca - cb, None)
    if n is None:
        n, _ = _unit(np.cross(Ra[:, 2], Rb[:, 2]), None)
        if n is None:
            n = _perpendicular(Ra[:, 2])
    return dist - a.radius - b.radius, ca - a.radius * n, cb + b.radius * n, n


def _sphere_box(a, Ra, pa, b, Rb, pb):
    h = np.asarray(b.half_extents)
    local = Rb.T @ (pa - pb)
    sd, surf, n_local = _point_box_local(local, h)
    n = Rb @ n_local
    wb = pb + Rb @ surf
    return sd - a.radius, pa - a.radius * n, wb, n


def _capsule_box(a, Ra, pa, b, Rb, pb):
    h = np.asarray(b.half_extents)
    e0, e1 = _capsule_ends(a, Ra, pa)
    l0 = Rb.T @ (e0 - pb)
    l1 = Rb.T @ (e1 - pb)
    t, _ = _segment_box_local(l0, l1, h)
    point = l0 + t * (l1 - l0)
    sd, surf, n_local = _point_box_local(point, h)
    n = Rb @ n_local
    pw = pb + Rb @ point
    return sd - a.radius, pw - a.radius * n, pb + Rb @ surf, n


def _halfspace_world(hs, R, p):
    n = R @ np.asarray(hs.normal)
    return n, hs.offset + n @ p


def _sphere_halfspace(a, Ra, pa, b, Rb, pb):
    n, off = _halfspace_world(b, Rb, pb)
    h = n @ pa - off
    return h - a.radius, pa - a.radius * n, pa - h * n, n


def _capsule_halfspace(a, Ra, pa, b, Rb, pb):
    n, off = _halfspace_world(b, Rb, pb)
    e0, e1 = _capsule_ends(a, Ra, pa)
    h0 = n @ e0 - off
    h1 = n @ e1 - off
    c, h = (e0, h0) if h0 <= h1 else (e1, h1)
    return h - a.radius, c - a.radius * n, c - h * n, n


def _box_halfspace(a, Ra, pa, b, Rb, pb):
    n, off = _halfspace_world(b, Rb, pb)
    he = np.asarray(a.half_extents)
    # support point of the box in direction -n
    local_dir = Ra.T @ n
    corner = pa - Ra @ (np.sign(local_dir) * he)
    h = n @ corner - off
    return h, corner, corner - h * n, n


_KERNELS = {
    (Sphere, Sphere): _sphere_sphere,
    (Sphere, Capsule): _sphere_capsule,
    (Capsule, Capsule): _capsule_capsule,
    (Sphere, Box): _sphere_box,
    (Capsule, Box): _capsule_box,
    (Sphere, HalfSpace): _sphere_halfspace,
    (Capsule, HalfSpace): _capsule_halfspace,
    (Box, HalfSpace): _box_halfspace,
}


def distance_kernel(a: Primitive, Ra, pa, b: Primitive, Rb, pb):
    """Signed distance between two placed primitives given rotation matrices.

    Returns ``(distance, witness_a, witness_b, normal)``.  This is the fast
    path used internally; :func:`primitive_distance` wraps it for poses.
    """
    fn = _KERNELS.get((type(a), type(b)))
    if fn is not None:
        return fn(a, Ra, pa, b, Rb, pb)
    fn = _KERNELS.get((type(b), type(a)))
    if fn is not None:
        d, wb, wa, n = fn(b, Rb, pb, a, Ra, pa)
        return d, wa, wb, -n
    raise UnsupportedPairError(f"no distance routine for {type(a).__name__}/{type(b).__name__}")


def primitive_distance(
    a: Primitive, pose_a: Pose, b: Primitive, pose_b: Pose, pair: tuple[Hashable, Hashable] = ("a", "b")
) -> ProximityReport:
    """Signed distance between two primitives placed at the given poses.

    >>> r = primitive_distance(Sphere(0.1), Pose(), Sphere(0.1), Pose([0.35, 0, 0]))
    >>> round(r.distance, 12)
    0.15
    """
    d, wa, wb, n = distance_kernel(a, pose_a.rotation, pose_a.position, b, pose_b.rotation, pose_b.position)
    return ProximityReport(float(d), wa, wb, tuple(pair), n)
