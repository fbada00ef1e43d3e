"""Geometry primitives and distance/penetration queries.

All shapes are immutable values. The public functions take shape objects;
the underscore-free ``*_batch`` kernels take raw arrays and broadcast over
leading dimensions so the cost evaluator can process many time samples at
once.

Penetration depth is a hinge: it is exactly 0 for disjoint shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import GeometryError

_PARALLEL_EPS = 1e-12
_DEGENERATE_EPS = 1e-18


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} must be finite, got {arr}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# rigid transforms

def make_transform(rotation=None, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Build a 4x4 homogeneous transform from a 3x3 rotation and translation."""
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = np.asarray(rotation, dtype=float)
    T[:3, 3] = np.asarray(translation, dtype=float)
    return T


def transform_from_xyz_rpy(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Transform from a translation and fixed-axis roll/pitch/yaw (radians)."""
    R = Rotation.from_euler("xyz", rpy).as_matrix()
    return make_transform(R, xyz)


def translation(xyz) -> np.ndarray:
    return make_transform(None, xyz)


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[..., :3, :3]
    t = T[..., :3, 3]
    out = np.zeros_like(T)
    Rt = np.swapaxes(R, -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, t)
    out[..., 3, 3] = 1.0
    return out


def transform_points(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply transform(s) ``T`` (..., 4, 4) to points (..., 3)."""
    return np.einsum("...ij,...j->...i", T[..., :3, :3], points) + T[..., :3, 3]


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    return Rotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat(scalar_first=True)


# ---------------------------------------------------------------------------
# shapes

@dataclass(frozen=True, eq=False)
class Segment:
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", _vec3(self.start, "start"))
        object.__setattr__(self, "end", _vec3(self.end, "end"))


@dataclass(frozen=True, eq=False)
class Capsule:
    """Segment swept by a sphere. Equal endpoints give a sphere."""

    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", _vec3(self.a, "endpoint a"))
        object.__setattr__(self, "b", _vec3(self.b, "endpoint b"))
        r = float(self.radius)
        if not np.isfinite(r) or r < 0:
            raise GeometryError(f"capsule radius must be finite and >= 0, got {self.radius}")
        object.__setattr__(self, "radius", r)

    @property
    def axis(self) -> Segment:
        return Segment(self.a, self.b)

    def transformed(self, T: np.ndarray) -> "Capsule":
        return Capsule(transform_points(T, self.a), transform_points(T, self.b), self.radius)


@dataclass(frozen=True, eq=False)
class Box:
    """Oriented box. ``orientation`` is a unit quaternion (w, x, y, z)."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        half = _vec3(self.half_extents, "half_extents")
        if np.any(half < 0):
            raise GeometryError(f"half_extents must be non-negative, got {half}")
        object.__setattr__(self, "half_extents", half)
        q = np.asarray(self.orientation, dtype=float).reshape(-1)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise GeometryError(f"orientation must be a finite quaternion, got {self.orientation}")
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-9:
            raise GeometryError(f"orientation quaternion must be unit norm, got |q|={norm}")
        q = q.copy()
        q.flags.writeable = False
        object.__setattr__(self, "orientation", q)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @classmethod
    def from_rotation(cls, center, half_extents, rotation) -> "Box":
        q = matrix_to_quat(rotation)
        return cls(center, half_extents, q / np.linalg.norm(q))

    def transformed(self, T: np.ndarray) -> "Box":
        R = T[:3, :3] @ self.rotation
        return Box.from_rotation(transform_points(T, self.center), self.half_extents, R)


Shape = Union[Capsule, Box]


# ---------------------------------------------------------------------------
# batch kernels

def _dot(u, v):
    return np.einsum("...i,...i->...", u, v)


def closest_segment_params(p1, q1, p2, q2):
    """Parameters (s, t) in [0, 1] of the closest points of two segment batches."""
    p1, q1, p2, q2 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (p1, q1, p2, q2)))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    denom = a * e - b * b

    a_ok = a > _DEGENERATE_EPS
    e_ok = e > _DEGENERATE_EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)

    nonparallel = denom > _PARALLEL_EPS * a * e
    safe_denom = np.where(nonparallel, denom, 1.0)
    s = np.where(nonparallel, np.clip((b * f - c * e) / safe_denom, 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate branches: first segment a point, second a point, or both
    s = np.where(~a_ok, 0.0, s)
    t = np.where(~a_ok & e_ok, np.clip(f / safe_e, 0.0, 1.0), t)
    s = np.where(a_ok & ~e_ok, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(~e_ok, 0.0, t)
    return s, t


def segment_distance_batch(p1, q1, p2, q2) -> np.ndarray:
    """Minimum distance between segment batches (one-sided evaluation order)."""
    s, t = closest_segment_params(p1, q1, p2, q2)
    c1 = p1 + s[..., None] * (np.asarray(q1) - p1)
    c2 = p2 + t[..., None] * (np.asarray(q2) - p2)
    return np.linalg.norm(c1 - c2, axis=-1)


def symmetric_segment_distance_batch(p1, q1, p2, q2) -> np.ndarray:
    """Order-independent segment distance (exactly symmetric in floating point)."""
    return np.minimum(segment_distance_batch(p1, q1, p2, q2),
                      segment_distance_batch(p2, q2, p1, q1))


def point_segment_distance_batch(p, a, b) -> np.ndarray:
    p, a, b = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (p, a, b)))
    d = b - a
    dd = _dot(d, d)
    u = np.where(dd > _DEGENERATE_EPS, _dot(p - a, d) / np.where(dd > _DEGENERATE_EPS, dd, 1.0), 0.0)
    u = np.clip(u, 0.0, 1.0)
    return np.linalg.norm(p - (a + u[..., None] * d), axis=-1)


def _to_box_frame(a, b, center, rotation):
    Rt = np.swapaxes(np.asarray(rotation, dtype=float), -1, -2)
    a_l = np.einsum("...ij,...j->...i", Rt, np.asarray(a, dtype=float) - center)
    b_l = np.einsum("...ij,...j->...i", Rt, np.asarray(b, dtype=float) - center)
    return a_l, b_l - a_l


def _sq_dist_outside(p, half):
    excess = np.maximum(np.abs(p) - half, 0.0)
    return np.sum(excess * excess, axis=-1)


def segment_box_distance_batch(a, b, center, rotation, half) -> np.ndarray:
    """Exact distance from segment(s) to oriented box(es); 0 when they touch.

    The squared distance along the segment is a convex piecewise quadratic
    with breakpoints where a coordinate crosses a face plane, so its minimum
    is found among the breakpoints, the endpoints and one stationary point
    per piece.
    """
    a0, d = _to_box_frame(a, b, center, rotation)
    half = np.broadcast_to(np.asarray(half, dtype=float), a0.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        bp_hi = (half - a0) / d
        bp_lo = (-half - a0) / d
    bps = np.concatenate([bp_hi, bp_lo], axis=-1)
    bps = np.where(np.isfinite(bps), np.clip(bps, 0.0, 1.0), 0.0)
    lead = bps.shape[:-1]
    knots = np.concatenate([np.zeros(lead + (1,)), bps, np.ones(lead + (1,))], axis=-1)
    knots = np.sort(knots, axis=-1)  # (..., 8)

    lo = knots[..., :-1]
    hi = knots[..., 1:]
    mid = 0.5 * (lo + hi)
    pm = a0[..., None, :] + mid[..., None] * d[..., None, :]  # (..., 7, 3)
    h = half[..., None, :]
    sigma = np.where(pm > h, 1.0, np.where(pm < -h, -1.0, 0.0))
    active = sigma != 0.0
    dk = np.where(active, d[..., None, :], 0.0)
    num = -np.sum(dk * (a0[..., None, :] - sigma * h), axis=-1)
    den = np.sum(dk * dk, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(den > _DEGENERATE_EPS, num / den, lo)
    stat = np.clip(stat, lo, hi)

    cand = np.concatenate([knots, stat], axis=-1)  # (..., 15)
    pts = a0[..., None, :] + cand[..., None] * d[..., None, :]
    sq = _sq_dist_outside(pts, half[..., None, :])
    return np.sqrt(np.min(sq, axis=-1))


def segment_box_depth_batch(a, b, center, rotation, half) -> np.ndarray:
    """Maximum interior depth of a point on the segment; negative if outside.

    Depth of a local point p is min_k(h_k - |p_k|), a concave piecewise-linear
    function along the segment, maximised at an endpoint or at an
    intersection of two of its six linear pieces.
    """
    a0, d = _to_box_frame(a, b, center, rotation)
    half = np.broadcast_to(np.asarray(half, dtype=float), a0.shape)
    # lines: h_k - sigma*(a_k + s d_k), sigma in {+1, -1}
    alpha = np.concatenate([half - a0, half + a0], axis=-1)  # (..., 6)
    beta = np.concatenate([-d, d], axis=-1)
    i, j = np.triu_indices(6, k=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_int = (alpha[..., j] - alpha[..., i]) / (beta[..., i] - beta[..., j])
    s_int = np.where(np.isfinite(s_int), np.clip(s_int, 0.0, 1.0), 0.0)
    lead = s_int.shape[:-1]
    cand = np.concatenate([np.zeros(lead + (1,)), np.ones(lead + (1,)), s_int], axis=-1)
    vals = np.min(alpha[..., None, :] + cand[..., None] * beta[..., None, :], axis=-1)
    return np.max(vals, axis=-1)


def segment_box_signed_batch(a, b, center, rotation, half) -> np.ndarray:
    """Outside distance when disjoint, minus the deepest interior depth otherwise."""
    dist = segment_box_distance_batch(a, b, center, rotation, half)
    depth = segment_box_depth_batch(a, b, center, rotation, half)
    # an interior point decides; the distance can carry rounding residue there
    return np.where(depth > 0.0, -depth, dist)


def segment_hits_box_batch(a, b, center, rotation, half) -> np.ndarray:
    """Slab test: does the segment pass through the (closed) box."""
    a0, d = _to_box_frame(a, b, center, rotation)
    return slab_hits(a0, d, half)


def slab_hits(a0, d, half) -> np.ndarray:
    """Slab test in box-local coordinates for segments a0 + s d, s in [0, 1]."""
    half = np.asarray(half, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - a0) * inv
        t2 = (half - a0) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = np.abs(d) < 1e-15
    if np.any(parallel):
        inside = np.broadcast_to(np.abs(a0) <= half, tmin.shape)
        parallel = np.broadcast_to(parallel, tmin.shape)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = np.max(tmin, axis=-1)
    t_exit = np.min(tmax, axis=-1)
    return (t_enter <= t_exit) & (t_exit >= 0.0) & (t_enter <= 1.0)


def box_box_penetration_batch(c1, R1, h1, c2, R2, h2, clip: bool = True) -> np.ndarray:
    """Exact penetration depth of two oriented boxes via separating axes.

    With ``clip=False`` the smallest axis overlap is returned as is; a
    negative value is then a lower bound on the separation distance.
    """
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    R1, R2 = np.asarray(R1, float), np.asarray(R2, float)
    lead = np.broadcast_shapes(c1.shape[:-1], c2.shape[:-1], R1.shape[:-2], R2.shape[:-2],
                               np.shape(h1)[:-1], np.shape(h2)[:-1])
    A = np.broadcast_to(np.swapaxes(R1, -1, -2), lead + (3, 3))  # rows are box axes
    B = np.broadcast_to(np.swapaxes(R2, -1, -2), lead + (3, 3))
    cross = np.cross(A[..., :, None, :], B[..., None, :, :])  # (..., 3, 3, 3)
    cross = cross.reshape(cross.shape[:-3] + (9, 3))
    axes = np.concatenate([A, B, cross], axis=-2)  # (..., 15, 3)
    norms = np.linalg.norm(axes, axis=-1)
    valid = norms > 1e-9
    axes = axes / np.where(valid, norms, 1.0)[..., None]
    ra = np.sum(np.asarray(h1, float)[..., None, :] * np.abs(np.einsum("...ki,...ji->...kj", axes, A)), axis=-1)
    rb = np.sum(np.asarray(h2, float)[..., None, :] * np.abs(np.einsum("...ki,...ji->...kj", axes, B)), axis=-1)
    dist = np.abs(np.einsum("...ki,...i->...k", axes, c2 - c1))
    overlap = np.min(np.where(valid, ra + rb - dist, np.inf), axis=-1)
    return np.maximum(overlap, 0.0) if clip else overlap


# ---------------------------------------------------------------------------
# public queries

def segment_segment_distance(s1: Segment, s2: Segment) -> float:
    return float(symmetric_segment_distance_batch(s1.start, s1.end, s2.start, s2.end))


def capsule_penetration(c1: Capsule, c2: Capsule) -> float:
    d = symmetric_segment_distance_batch(c1.a, c1.b, c2.a, c2.b)
    return float(max(0.0, (c1.radius + c2.radius) - float(d)))


def box_capsule_penetration(box: Box, capsule: Capsule) -> float:
    signed = segment_box_signed_batch(capsule.a, capsule.b, box.center, box.rotation, box.half_extents)
    return float(max(0.0, capsule.radius - float(signed)))


def box_box_penetration(b1: Box, b2: Box) -> float:
    return float(box_box_penetration_batch(b1.center, b1.rotation, b1.half_extents,
                                           b2.center, b2.rotation, b2.half_extents))


def penetration(s1: Shape, s2: Shape) -> float:
    """Penetration depth between any supported pair of shapes."""
    if isinstance(s1, Capsule) and isinstance(s2, Capsule):
        return capsule_penetration(s1, s2)
    if isinstance(s1, Box) and isinstance(s2, Capsule):
        return box_capsule_penetration(s1, s2)
    if isinstance(s1, Capsule) and isinstance(s2, Box):
        return box_capsule_penetration(s2, s1)
    if isinstance(s1, Box) and isinstance(s2, Box):
        return box_box_penetration(s1, s2)
    raise GeometryError(f"unsupported shape pair {type(s1).__name__}/{type(s2).__name__}")


def ray_hits_capsule(seg: Segment, capsule: Capsule) -> bool:
    d = segment_distance_batch(seg.start, seg.end, capsule.a, capsule.b)
    return bool(d < capsule.radius)


def ray_hits_box(seg: Segment, box: Box) -> bool:
    return bool(segment_hits_box_batch(seg.start, seg.end, box.center, box.rotation, box.half_extents))


def ray_hits(seg: Segment, shape: Shape) -> bool:
    if isinstance(shape, Capsule):
        return ray_hits_capsule(seg, shape)
    return ray_hits_box(seg, shape)
