"""Serial revolute-arm model: forward kinematics and world-space link geometry.

Frame convention: link 0 is the base link (pose = ``base_pose``); link i
(1..n) is the child of joint i. Joint i's ``origin`` is the fixed transform
from link i-1 to the joint frame, and the joint rotates about ``axis``
expressed in that frame. ``tool`` is a fixed transform on the last link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .geom import Box, Capsule, Shape

AXIS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class JointSpec:
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple[float, float]
    velocity_limits: tuple[float, float]
    name: str = ""

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
            raise ConfigurationError(f"joint {self.name!r}: axis must be unit norm, got {axis}")
        origin = np.asarray(self.origin, dtype=float).reshape(4, 4)
        lo, hi = (float(v) for v in self.limits)
        vlo, vhi = (float(v) for v in self.velocity_limits)
        if lo > hi:
            raise ConfigurationError(f"joint {self.name!r}: q_min > q_max ({lo} > {hi})")
        if vlo > vhi:
            raise ConfigurationError(f"joint {self.name!r}: velocity min > max ({vlo} > {vhi})")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "limits", (lo, hi))
        object.__setattr__(self, "velocity_limits", (vlo, vhi))


@dataclass(frozen=True, eq=False)
class LinkShape:
    link: int
    shape: Shape


@dataclass(frozen=True, eq=False)
class CameraMount:
    link: int = 0
    transform: np.ndarray = field(default_factory=lambda: np.eye(4))


class ShapeArrays(NamedTuple):
    """World-space link geometry for a batch of M configurations."""

    cap_a: np.ndarray       # (M, C, 3)
    cap_b: np.ndarray       # (M, C, 3)
    cap_r: np.ndarray       # (C,)
    box_c: np.ndarray       # (M, B, 3)
    box_R: np.ndarray       # (M, B, 3, 3)
    box_h: np.ndarray       # (B, 3)

    @property
    def n_capsules(self) -> int:
        return self.cap_r.shape[0]

    @property
    def n_boxes(self) -> int:
        return self.box_h.shape[0]

    def select(self, index) -> "ShapeArrays":
        return ShapeArrays(self.cap_a[index], self.cap_b[index], self.cap_r,
                           self.box_c[index], self.box_R[index], self.box_h)

    def shapes_at(self, m: int) -> list[Shape]:
        out: list[Shape] = []
        for c in range(self.n_capsules):
            out.append(Capsule(self.cap_a[m, c], self.cap_b[m, c], self.cap_r[c]))
        for b in range(self.n_boxes):
            out.append(Box.from_rotation(self.box_c[m, b], self.box_h[b], self.box_R[m, b]))
        return out


@dataclass(frozen=True, eq=False)
class RobotModel:
    joints: tuple[JointSpec, ...]
    shapes: tuple[LinkShape, ...] = ()
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    camera_mount: CameraMount = field(default_factory=CameraMount)
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "robot"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "base_pose", np.asarray(self.base_pose, dtype=float).reshape(4, 4))
        object.__setattr__(self, "tool", np.asarray(self.tool, dtype=float).reshape(4, 4))
        if len(self.joints) < 1:
            raise ConfigurationError("robot model needs at least one joint")
        n_links = len(self.joints) + 1
        for ls in self.shapes:
            if not 0 <= ls.link < n_links:
                raise ConfigurationError(f"link shape references link {ls.link}, model has {n_links} links")
        if not 0 <= self.camera_mount.link < n_links:
            raise ConfigurationError(f"camera mount link {self.camera_mount.link} out of range")
        caps = [ls for ls in self.shapes if isinstance(ls.shape, Capsule)]
        boxes = [ls for ls in self.shapes if isinstance(ls.shape, Box)]
        # cached local geometry, capsules first then boxes
        object.__setattr__(self, "_cap_links", np.array([ls.link for ls in caps], dtype=int))
        object.__setattr__(self, "_cap_a", np.array([ls.shape.a for ls in caps]).reshape(-1, 3))
        object.__setattr__(self, "_cap_b", np.array([ls.shape.b for ls in caps]).reshape(-1, 3))
        object.__setattr__(self, "_cap_r", np.array([ls.shape.radius for ls in caps], dtype=float))
        object.__setattr__(self, "_box_links", np.array([ls.link for ls in boxes], dtype=int))
        object.__setattr__(self, "_box_c", np.array([ls.shape.center for ls in boxes]).reshape(-1, 3))
        object.__setattr__(self, "_box_R", np.array([ls.shape.rotation for ls in boxes]).reshape(-1, 3, 3))
        object.__setattr__(self, "_box_h", np.array([ls.shape.half_extents for ls in boxes]).reshape(-1, 3))

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    @property
    def qd_min(self) -> np.ndarray:
        return np.array([j.velocity_limits[0] for j in self.joints])

    @property
    def qd_max(self) -> np.ndarray:
        return np.array([j.velocity_limits[1] for j in self.joints])

    def within_limits(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def without_shapes(self) -> "RobotModel":
        return RobotModel(self.joints, (), self.base_pose, self.camera_mount, self.tool, self.name)


def _check_config(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (model.dof,):
        raise ConfigurationError(f"configuration has {q.shape[-1:] or 'scalar'} entries, model has {model.dof} DOF")
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("configuration must be finite")
    return q


def axis_angle_matrices(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis for an array of angles."""
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def fk_batch(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Link poses for configurations ``q`` (..., n) -> (..., n+1, 4, 4)."""
    q = _check_config(model, q)
    lead = q.shape[:-1]
    poses = np.empty(lead + (model.dof + 1, 4, 4))
    current = np.broadcast_to(model.base_pose, lead + (4, 4)).copy()
    poses[..., 0, :, :] = current
    for i, joint in enumerate(model.joints):
        local = np.broadcast_to(joint.origin, lead + (4, 4)).copy()
        local[..., :3, :3] = joint.origin[:3, :3] @ axis_angle_matrices(joint.axis, q[..., i])
        current = current @ local
        poses[..., i + 1, :, :] = current
    return poses


def forward_kinematics(model: RobotModel, q) -> np.ndarray:
    """World pose of every link (base first) for one configuration."""
    return fk_batch(model, np.asarray(q, dtype=float).reshape(-1))


def end_effector_pose(model: RobotModel, q) -> np.ndarray:
    return forward_kinematics(model, q)[-1] @ model.tool


def camera_pose_batch(model: RobotModel, poses: np.ndarray) -> np.ndarray:
    return poses[..., model.camera_mount.link, :, :] @ model.camera_mount.transform


def camera_pose(model: RobotModel, q) -> np.ndarray:
    return camera_pose_batch(model, forward_kinematics(model, q))


def shape_arrays(model: RobotModel, poses: np.ndarray) -> ShapeArrays:
    """Transform all link-local shapes by link poses (M, n+1, 4, 4)."""
    lead = poses.shape[:-3]
    Pc = poses[..., model._cap_links, :, :]
    R = Pc[..., :3, :3]
    t = Pc[..., :3, 3]
    cap_a = np.einsum("...cij,cj->...ci", R, model._cap_a) + t
    cap_b = np.einsum("...cij,cj->...ci", R, model._cap_b) + t
    Pb = poses[..., model._box_links, :, :]
    Rb = Pb[..., :3, :3]
    box_c = np.einsum("...bij,bj->...bi", Rb, model._box_c) + Pb[..., :3, 3]
    box_R = np.einsum("...bij,bjk->...bik", Rb, model._box_R)
    return ShapeArrays(cap_a.reshape(lead + (-1, 3)), cap_b.reshape(lead + (-1, 3)), model._cap_r,
                       box_c.reshape(lead + (-1, 3)), box_R.reshape(lead + (-1, 3, 3)), model._box_h)


def link_geometry_world(model: RobotModel, q) -> list[tuple[int, Shape]]:
    """Every link shape placed in the world at configuration ``q``."""
    poses = forward_kinematics(model, q)
    return [(ls.link, ls.shape.transformed(poses[ls.link])) for ls in model.shapes]


def world_shapes(model: RobotModel, q) -> list[Shape]:
    return [shape for _, shape in link_geometry_world(model, q)]


def chain(lengths: Sequence[float], axes: Sequence[Sequence[float]] | None = None,
          radius: float = 0.05, limits=(-np.pi, np.pi), velocity_limits=(-2.0, 2.0),
          base_pose=None) -> RobotModel:
    """Convenience constructor: links of given lengths along local x.

    Each joint sits at the end of the previous link; every link carries a
    capsule from its joint to the next joint. The tool frame sits at the tip.
    """
    from .geom import translation

    lengths = list(lengths)
    if axes is None:
        axes = [(0.0, 0.0, 1.0)] * len(lengths)
    joints = []
    shapes = []
    for i, (length, axis) in enumerate(zip(lengths, axes)):
        offset = translation((lengths[i - 1], 0.0, 0.0)) if i > 0 else np.eye(4)
        joints.append(JointSpec(np.asarray(axis, float), offset, limits, velocity_limits, name=f"j{i}"))
        if radius > 0 and length > 0:
            shapes.append(LinkShape(i + 1, Capsule((0, 0, 0), (length, 0, 0), radius)))
    return RobotModel(tuple(joints), tuple(shapes),
                      np.eye(4) if base_pose is None else base_pose,
                      tool=translation((lengths[-1], 0.0, 0.0)))
