"""Geometric self-occlusion of the human by the robot, as seen from the head camera.

A joint's confidence is the fraction of rays from the camera origin to
points sampled uniformly in a small ball around the joint that miss every
robot shape. Joints outside the camera frustum get confidence 0. The
sample offsets are drawn once from a seeded generator, so confidences are a
deterministic function of the geometry (common random numbers across
evaluations).

Camera frame convention: +x is the optical axis, +y left, +z up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ParameterError
from .geom import Box, Capsule, Shape, point_segment_distance_batch, segment_distance_batch, slab_hits
from .human import HAND_JOINTS, N_JOINTS, SkeletonFrame
from .robot import ShapeArrays

OCCLUDED = "occluded"
ACTION_KINDS = ("hand-centric", "whole-body")


@dataclass(frozen=True, eq=False)
class CameraModel:
    pose: np.ndarray
    hfov: float = np.deg2rad(90.0)
    vfov: float = np.deg2rad(70.0)
    near: float = 0.05
    far: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float).reshape(4, 4))
        check_camera_params(self.hfov, self.vfov, self.near, self.far)

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:3, 3]

    def in_view(self, points) -> np.ndarray:
        return in_frustum(self.pose[None], np.asarray(points, float)[None], self.hfov, self.vfov,
                          self.near, self.far)[0]


def check_camera_params(hfov, vfov, near, far) -> None:
    if not (0.0 < hfov < np.pi and 0.0 < vfov < np.pi):
        raise ConfigurationError(f"field of view must be in (0, pi), got hfov={hfov}, vfov={vfov}")
    if not (0.0 < near < far):
        raise ConfigurationError(f"camera range must satisfy 0 < near < far, got near={near}, far={far}")


@dataclass(frozen=True)
class OcclusionSettings:
    """Camera intrinsics plus visibility sampling parameters."""

    hfov: float = np.deg2rad(90.0)
    vfov: float = np.deg2rad(70.0)
    near: float = 0.05
    far: float = 8.0
    rho: float = 0.05
    rays: int = 64
    threshold: float = 0.5
    min_occluded_joints: int = 20
    seed: int = 0

    def __post_init__(self):
        check_camera_params(self.hfov, self.vfov, self.near, self.far)
        if self.rays < 1:
            raise ParameterError(f"rays must be >= 1, got {self.rays}")
        if self.rho < 0:
            raise ParameterError(f"rho must be >= 0, got {self.rho}")

    def camera(self, pose) -> CameraModel:
        return CameraModel(pose, self.hfov, self.vfov, self.near, self.far)

    @cached_property
    def offsets(self) -> np.ndarray:
        return ball_offsets(self.rays, self.rho, self.seed, N_JOINTS)


@dataclass(frozen=True, eq=False)
class OcclusionReport:
    per_joint_confidence: np.ndarray
    frame_confidence: float
    occluded_joint_count: int
    label_override: Optional[str] = None
    tracked: np.ndarray = field(default_factory=lambda: np.ones(N_JOINTS, dtype=bool))

    @property
    def degree_of_occlusion(self) -> np.ndarray:
        return 1.0 - self.per_joint_confidence

    @classmethod
    def fully_visible(cls) -> "OcclusionReport":
        return cls(np.ones(N_JOINTS), 1.0, 0, None)


def ball_offsets(n: int, rho: float, seed: int, sets: int = 1) -> np.ndarray:
    """Points uniformly distributed in a ball of radius ``rho`` -> (sets, n, 3)."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((sets, n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = rho * rng.random((sets, n, 1)) ** (1.0 / 3.0)
    return d * r


def in_frustum(cam_pose: np.ndarray, points: np.ndarray, hfov, vfov, near, far) -> np.ndarray:
    """cam_pose (M, 4, 4), points (M, J, 3) -> (M, J) bool."""
    R = cam_pose[..., :3, :3]
    o = cam_pose[..., :3, 3]
    local = np.einsum("mji,mkj->mki", R, points - o[:, None, :])
    x, y, z = local[..., 0], local[..., 1], local[..., 2]
    with np.errstate(invalid="ignore"):
        ok = (x >= near) & (x <= far)
        ok &= np.abs(np.arctan2(y, x)) <= 0.5 * hfov
        ok &= np.abs(np.arctan2(z, x)) <= 0.5 * vfov
    return ok


def visibility_batch(cam_pose: np.ndarray, joints: np.ndarray, shapes: ShapeArrays,
                     offsets: np.ndarray, hfov, vfov, near, far) -> np.ndarray:
    """Per-joint confidence for M scenes at once.

    cam_pose (M, 4, 4); joints (M, J, 3); shapes batched over M;
    offsets (J, R, 3) ball samples per joint. Returns (M, J).
    """
    M, J = joints.shape[:2]
    R = offsets.shape[1]
    view = in_frustum(cam_pose, joints, hfov, vfov, near, far)
    blocked = np.zeros((M, J, R), dtype=bool)
    origin = cam_pose[:, :3, 3]
    reach = float(np.max(np.linalg.norm(offsets, axis=-1))) if offsets.size else 0.0
    ob = np.broadcast_to(origin[:, None, :], joints.shape)

    for c in range(shapes.n_capsules):
        a = shapes.cap_a[:, c]
        b = shapes.cap_b[:, c]
        r = shapes.cap_r[c]
        central = segment_distance_batch(ob, joints, a[:, None, :], b[:, None, :])
        mi, ji = np.nonzero(view & (central < r + reach))
        if mi.size == 0:
            continue
        ends = joints[mi, ji][:, None, :] + offsets[ji]
        d = segment_distance_batch(origin[mi][:, None, :], ends, a[mi][:, None, :], b[mi][:, None, :])
        blocked[mi, ji] |= d < r

    for k in range(shapes.n_boxes):
        c = shapes.box_c[:, k]
        Rb = shapes.box_R[:, k]
        h = shapes.box_h[k]
        # bounding-sphere prefilter; the exact slab test below decides
        central = point_segment_distance_batch(c[:, None, :], ob, joints)
        mi, ji = np.nonzero(view & (central <= float(np.linalg.norm(h)) + reach))
        if mi.size == 0:
            continue
        Rk = Rb[mi]
        o_l = np.einsum("kji,kj->ki", Rk, origin[mi] - c[mi])
        j_l = np.einsum("kji,kj->ki", Rk, joints[mi, ji] - c[mi])
        e_l = j_l[:, None, :] + np.matmul(offsets[ji], Rk)
        blocked[mi, ji] |= slab_hits(o_l[:, None, :], e_l - o_l[:, None, :], h)

    conf = 1.0 - blocked.mean(axis=-1)
    return np.where(view, conf, 0.0)


def shapes_to_arrays(shapes: Sequence[Shape]) -> ShapeArrays:
    """Pack a list of world shapes as a single-scene (M=1) batch."""
    caps = [s for s in shapes if isinstance(s, Capsule)]
    boxes = [s for s in shapes if isinstance(s, Box)]
    return ShapeArrays(
        np.array([c.a for c in caps]).reshape(1, -1, 3),
        np.array([c.b for c in caps]).reshape(1, -1, 3),
        np.array([c.radius for c in caps], dtype=float),
        np.array([b.center for b in boxes]).reshape(1, -1, 3),
        np.array([b.rotation for b in boxes]).reshape(1, -1, 3, 3),
        np.array([b.half_extents for b in boxes]).reshape(-1, 3),
    )


def joint_visibility(camera: CameraModel, joint, robot_shapes: Sequence[Shape], samples: int = 64,
                     rho: float = 0.05, seed: int = 0) -> float:
    """Fraction of sampled rays from the camera to the joint's ball that reach it."""
    if samples < 1:
        raise ParameterError(f"samples must be >= 1, got {samples}")
    offsets = ball_offsets(samples, rho, seed, 1)
    conf = visibility_batch(camera.pose[None], np.asarray(joint, float).reshape(1, 1, 3),
                            shapes_to_arrays(robot_shapes), offsets,
                            camera.hfov, camera.vfov, camera.near, camera.far)
    return float(conf[0, 0])


def summarize(conf: np.ndarray, tracked: np.ndarray, threshold: float, min_joints: int):
    """Frame confidence, occluded-joint count and override from per-joint confidences (batched)."""
    conf = np.where(tracked, conf, 0.0)
    n_tracked = np.sum(tracked, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frame = np.where(n_tracked > 0, np.sum(conf, axis=-1) / np.maximum(n_tracked, 1), 0.0)
    count = np.sum(tracked & (conf < threshold), axis=-1)
    return conf, frame, count, count >= min_joints


def occlusion_report(camera: CameraModel, frame: SkeletonFrame, robot_shapes: Sequence[Shape] | ShapeArrays,
                     settings: OcclusionSettings | None = None) -> OcclusionReport:
    settings = settings or OcclusionSettings()
    shapes = robot_shapes if isinstance(robot_shapes, ShapeArrays) else shapes_to_arrays(robot_shapes)
    conf = visibility_batch(camera.pose[None], frame.joints[None], shapes, settings.offsets,
                            camera.hfov, camera.vfov, camera.near, camera.far)[0]
    conf, fc, count, override = summarize(conf, frame.tracked, settings.threshold, settings.min_occluded_joints)
    return OcclusionReport(conf, float(fc), int(count), OCCLUDED if override else None, frame.tracked.copy())


def hand_occlusion_label(report: OcclusionReport, action_kind: str,
                         hand_joint_indices: Sequence[int] = HAND_JOINTS,
                         threshold: float = 0.5) -> Optional[str]:
    """Relabel rule: hand-centric actions hinge on the hands, others on the joint count."""
    if action_kind == "hand-centric":
        hands = np.asarray(hand_joint_indices, dtype=int)
        return OCCLUDED if np.any(report.per_joint_confidence[hands] < threshold) else None
    if action_kind == "whole-body":
        return report.label_override
    raise ConfigurationError(f"unknown action kind {action_kind!r}; expected one of {ACTION_KINDS}")
