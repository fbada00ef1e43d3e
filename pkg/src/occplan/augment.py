"""Synthetic occlusion annotation of skeleton sequences.

A virtual robot follows a joint trajectory next to a recorded person. For
each frame the robot's configuration is sampled, the head-camera visibility
of every joint is computed, and the action label is replaced by
``"occluded"`` when the rule table says the action can no longer be
recognised. Joint positions and timestamps are never touched; only robot
joint angles, confidences and effective labels are added.

Augmented file layout: the skeleton text format, with extra header lines
``robot_dof`` and ``labels`` and, per row, ``robot_dof`` joint angles, 23
confidences and the index of the effective label in ``labels``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError, CoverageError, ParameterError, ParseError
from .human import (HAND_JOINTS, JOINT_NAMES, N_JOINTS, SkeletonSequence, read_sequence_with_extras,
                    write_sequence)
from .occlusion import ACTION_KINDS, OCCLUDED, CameraModel, OcclusionSettings, summarize, visibility_batch
from .robot import RobotModel, camera_pose_batch, fk_batch, shape_arrays
from .traj import Trajectory, sample_many

AUGMENTED_TAG = "occplan-augmented 1"


@dataclass(frozen=True)
class LabelRules:
    """Which action labels hinge on the hands and which on the whole body."""

    hand_centric: frozenset = frozenset()
    whole_body: frozenset = frozenset()
    default_kind: str = "whole-body"
    hand_joints: tuple = HAND_JOINTS
    threshold: float = 0.5
    min_occluded_joints: int = 20

    def __post_init__(self):
        object.__setattr__(self, "hand_centric", frozenset(self.hand_centric))
        object.__setattr__(self, "whole_body", frozenset(self.whole_body))
        if self.default_kind not in ACTION_KINDS:
            raise ConfigurationError(f"default_kind must be one of {ACTION_KINDS}, got {self.default_kind!r}")
        both = self.hand_centric & self.whole_body
        if both:
            raise ConfigurationError(f"labels listed as both hand-centric and whole-body: {sorted(both)}")
        if not 1 <= self.min_occluded_joints <= N_JOINTS:
            raise ParameterError(f"min_occluded_joints must be in [1, {N_JOINTS}], got {self.min_occluded_joints}")

    def kind_of(self, label: str) -> str:
        if label in self.hand_centric:
            return "hand-centric"
        if label in self.whole_body:
            return "whole-body"
        return self.default_kind

    def effective_labels(self, label: str, conf: np.ndarray, tracked: np.ndarray) -> list[str]:
        """Per-frame labels from confidences (F, 23) and tracking flags (F, 23)."""
        conf = np.where(tracked, conf, 0.0)
        if self.kind_of(label) == "hand-centric":
            hands = np.asarray(self.hand_joints, dtype=int)
            flag = np.any(conf[:, hands] < self.threshold, axis=1)
        else:
            count = np.sum(tracked & (conf < self.threshold), axis=1)
            flag = count >= self.min_occluded_joints
        return [OCCLUDED if f else label for f in flag]

    @classmethod
    def from_mapping(cls, data: dict, source: str = "<rules>") -> "LabelRules":
        if not isinstance(data, dict):
            raise ParseError(f"{source}: label rules must be a mapping")
        unknown = set(data) - {"schema", "default_kind", "hand-centric", "whole-body", "threshold",
                               "min_occluded_joints"}
        if unknown:
            raise ParseError(f"{source}: unknown field(s) {sorted(unknown)}")
        try:
            return cls(frozenset(data.get("hand-centric") or ()), frozenset(data.get("whole-body") or ()),
                       data.get("default_kind", "whole-body"), HAND_JOINTS,
                       float(data.get("threshold", 0.5)), int(data.get("min_occluded_joints", 20)))
        except (ConfigurationError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path) -> "LabelRules":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh), str(path))


def default_rules() -> LabelRules:
    """The shipped rule table."""
    ref = resources.files("occplan") / "data" / "label_rules.yaml"
    return LabelRules.from_mapping(yaml.safe_load(ref.read_text()), "label_rules.yaml")


@dataclass(frozen=True, eq=False)
class AugmentedSequence:
    sequence: SkeletonSequence
    robot_q: np.ndarray            # (F, n)
    confidences: np.ndarray        # (F, 23)
    labels: tuple[str, ...]        # effective label per frame
    threshold: float = 0.5

    def __post_init__(self):
        F = len(self.sequence.frames)
        q = np.asarray(self.robot_q, dtype=float)
        c = np.asarray(self.confidences, dtype=float)
        if q.ndim != 2 or q.shape[0] != F or c.shape != (F, N_JOINTS) or len(self.labels) != F:
            raise ParameterError(f"augmentation arrays do not match {F} frames: q{q.shape} conf{c.shape} "
                                 f"labels {len(self.labels)}")
        object.__setattr__(self, "robot_q", q)
        object.__setattr__(self, "confidences", c)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def occluded_joints(self) -> np.ndarray:
        """(F, 23) bool: tracked joints whose confidence is below the threshold."""
        return self.tracked & (self.confidences < self.threshold)

    @property
    def tracked(self) -> np.ndarray:
        return np.array([f.tracked for f in self.sequence.frames])

    @property
    def relabeled(self) -> np.ndarray:
        return np.array([lab == OCCLUDED for lab in self.labels])


def frame_confidences(sequence: SkeletonSequence, robot: RobotModel, robot_q: np.ndarray,
                      settings: OcclusionSettings, camera: Optional[CameraModel] = None) -> np.ndarray:
    """Per-joint confidence of every frame, (F, 23), with the robot at ``robot_q`` (F, n)."""
    robot_q = np.asarray(robot_q, dtype=float)
    joints = np.array([f.joints for f in sequence.frames])
    F = joints.shape[0]
    poses = fk_batch(robot, robot_q)
    shapes = shape_arrays(robot, poses)
    if camera is None:
        cam = camera_pose_batch(robot, poses)
        hfov, vfov, near, far = settings.hfov, settings.vfov, settings.near, settings.far
    else:
        cam = np.broadcast_to(camera.pose, (F, 4, 4))
        hfov, vfov, near, far = camera.hfov, camera.vfov, camera.near, camera.far
    conf = visibility_batch(cam, joints, shapes, settings.offsets, hfov, vfov, near, far)
    tracked = np.array([f.tracked for f in sequence.frames])
    conf, _, _, _ = summarize(conf, tracked, settings.threshold, settings.min_occluded_joints)
    return conf


def augment_sequence(seq: SkeletonSequence, robot: RobotModel, robot_traj: Trajectory,
                     camera: Optional[CameraModel] = None, rules: Optional[LabelRules] = None,
                     settings: Optional[OcclusionSettings] = None) -> AugmentedSequence:
    """Annotate ``seq`` with the visibility caused by ``robot`` following ``robot_traj``.

    The trajectory clock starts at the first frame. ``camera`` fixes the
    camera in the world; when omitted the camera rides on the robot's mount
    with the intrinsics from ``settings``.

    Raises:
        CoverageError: the trajectory is shorter than the sequence.
    """
    rules = rules or default_rules()
    settings = settings or OcclusionSettings(threshold=rules.threshold,
                                             min_occluded_joints=rules.min_occluded_joints)
    if robot_traj.dof != robot.dof:
        raise ConfigurationError(f"trajectory has {robot_traj.dof} DOF, robot has {robot.dof}")
    times = np.array([f.time for f in seq.frames])
    rel = times - times[0]
    if rel[-1] > robot_traj.duration + 1e-9:
        raise CoverageError(f"robot trajectory lasts {robot_traj.duration:.3f} s, "
                            f"sequence lasts {rel[-1]:.3f} s")
    q = sample_many(robot_traj, np.minimum(rel, robot_traj.duration)).q
    conf = frame_confidences(seq, robot, q, settings, camera)
    tracked = np.array([f.tracked for f in seq.frames])
    labels = rules.effective_labels(seq.action_label, conf, tracked)
    return AugmentedSequence(seq, q, conf, tuple(labels), rules.threshold)


@dataclass(frozen=True)
class MixReport:
    sequences: int
    frames: int
    occluded_fraction: float        # frames with at least one occluded joint
    relabeled_fraction: float       # frames whose effective label is "occluded"
    per_joint_rate: np.ndarray = field(compare=False)

    def as_dict(self) -> dict:
        return {"sequences": self.sequences, "frames": self.frames,
                "occluded_fraction": self.occluded_fraction,
                "relabeled_fraction": self.relabeled_fraction,
                "per_joint_rate": {name: float(r) for name, r in zip(JOINT_NAMES, self.per_joint_rate)}}


def occlusion_mix_report(dataset: Sequence[AugmentedSequence]) -> MixReport:
    if len(dataset) == 0:
        raise ParameterError("occlusion_mix_report needs at least one sequence")
    occ = np.concatenate([a.occluded_joints for a in dataset])
    relabeled = np.concatenate([a.relabeled for a in dataset])
    F = occ.shape[0]
    return MixReport(len(dataset), F, float(np.mean(np.any(occ, axis=1))), float(np.mean(relabeled)),
                     occ.mean(axis=0))


def write_augmented(aug: AugmentedSequence, path) -> None:
    seq = aug.sequence
    label_set = [seq.action_label] + sorted({lab for lab in aug.labels} - {seq.action_label})
    index = {lab: k for k, lab in enumerate(label_set)}
    write_sequence(seq, path, extra_header={"augmented": AUGMENTED_TAG, "robot_dof": aug.robot_q.shape[1],
                                            "labels": ",".join(label_set), "threshold": repr(aug.threshold)})
    lines = Path(path).read_text().splitlines()
    body = [k for k, line in enumerate(lines) if line and not line.startswith("#")]
    for row, k in enumerate(body):
        cells = [repr(float(v)) for v in aug.robot_q[row]] + [repr(float(v)) for v in aug.confidences[row]]
        lines[k] = " ".join([lines[k]] + cells + [str(index[aug.labels[row]])])
    Path(path).write_text("\n".join(lines) + "\n")


def read_augmented(path) -> AugmentedSequence:
    head = [line for line in Path(path).read_text().splitlines()[:20] if line.startswith("# robot_dof:")]
    if not head:
        raise ParseError(f"{path}: header field 'robot_dof' missing; not an augmented sequence")
    try:
        dof = int(head[0].split(":", 1)[1])
    except ValueError:
        raise ParseError(f"{path}: header field 'robot_dof' is not an integer") from None
    seq, (header, extras) = read_sequence_with_extras(path, extra_columns=dof + N_JOINTS + 1)
    label_set = header.get("labels", "").split(",")
    extras = np.array(extras, dtype=float).reshape(len(seq.frames), dof + N_JOINTS + 1)
    idx = extras[:, -1].astype(int)
    if np.any(idx < 0) or np.any(idx >= len(label_set)) or np.any(idx != extras[:, -1]):
        raise ParseError(f"{path}: label index outside the 'labels' header")
    return AugmentedSequence(seq, extras[:, :dof], extras[:, dof:dof + N_JOINTS],
                             tuple(label_set[i] for i in idx), float(header.get("threshold", 0.5)))
