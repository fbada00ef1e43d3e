"""Synthetic skeleton sequences: a standing template plus simple motions.

All generators return a :class:`SkeletonSequence` with frames on a uniform
clock. Positions are world-frame metres, z up. The template stands on the
ground plane facing its local +x axis.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ParameterError
from .human import DEFAULT_BONES, JOINT_NAMES, N_JOINTS, SkeletonFrame, SkeletonSequence

# (forward, left, up) in the body frame, metres
_TEMPLATE = {
    "pelvis": (0.0, 0.0, 0.95),
    "spine": (0.0, 0.0, 1.10),
    "chest": (0.0, 0.0, 1.30),
    "neck": (0.0, 0.0, 1.50),
    "head": (0.0, 0.0, 1.65),
    "l_clavicle": (0.0, 0.08, 1.45),
    "l_shoulder": (0.0, 0.20, 1.45),
    "l_elbow": (0.0, 0.22, 1.18),
    "l_wrist": (0.02, 0.22, 0.95),
    "l_hand": (0.04, 0.22, 0.87),
    "r_clavicle": (0.0, -0.08, 1.45),
    "r_shoulder": (0.0, -0.20, 1.45),
    "r_elbow": (0.0, -0.22, 1.18),
    "r_wrist": (0.02, -0.22, 0.95),
    "r_hand": (0.04, -0.22, 0.87),
    "l_hip": (0.0, 0.10, 0.92),
    "l_knee": (0.02, 0.10, 0.50),
    "l_ankle": (0.0, 0.10, 0.08),
    "l_toe": (0.12, 0.10, 0.02),
    "r_hip": (0.0, -0.10, 0.92),
    "r_knee": (0.02, -0.10, 0.50),
    "r_ankle": (0.0, -0.10, 0.08),
    "r_toe": (0.12, -0.10, 0.02),
}

TEMPLATE = np.array([_TEMPLATE[name] for name in JOINT_NAMES], dtype=float)


def _yaw(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def standing_pose(position=(0.0, 0.0), heading: float = 0.0) -> np.ndarray:
    """The template placed at ground position (x, y) and rotated to ``heading`` (rad)."""
    pos = np.zeros(3)
    pos[:2] = np.asarray(position, dtype=float)[:2]
    return TEMPLATE @ _yaw(heading).T + pos


def _clock(duration: float, frame_rate: float, t0: float) -> np.ndarray:
    if duration <= 0 or frame_rate <= 0:
        raise ParameterError(f"duration and frame_rate must be positive, got {duration}, {frame_rate}")
    n = int(round(duration * frame_rate)) + 1
    return t0 + np.arange(n) / frame_rate


def from_function(pose_fn: Callable[[float], np.ndarray], duration: float, frame_rate: float = 30.0,
                  t0: float = 0.0, action_label: str = "synthetic") -> SkeletonSequence:
    """Sample ``pose_fn(t) -> (23, 3)`` on a uniform clock."""
    frames = [SkeletonFrame(float(t), np.asarray(pose_fn(float(t)), float), np.ones(N_JOINTS, dtype=bool))
              for t in _clock(duration, frame_rate, t0)]
    return SkeletonSequence(tuple(frames), frame_rate, DEFAULT_BONES, action_label)


def standing(position=(0.0, 0.0), heading: float = 0.0, duration: float = 5.0, frame_rate: float = 30.0,
             action_label: str = "standing") -> SkeletonSequence:
    pose = standing_pose(position, heading)
    return from_function(lambda t: pose, duration, frame_rate, action_label=action_label)


def walker(start=(0.0, 0.0), velocity=(0.5, 0.0), duration: float = 6.0, frame_rate: float = 30.0,
           heading: float | None = None, action_label: str = "walking") -> SkeletonSequence:
    """Rigid template translating at constant velocity (every joint moves identically)."""
    v = np.zeros(3)
    v[:2] = np.asarray(velocity, dtype=float)[:2]
    if heading is None:
        heading = float(np.arctan2(v[1], v[0])) if np.any(v) else 0.0
    base = standing_pose(start, heading)
    return from_function(lambda t: base + t * v, duration, frame_rate, action_label=action_label)


def turner(start=(0.0, 0.0), speed: float = 0.8, yaw_rate: float = 0.4, turn_start: float = 0.0,
           duration: float = 6.0, frame_rate: float = 30.0, heading: float = 0.0,
           action_label: str = "walking") -> SkeletonSequence:
    """Walker that keeps a straight course until ``turn_start`` and then arcs at ``yaw_rate``."""
    start = np.asarray(start, dtype=float)[:2]

    def pose(t: float) -> np.ndarray:
        if t <= turn_start or yaw_rate == 0.0:
            th = heading
            xy = start + speed * t * np.array([np.cos(heading), np.sin(heading)])
        else:
            straight = start + speed * turn_start * np.array([np.cos(heading), np.sin(heading)])
            th = heading + yaw_rate * (t - turn_start)
            R = speed / yaw_rate
            # arc of radius R, centre to the left of the heading direction
            centre = straight + R * np.array([-np.sin(heading), np.cos(heading)])
            xy = centre + R * np.array([np.sin(th), -np.cos(th)])
        return standing_pose(xy, th)

    return from_function(pose, duration, frame_rate, action_label=action_label)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def stepper(position=(0.0, 0.0), heading: float = 0.0, displacement=(-0.5, 0.0), move_start: float = 2.0,
            move_duration: float = 1.0, duration: float = 8.0, frame_rate: float = 30.0,
            reach: float = 0.0, retract_start: float | None = None,
            action_label: str = "crossing") -> SkeletonSequence:
    """Stands still, then shifts by ``displacement`` (world x, y) between move_start and
    move_start + move_duration with a smoothstep profile. ``reach`` extends both arms
    forward by that many metres over the same window. With ``retract_start`` the
    motion reverses over an equally long window starting then."""
    if retract_start is not None and retract_start < move_start + move_duration:
        raise ParameterError(f"retract_start {retract_start} precedes the end of the approach")
    base = standing_pose(position, heading)
    d = np.zeros(3)
    d[:2] = np.asarray(displacement, dtype=float)[:2]
    forward = _yaw(heading) @ np.array([1.0, 0.0, 0.0])
    arm = np.zeros(N_JOINTS)
    for name, frac in (("l_elbow", 0.4), ("l_wrist", 0.8), ("l_hand", 1.0),
                       ("r_elbow", 0.4), ("r_wrist", 0.8), ("r_hand", 1.0)):
        arm[JOINT_NAMES.index(name)] = frac
    lift = np.zeros(N_JOINTS)
    for name, dz in (("l_elbow", 0.15), ("l_wrist", 0.40), ("l_hand", 0.48),
                     ("r_elbow", 0.15), ("r_wrist", 0.40), ("r_hand", 0.48)):
        lift[JOINT_NAMES.index(name)] = dz

    def pose(t: float) -> np.ndarray:
        s = float(smoothstep((t - move_start) / move_duration))
        if retract_start is not None:
            s -= float(smoothstep((t - retract_start) / move_duration))
        p = base + s * d
        if reach:
            p = p + s * reach * arm[:, None] * forward[None, :]
            p[:, 2] += s * min(1.0, reach / 0.4) * lift
        return p

    return from_function(pose, duration, frame_rate, action_label=action_label)


GENERATORS = {
    "standing": standing,
    "walker": walker,
    "turner": turner,
    "stepper": stepper,
}
