"""Skeleton-based human obstacle: 23-joint frames, sequences, capsule bodies.

Sequence file format (decimal text, one frame per line)::

    # occplan-skeleton 1
    # frame_rate: 15.0
    # coordinate_frame: world
    # action_label: walking
    # joint_names: pelvis,spine,...          (source order of the row columns)
    # bones: 0-1 1-2 2-3 ...                (canonical joint indices)
    # joint_map: pelvis=HipCenter,...       (only when joint_names is not canonical)
    t x0 y0 z0 k0 x1 y1 z1 k1 ...

``k`` is the tracked flag (1 tracked, 0 untracked). When the source has a
different joint set, ``joint_map`` names the source joint for each of the
23 canonical joints and rows are remapped as they are read.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, ParseError, RangeError
from .geom import Capsule

N_JOINTS = 23

JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck", "head",
    "l_clavicle", "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_clavicle", "r_shoulder", "r_elbow", "r_wrist", "r_hand",
    "l_hip", "l_knee", "l_ankle", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_toe",
)

# 22-bone tree over the 23 joints
DEFAULT_BONES = (
    (0, 1), (1, 2), (2, 3), (3, 4),
    (2, 5), (5, 6), (6, 7), (7, 8), (8, 9),
    (2, 10), (10, 11), (11, 12), (12, 13), (13, 14),
    (0, 15), (15, 16), (16, 17), (17, 18),
    (0, 19), (19, 20), (20, 21), (21, 22),
)

HAND_JOINTS = (JOINT_NAMES.index("l_hand"), JOINT_NAMES.index("r_hand"))

FORMAT_TAG = "occplan-skeleton 1"


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    time: float
    joints: np.ndarray
    tracked: np.ndarray = None

    def __post_init__(self):
        joints = np.array(self.joints, dtype=float).reshape(-1, 3)
        if joints.shape[0] != N_JOINTS:
            raise ParameterError(f"skeleton frame needs {N_JOINTS} joints, got {joints.shape[0]}")
        tracked = (np.ones(N_JOINTS, dtype=bool) if self.tracked is None
                   else np.array(self.tracked, dtype=bool).reshape(N_JOINTS))
        if not np.all(np.isfinite(joints[tracked])):
            raise ParameterError("tracked joint positions must be finite")
        joints[~tracked] = np.where(np.isfinite(joints[~tracked]), joints[~tracked], 0.0)
        joints.flags.writeable = False
        tracked.flags.writeable = False
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "tracked", tracked)


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    frames: tuple[SkeletonFrame, ...]
    frame_rate: float
    bone_pairs: tuple[tuple[int, int], ...] = DEFAULT_BONES
    action_label: str = ""
    coordinate_frame: str = "world"
    joint_names: tuple[str, ...] = JOINT_NAMES
    times: np.ndarray = field(init=False, repr=False)
    positions: np.ndarray = field(init=False, repr=False)
    tracked: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "bone_pairs", tuple((int(a), int(b)) for a, b in self.bone_pairs))
        for a, b in self.bone_pairs:
            if not (0 <= a < N_JOINTS and 0 <= b < N_JOINTS):
                raise ParameterError(f"bone ({a}, {b}) references a joint outside [0, {N_JOINTS})")
        times = np.array([f.time for f in frames], dtype=float)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ParameterError("frame times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", np.array([f.joints for f in frames]).reshape(-1, N_JOINTS, 3))
        object.__setattr__(self, "tracked", np.array([f.tracked for f in frames]).reshape(-1, N_JOINTS))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def latest_before(self, t: float) -> SkeletonFrame:
        """Newest stored frame with time <= t."""
        i = bisect.bisect_right(self.times.tolist(), t + 1e-12) - 1
        if i < 0:
            raise RangeError(f"no frame at or before t={t}")
        return self.frames[i]

    def replace_frames(self, frames: Iterable[SkeletonFrame], action_label: str | None = None) -> "SkeletonSequence":
        return SkeletonSequence(tuple(frames), self.frame_rate, self.bone_pairs,
                                self.action_label if action_label is None else action_label,
                                self.coordinate_frame, self.joint_names)


@dataclass(frozen=True, eq=False)
class HumanCapsuleBody:
    capsules: tuple[tuple[Capsule, tuple[int, int], float], ...]

    def __len__(self) -> int:
        return len(self.capsules)

    @property
    def shapes(self) -> list[Capsule]:
        return [c for c, _, _ in self.capsules]


def frame_at(seq: SkeletonSequence, t: float) -> SkeletonFrame:
    """Linearly interpolated frame; tracked flags are ANDed across the bracket."""
    times = seq.times
    if len(times) == 0 or t < times[0] or t > times[-1]:
        raise RangeError(f"t={t} outside sequence [{times[0] if len(times) else 'nan'}, "
                         f"{times[-1] if len(times) else 'nan'}]")
    i = int(np.searchsorted(times, t, side="right")) - 1
    if times[i] == t or i == len(times) - 1:
        return seq.frames[i]
    t0, t1 = times[i], times[i + 1]
    w = (t - t0) / (t1 - t0)
    f0, f1 = seq.frames[i], seq.frames[i + 1]
    joints = (1.0 - w) * f0.joints + w * f1.joints
    return SkeletonFrame(t, joints, f0.tracked & f1.tracked)


def positions_at(seq: SkeletonSequence, ts: np.ndarray) -> np.ndarray:
    """Vectorised interpolation of joint positions at times ``ts`` -> (K, 23, 3)."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < seq.times[0]) or np.any(ts > seq.times[-1]):
        raise RangeError("query times outside sequence")
    out = np.empty(ts.shape + (N_JOINTS, 3))
    for k in range(N_JOINTS):
        for ax in range(3):
            out[..., k, ax] = np.interp(ts, seq.times, seq.positions[:, k, ax])
    return out


def capsule_radii(confidences: np.ndarray, bone_pairs: Sequence[tuple[int, int]], r0: float, r1: float) -> np.ndarray:
    """Confidence-interpolated capsule radius per bone, batched over leading dims."""
    check_radii(r0, r1)
    bones = np.asarray(bone_pairs, dtype=int).reshape(-1, 2)
    conf = np.asarray(confidences, dtype=float)
    alpha = 0.5 * (conf[..., bones[:, 0]] + conf[..., bones[:, 1]])
    return (1.0 - alpha) * r0 + alpha * r1


def check_radii(r0: float, r1: float) -> None:
    if not (r0 >= r1 >= 0.0):
        raise ParameterError(f"capsule radii must satisfy r0 >= r1 >= 0, got r0={r0}, r1={r1}")


def build_capsule_body(joints, confidences, bone_pairs=DEFAULT_BONES, r0: float = 0.20, r1: float = 0.05) -> HumanCapsuleBody:
    """One capsule per bone; radius shrinks from r0 (occluded) to r1 (visible)."""
    check_radii(r0, r1)
    joints = np.asarray(joints, dtype=float).reshape(N_JOINTS, 3)
    conf = np.asarray(confidences, dtype=float).reshape(N_JOINTS)
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ParameterError("confidences must lie in [0, 1]")
    caps = []
    for a, b in bone_pairs:
        alpha = 0.5 * (conf[a] + conf[b])
        radius = (1.0 - alpha) * r0 + alpha * r1
        caps.append((Capsule(joints[a], joints[b], radius), (int(a), int(b)), float(alpha)))
    return HumanCapsuleBody(tuple(caps))


# ---------------------------------------------------------------------------
# file IO

def _fmt(v: float) -> str:
    return repr(float(v))


def write_sequence(seq: SkeletonSequence, path, extra_header: dict | None = None) -> None:
    lines = [f"# {FORMAT_TAG}",
             f"# frame_rate: {_fmt(seq.frame_rate)}",
             f"# coordinate_frame: {seq.coordinate_frame}",
             f"# action_label: {seq.action_label}",
             f"# joint_names: {','.join(seq.joint_names)}",
             "# bones: " + " ".join(f"{a}-{b}" for a, b in seq.bone_pairs)]
    for key, value in (extra_header or {}).items():
        lines.append(f"# {key}: {value}")
    for f in seq.frames:
        cells = [_fmt(f.time)]
        for k in range(N_JOINTS):
            cells.extend(_fmt(c) for c in f.joints[k])
            cells.append("1" if f.tracked[k] else "0")
        lines.append(" ".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_header(lines: Sequence[str], path) -> tuple[dict, int]:
    header: dict[str, str] = {}
    i = 0
    while i < len(lines) and (lines[i].startswith("#") or not lines[i].strip()):
        text = lines[i][1:].strip()
        if i == 0 and not text.startswith("occplan-"):
            raise ParseError(f"{path}:1: missing format tag, expected '# {FORMAT_TAG}'")
        if ":" in text:
            key, value = text.split(":", 1)
            header[key.strip()] = value.strip()
        i += 1
    return header, i


def read_sequence(path) -> SkeletonSequence:
    seq, _ = read_sequence_with_extras(path, extra_columns=0)
    return seq


def read_sequence_with_extras(path, extra_columns: int = 0):
    """Read a sequence; each row may carry ``extra_columns`` trailing values."""
    lines = Path(path).read_text().splitlines()
    header, start = parse_header(lines, path)
    try:
        frame_rate = float(header["frame_rate"])
    except KeyError:
        raise ParseError(f"{path}: header field 'frame_rate' missing") from None
    except ValueError:
        raise ParseError(f"{path}: header field 'frame_rate' is not a number: {header['frame_rate']!r}") from None
    names = tuple(n.strip() for n in header.get("joint_names", ",".join(JOINT_NAMES)).split(",") if n.strip())
    source_index = _joint_map(header, names, path)
    bones: tuple[tuple[int, int], ...] = DEFAULT_BONES
    if header.get("bones"):
        try:
            bones = tuple(tuple(int(x) for x in tok.split("-")) for tok in header["bones"].split())
        except ValueError:
            raise ParseError(f"{path}: header field 'bones' malformed: {header['bones']!r}") from None
    width = 1 + 4 * len(names)
    frames, extras = [], []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split()
        if len(cells) != width + extra_columns:
            raise ParseError(f"{path}:{lineno}: expected {width + extra_columns} fields, got {len(cells)}")
        try:
            vals = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        raw = np.array(vals[1:width]).reshape(len(names), 4)
        joints = raw[source_index, :3]
        tracked = raw[source_index, 3] != 0
        frames.append(SkeletonFrame(vals[0], joints, tracked))
        extras.append(vals[width:])
    try:
        seq = SkeletonSequence(tuple(frames), frame_rate, bones, header.get("action_label", ""),
                               header.get("coordinate_frame", "world"), JOINT_NAMES)
    except ParameterError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return seq, (header, extras)


def _joint_map(header: dict, names: tuple[str, ...], path) -> np.ndarray:
    if names == JOINT_NAMES:
        return np.arange(N_JOINTS)
    if "joint_map" not in header:
        if len(names) == N_JOINTS:
            return np.arange(N_JOINTS)
        raise ParseError(f"{path}: {len(names)} source joints but no 'joint_map' header to remap them")
    mapping = {}
    for item in header["joint_map"].split(","):
        if "=" not in item:
            raise ParseError(f"{path}: joint_map entry {item!r} must be canonical=source")
        canon, src = (s.strip() for s in item.split("=", 1))
        mapping[canon] = src
    index = []
    for canon in JOINT_NAMES:
        if canon not in mapping:
            raise ParseError(f"{path}: joint_map does not cover canonical joint {canon!r}")
        if mapping[canon] not in names:
            raise ParseError(f"{path}: joint_map source {mapping[canon]!r} not in joint_names")
        index.append(names.index(mapping[canon]))
    return np.array(index)
