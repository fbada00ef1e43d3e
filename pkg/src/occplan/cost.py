"""Trajectory cost functionals and the weighted objective.

Every term is a time average (1/T) * integral over [0, T] of a per-sample
integrand, evaluated with composite Boole (five-point Newton-Cotes)
quadrature on a uniform grid that places ``samples_per_segment`` intervals
in each waypoint segment. Boole's rule is exact for quintics, so the
smoothness term of a cubic Hermite trajectory (a quartic per segment) is
integrated exactly.

The integrand functions work on arrays of sampled configurations, which is
what lets the planner evaluate all finite-difference perturbations of a
trajectory in a single batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import CoverageError, ParameterError
from .geom import (Box, Capsule, Shape, box_box_penetration_batch, segment_box_signed_batch,
                   segment_distance_batch)
from .human import DEFAULT_BONES, SkeletonSequence, capsule_radii, check_radii, positions_at
from .occlusion import OcclusionSettings, summarize, visibility_batch
from .predict import PredictedHuman
from .robot import RobotModel, ShapeArrays, camera_pose_batch, fk_batch, shape_arrays
from .traj import Trajectory, sample_many

TERMS = ("smoothness", "static", "human", "occlusion")


@dataclass(frozen=True)
class CostWeights:
    smoothness: float = 1.0
    static: float = 100.0
    human: float = 100.0
    occlusion: float = 10.0
    D: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        for name in TERMS:
            if getattr(self, name) < 0:
                raise ParameterError(f"weight {name} must be non-negative")
        if self.D is not None:
            D = tuple(float(d) for d in self.D)
            if any(d < 0 for d in D):
                raise ParameterError("smoothness matrix D must have non-negative diagonal")
            object.__setattr__(self, "D", D)

    def weight(self, term: str) -> float:
        return float(getattr(self, term))

    def diag(self, dof: int) -> np.ndarray:
        if self.D is None:
            return np.ones(dof)
        if len(self.D) != dof:
            raise ParameterError(f"D has {len(self.D)} entries, robot has {dof} DOF")
        return np.asarray(self.D)

    def replace(self, **kw) -> "CostWeights":
        return replace(self, **kw)


HumanSource = Union[PredictedHuman, SkeletonSequence]


@dataclass(frozen=True, eq=False)
class Scene:
    """Everything the cost terms need besides the trajectory itself.

    ``time_offset`` is the absolute time that trajectory time 0 maps to when
    looking up the human; it defaults to the prediction's origin time.
    """

    model: RobotModel
    obstacles: tuple[Shape, ...] = ()
    occlusion: Optional[OcclusionSettings] = None
    human: Optional[HumanSource] = None
    bone_pairs: tuple[tuple[int, int], ...] = DEFAULT_BONES
    r0: float = 0.20
    r1: float = 0.05
    samples_per_segment: int = 16
    time_offset: Optional[float] = None

    def __post_init__(self):
        check_radii(self.r0, self.r1)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.samples_per_segment < 4 or self.samples_per_segment % 4:
            raise ParameterError(f"samples_per_segment must be a positive multiple of 4, got {self.samples_per_segment}")
        caps = [o for o in self.obstacles if isinstance(o, Capsule)]
        boxes = [o for o in self.obstacles if isinstance(o, Box)]
        object.__setattr__(self, "_obs_cap", (np.array([c.a for c in caps]).reshape(-1, 3),
                                              np.array([c.b for c in caps]).reshape(-1, 3),
                                              np.array([c.radius for c in caps], dtype=float)))
        object.__setattr__(self, "_obs_box", (np.array([b.center for b in boxes]).reshape(-1, 3),
                                              np.array([b.rotation for b in boxes]).reshape(-1, 3, 3),
                                              np.array([b.half_extents for b in boxes]).reshape(-1, 3)))

    @property
    def t0(self) -> float:
        if self.time_offset is not None:
            return float(self.time_offset)
        if isinstance(self.human, PredictedHuman):
            return float(self.human.origin_time)
        return 0.0

    def has_term(self, term: str) -> bool:
        if term in ("smoothness", "static"):
            return True
        if term == "human":
            return self.human is not None
        return self.human is not None and self.occlusion is not None

    def replace(self, **kw) -> "Scene":
        return replace(self, **kw)


@dataclass(frozen=True)
class CostReport:
    smoothness: float
    static: float
    human: float
    occlusion: float
    total: float
    samples: int
    weights: CostWeights = field(default_factory=CostWeights)

    @property
    def terms(self) -> dict[str, float]:
        return {t: getattr(self, t) for t in TERMS}


# ---------------------------------------------------------------------------
# quadrature

def boole_weights(intervals: int, h: float) -> np.ndarray:
    """Composite Boole weights: panels of four intervals weighted 7, 32, 12, 32, 7."""
    if intervals < 4 or intervals % 4:
        raise ParameterError(f"Boole rule needs a multiple of 4 intervals, got {intervals}")
    w = np.zeros(intervals + 1)
    for k in range(0, intervals, 4):
        w[k:k + 5] += (7.0, 32.0, 12.0, 32.0, 7.0)
    return w * (2.0 * h / 45.0)


def sample_grid(traj: Trajectory, samples_per_segment: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and the (1/T)-normalised Boole weights.

    Knot times are uniform in this package, so the grid is uniform over
    [0, T]; each segment contributes ``samples_per_segment`` intervals.
    """
    S = samples_per_segment
    n = traj.segments
    local = np.linspace(0.0, 1.0, S + 1)[:-1]
    dt = np.diff(traj.t)
    ts = np.concatenate([(traj.t[i] + local * dt[i]) for i in range(n)] + [traj.t[-1:]])
    ts[::S] = traj.t  # knots exactly
    if np.allclose(dt, dt[0], rtol=1e-12, atol=0.0):
        w = boole_weights(n * S, dt[0] / S)
    else:
        w = np.zeros(n * S + 1)
        for i in range(n):
            w[i * S:(i + 1) * S + 1] += boole_weights(S, dt[i] / S)
    return ts, w / traj.duration


# ---------------------------------------------------------------------------
# integrands on batches of samples

def smoothness_integrand(qd: np.ndarray, D: np.ndarray) -> np.ndarray:
    return np.sum(D * qd * qd, axis=-1)


def _pair_overlaps(shapes: ShapeArrays, cap_a, cap_b, cap_r, box_c, box_R, box_h) -> list[np.ndarray]:
    """Signed overlaps of every robot-shape x other-shape pair, one (K, a, b) array per pair type.

    Positive values are penetration depths; negative values are clearances
    (exact for capsule pairs and box/capsule pairs, a lower bound for box
    pairs). ``shapes`` is batched over K samples; the other capsules are
    either shared (C', 3) or per-sample (K, C', 3); boxes are shared.
    """
    K = shapes.cap_a.shape[0]
    out = []
    if np.ndim(cap_r) and cap_r.shape[-1]:
        oa = cap_a if cap_a.ndim == 3 else np.broadcast_to(cap_a, (K,) + cap_a.shape)
        ob = cap_b if cap_b.ndim == 3 else np.broadcast_to(cap_b, (K,) + cap_b.shape)
        orr = cap_r if cap_r.ndim == 2 else np.broadcast_to(cap_r, (K,) + cap_r.shape)
        if shapes.n_capsules:
            d = segment_distance_batch(shapes.cap_a[:, :, None], shapes.cap_b[:, :, None],
                                       oa[:, None], ob[:, None])
            out.append(shapes.cap_r[None, :, None] + orr[:, None, :] - d)
        if shapes.n_boxes:
            signed = segment_box_signed_batch(oa[:, None], ob[:, None], shapes.box_c[:, :, None],
                                              shapes.box_R[:, :, None], shapes.box_h[None, :, None])
            out.append(orr[:, None, :] - signed)
    if box_h.shape[0]:
        if shapes.n_capsules:
            signed = segment_box_signed_batch(shapes.cap_a[:, :, None], shapes.cap_b[:, :, None],
                                              box_c[None, None], box_R[None, None], box_h[None, None])
            out.append(shapes.cap_r[None, :, None] - signed)
        if shapes.n_boxes:
            out.append(box_box_penetration_batch(shapes.box_c[:, :, None], shapes.box_R[:, :, None],
                                                 shapes.box_h[None, :, None], box_c[None, None],
                                                 box_R[None, None], box_h[None, None], clip=False))
    return out


def _penetration_sq(overlaps: list[np.ndarray], K: int) -> np.ndarray:
    total = np.zeros(K)
    for o in overlaps:
        pen = np.maximum(o, 0.0)
        total += np.sum(pen * pen, axis=tuple(range(1, o.ndim)))
    return total


def max_overlap(overlaps: list[np.ndarray], K: int) -> np.ndarray:
    """Largest signed overlap per sample (-inf when there are no pairs)."""
    best = np.full(K, -np.inf)
    for o in overlaps:
        if o.size:
            best = np.maximum(best, o.reshape(K, -1).max(axis=1))
    return best


def static_integrand(scene: Scene, shapes: ShapeArrays) -> np.ndarray:
    ca, cb, cr = scene._obs_cap
    bc, bR, bh = scene._obs_box
    return _penetration_sq(_pair_overlaps(shapes, ca, cb, cr, bc, bR, bh), shapes.cap_a.shape[0])


def human_at(source: HumanSource, abs_ts: np.ndarray):
    """Joint positions (K, 23, 3), confidences (K, 23) and tracked mask (K, 23)."""
    if isinstance(source, PredictedHuman):
        joints, conf = source.at(abs_ts)
        return joints, conf, np.ones(conf.shape, dtype=bool)
    joints = positions_at(source, abs_ts)
    idx = np.clip(np.searchsorted(source.times, abs_ts, side="right") - 1, 0, len(source.times) - 1)
    nxt = np.clip(idx + 1, 0, len(source.times) - 1)
    exact = source.times[idx] == abs_ts
    tracked = np.where(exact[:, None], source.tracked[idx], source.tracked[idx] & source.tracked[nxt])
    return joints, tracked.astype(float), tracked


def human_overlaps(scene: Scene, shapes: ShapeArrays, joints: np.ndarray, conf: np.ndarray) -> list[np.ndarray]:
    bones = np.asarray(scene.bone_pairs, dtype=int)
    radii = capsule_radii(conf, bones, scene.r0, scene.r1)  # (K, B)
    empty = np.zeros((0, 3))
    return _pair_overlaps(shapes, joints[:, bones[:, 0]], joints[:, bones[:, 1]], radii,
                          empty, np.zeros((0, 3, 3)), empty)


def human_integrand(scene: Scene, shapes: ShapeArrays, joints: np.ndarray, conf: np.ndarray) -> np.ndarray:
    return _penetration_sq(human_overlaps(scene, shapes, joints, conf), joints.shape[0])


def occlusion_integrand(scene: Scene, poses: np.ndarray, shapes: ShapeArrays,
                        joints: np.ndarray, tracked: np.ndarray) -> np.ndarray:
    s = scene.occlusion
    cam = camera_pose_batch(scene.model, poses)
    conf = visibility_batch(cam, joints, shapes, s.offsets, s.hfov, s.vfov, s.near, s.far)
    _, alpha, _, _ = summarize(conf, tracked, s.threshold, s.min_occluded_joints)
    return (1.0 - alpha) ** 2


def frame_confidence(scene: Scene, q: np.ndarray, abs_ts: np.ndarray) -> np.ndarray:
    """Frame-level confidence alpha at configurations ``q`` (K, n) and absolute times."""
    poses = fk_batch(scene.model, q)
    shapes = shape_arrays(scene.model, poses)
    joints, _, tracked = human_at(scene.human, abs_ts)
    s = scene.occlusion
    cam = camera_pose_batch(scene.model, poses)
    conf = visibility_batch(cam, joints, shapes, s.offsets, s.hfov, s.vfov, s.near, s.far)
    return summarize(conf, tracked, s.threshold, s.min_occluded_joints)[1]


def integrands(scene: Scene, q: np.ndarray, qd: np.ndarray, ts: np.ndarray, terms: Iterable[str],
               D: np.ndarray) -> dict[str, np.ndarray]:
    """Per-sample integrand values for the requested terms.

    ``ts`` are trajectory-relative sample times (K,).
    """
    terms = tuple(terms)
    out: dict[str, np.ndarray] = {}
    if "smoothness" in terms:
        out["smoothness"] = smoothness_integrand(qd, D)
    geometric = [t for t in terms if t != "smoothness"]
    if not geometric:
        return out
    poses = fk_batch(scene.model, q)
    shapes = shape_arrays(scene.model, poses)
    if "static" in terms:
        out["static"] = static_integrand(scene, shapes)
    if "human" in terms or "occlusion" in terms:
        joints, conf, tracked = human_at(scene.human, scene.t0 + ts)
        if "human" in terms:
            out["human"] = human_integrand(scene, shapes, joints, conf)
        if "occlusion" in terms:
            out["occlusion"] = occlusion_integrand(scene, poses, shapes, joints, tracked)
    return out


def _check_coverage(scene: Scene, traj: Trajectory, term: str) -> None:
    src = scene.human
    if src is None:
        raise CoverageError(f"{term} cost needs a human source")
    t0, t1 = scene.t0, scene.t0 + traj.duration
    if isinstance(src, PredictedHuman):
        ok = src.covers(t0, t1)
        lo, hi = src.origin_time, src.end_time
    else:
        lo, hi = src.start_time, src.end_time
        ok = t0 >= lo - 1e-9 and t1 <= hi + 1e-9
    if not ok:
        raise CoverageError(f"{term} cost: human covers [{lo}, {hi}] but trajectory spans [{t0}, {t1}]")


def evaluate_terms(traj: Trajectory, scene: Scene, terms: Sequence[str], D: np.ndarray | None = None) -> tuple[dict[str, float], int]:
    for term in terms:
        if term in ("human", "occlusion"):
            _check_coverage(scene, traj, term)
    ts, w = sample_grid(traj, scene.samples_per_segment)
    s = sample_many(traj, ts)
    D = np.ones(traj.dof) if D is None else D
    vals = integrands(scene, s.q, s.qd, ts, terms, D)
    return {k: float(w @ v) for k, v in vals.items()}, len(ts)


# ---------------------------------------------------------------------------
# public term functions

def smoothness_cost(traj: Trajectory, D=None, samples_per_segment: int = 16) -> float:
    ts, w = sample_grid(traj, samples_per_segment)
    s = sample_many(traj, ts)
    D = np.ones(traj.dof) if D is None else np.asarray(D, dtype=float)
    return float(w @ smoothness_integrand(s.qd, D))


def static_collision_cost(traj: Trajectory, model: RobotModel, obstacles: Sequence[Shape],
                          samples_per_segment: int = 16) -> float:
    scene = Scene(model, tuple(obstacles), samples_per_segment=samples_per_segment)
    return evaluate_terms(traj, scene, ["static"])[0]["static"]


def human_collision_cost(traj: Trajectory, model: RobotModel, predicted: HumanSource, r0: float = 0.20,
                         r1: float = 0.05, bone_pairs=DEFAULT_BONES, samples_per_segment: int = 16,
                         time_offset: float | None = None) -> float:
    scene = Scene(model, (), None, predicted, tuple(bone_pairs), r0, r1, samples_per_segment, time_offset)
    return evaluate_terms(traj, scene, ["human"])[0]["human"]


def occlusion_cost(traj: Trajectory, model: RobotModel, camera: OcclusionSettings, human: HumanSource,
                   samples_per_segment: int = 16, time_offset: float | None = None) -> float:
    scene = Scene(model, (), camera, human, samples_per_segment=samples_per_segment, time_offset=time_offset)
    return evaluate_terms(traj, scene, ["occlusion"])[0]["occlusion"]


def total_cost(traj: Trajectory, scene: Scene, weights: CostWeights, terms: Sequence[str] | None = None) -> CostReport:
    """Evaluate every applicable term on one shared grid and combine them."""
    if terms is None:
        terms = [t for t in TERMS if scene.has_term(t)]
    values, n = evaluate_terms(traj, scene, terms, weights.diag(traj.dof))
    full = {t: values.get(t, 0.0) for t in TERMS}
    total = sum(weights.weight(t) * full[t] for t in TERMS)
    return CostReport(full["smoothness"], full["static"], full["human"], full["occlusion"], float(total), n, weights)
