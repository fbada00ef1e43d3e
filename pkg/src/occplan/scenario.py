"""Scenario files: structured YAML describing one planning experiment.

Top-level keys (``schema`` is mandatory and must be ``occplan-scenario/1``)::

    schema, name, seed
    robot:     inline block, or {file: other.yaml, extra_shapes: [...]} to reuse
               a robot file and attach more link shapes (a carried object)
    camera:    link, xyz, rpy, hfov_deg, vfov_deg, near, far, rho, rays,
               threshold, min_occluded_joints
    obstacles: list of {box: {...}} / {capsule: {...}}
    human:     {file: path} or {generator: name, params: {...}},
               plus action_kind and action_label
    task:      start / goal (or start_range / goal_range as [lo, hi] lists),
               duration, waypoints, start_time, warmup, execution_samples
    weights:   smoothness, static, human, occlusion, D
    human_model: r0, r1
    horizon:   horizon, step
    predictor: process_position, process_velocity, measurement, confidence_decay, threshold
    planner:   any PlannerParams field
    cost:      samples_per_segment

Relative file paths resolve against the scenario's directory first and
the shipped data directory second. Errors carry file, line and field.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .cost import CostWeights, Scene
from .errors import ConfigurationError, ParseError
from .geom import Box, Capsule, matrix_to_quat, transform_from_xyz_rpy
from .human import SkeletonSequence, read_sequence
from .occlusion import ACTION_KINDS, OcclusionSettings
from .plan import PlannerParams, ReplanTask
from .predict import KalmanPredictor, PredictionHorizon
from .robot import CameraMount, JointSpec, LinkShape, RobotModel
from . import synth

SCHEMA = "occplan-scenario/1"
DATA_DIR = Path(__file__).resolve().parent / "data"


class _Map(dict):
    """dict that remembers the source line of each key."""

    lines: dict
    line: int = 0


class _Seq(list):
    line: int = 0
    item_lines: list


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    m = _Map()
    m.lines = {}
    m.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        m[key] = loader.construct_object(v_node, deep=True)
        m.lines[key] = k_node.start_mark.line + 1
    return m


def _construct_seq(loader, node):
    s = _Seq(loader.construct_object(v, deep=True) for v in node.value)
    s.line = node.start_mark.line + 1
    s.item_lines = [v.start_mark.line + 1 for v in node.value]
    return s


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Ctx:
    """Field path + file for diagnostics."""

    def __init__(self, path, field_path: str = "", line: int = 0):
        self.path = path
        self.field = field_path
        self.line = line

    def child(self, key, container) -> "_Ctx":
        line = self.line
        if isinstance(container, _Map):
            line = container.lines.get(key, container.line)
        elif isinstance(container, _Seq) and isinstance(key, int) and key < len(container.item_lines):
            line = container.item_lines[key]
        name = f"{self.field}[{key}]" if isinstance(key, int) else (f"{self.field}.{key}" if self.field else key)
        return _Ctx(self.path, name, line)

    def error(self, msg: str) -> ParseError:
        return ParseError(f"{self.path}:{self.line}: field '{self.field}': {msg}")


def _get(block, key, ctx: _Ctx, default=..., kind=None):
    if not isinstance(block, dict):
        raise ctx.error("expected a mapping")
    if key not in block:
        if default is ...:
            raise ctx.child(key, block).error("missing required field")
        return default
    return block[key]


def _number(value, ctx: _Ctx, lo=None, hi=None, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ctx.error(f"expected an integer, got {value!r}")
    v = int(value) if integer else float(value)
    if not np.isfinite(v):
        raise ctx.error("must be finite")
    if lo is not None and v < lo:
        raise ctx.error(f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ctx.error(f"must be <= {hi}, got {v}")
    return v


def _vector(value, ctx: _Ctx, size: Optional[int] = None) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        raise ctx.error(f"expected a list of numbers, got {value!r}")
    if size is not None and len(value) != size:
        raise ctx.error(f"expected {size} numbers, got {len(value)}")
    return np.array([_number(v, ctx.child(i, value)) for i, v in enumerate(value)], dtype=float)


def _field(block, key, ctx, default=..., **kw):
    value = _get(block, key, ctx, default)
    if value is default and default is not ...:
        return default
    return _number(value, ctx.child(key, block), **kw)


def _vec_field(block, key, ctx, size=None, default=...):
    value = _get(block, key, ctx, default)
    if value is default and default is not ...:
        return None if default is None else np.asarray(default, dtype=float)
    return _vector(value, ctx.child(key, block), size)


def _pose(block, ctx) -> np.ndarray:
    if block is None:
        return np.eye(4)
    xyz = _vec_field(block, "xyz", ctx, 3, (0.0, 0.0, 0.0))
    rpy = _vec_field(block, "rpy", ctx, 3, (0.0, 0.0, 0.0))
    if "rpy_deg" in block:
        rpy = np.deg2rad(_vec_field(block, "rpy_deg", ctx, 3))
    return transform_from_xyz_rpy(xyz, rpy)


def _shape(block, ctx):
    if not isinstance(block, dict) or len([k for k in ("box", "capsule") if k in block]) != 1:
        raise ctx.error("expected exactly one of 'box' or 'capsule'")
    if "capsule" in block:
        c = block["capsule"]
        cc = ctx.child("capsule", block)
        a = _vec_field(c, "a", cc, 3)
        b = _vec_field(c, "b", cc, 3, a)
        return Capsule(a, b, _field(c, "radius", cc, lo=0.0))
    b = block["box"]
    bc = ctx.child("box", block)
    R = _pose(b, bc)[:3, :3]
    return Box(_vec_field(b, "center", bc, 3), _vec_field(b, "half_extents", bc, 3), matrix_to_quat(R))


def _resolve(name: str, base: Path, ctx: _Ctx) -> Path:
    for root in (base, DATA_DIR):
        p = (root / name).resolve()
        if p.exists():
            return p
    raise ctx.error(f"file {name!r} not found next to the scenario or in the shipped data")


def _load_yaml(path: Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ParseError(f"{path}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc


def robot_from_block(block, ctx: _Ctx, base: Path, camera_block=None) -> RobotModel:
    """Build a model from ``{name, base, joints: [...], shapes: [...], tool}``.

    Each joint has ``axis``, an ``origin`` pose ({xyz, rpy}) relative to its
    parent link, ``limits`` and ``velocity_limits``. Link 0 is the base; the
    child link of joint i is link i.
    """
    if isinstance(block, dict) and "file" in block:
        path = _resolve(str(block["file"]), base, ctx.child("file", block))
        model = robot_from_block(_load_yaml(path), _Ctx(path), path.parent, camera_block)
        extra = block.get("extra_shapes", []) or []
        ectx = ctx.child("extra_shapes", block)
        added = []
        for i, s in enumerate(extra):
            c = ectx.child(i, extra)
            link = int(_field(s, "link", c, lo=0, hi=model.dof, integer=True))
            added.append(LinkShape(link, _shape(s, c)))
        if added:
            model = RobotModel(model.joints, model.shapes + tuple(added), model.base_pose, model.camera_mount,
                               model.tool, model.name)
        return model
    joints_raw = _get(block, "joints", ctx)
    jctx = ctx.child("joints", block)
    if not isinstance(joints_raw, list) or not joints_raw:
        raise jctx.error("expected a non-empty list of joints")
    joints = []
    for i, j in enumerate(joints_raw):
        c = jctx.child(i, joints_raw)
        axis = _vec_field(j, "axis", c, 3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise c.child("axis", j).error("axis must be non-zero")
        try:
            joints.append(JointSpec(axis / norm, _pose(j.get("origin"), c.child("origin", j)),
                                    tuple(_vec_field(j, "limits", c, 2)),
                                    tuple(_vec_field(j, "velocity_limits", c, 2)),
                                    name=str(j.get("name", f"joint{i}"))))
        except ConfigurationError as exc:
            raise c.error(str(exc)) from exc
    shapes = []
    shapes_raw = block.get("shapes", [])
    sctx = ctx.child("shapes", block)
    for i, s in enumerate(shapes_raw):
        c = sctx.child(i, shapes_raw)
        link = int(_field(s, "link", c, lo=0, hi=len(joints), integer=True))
        shapes.append(LinkShape(link, _shape(s, c)))
    mount = CameraMount()
    if camera_block is not None:
        cam_ctx = _Ctx(ctx.path, "camera", getattr(camera_block, "line", 0))
        link = int(_field(camera_block, "link", cam_ctx, 0, lo=0, hi=len(joints), integer=True))
        mount = CameraMount(link, _pose(camera_block, cam_ctx))
    tool = _pose(block.get("tool"), ctx.child("tool", block))
    try:
        return RobotModel(tuple(joints), tuple(shapes), _pose(block.get("base"), ctx.child("base", block)),
                          mount, tool, str(block.get("name", "robot")))
    except ConfigurationError as exc:
        raise ctx.error(str(exc)) from exc


def _camera_settings(block, ctx, seed: int) -> OcclusionSettings:
    if block is None:
        return None
    kw = {}
    for key in ("hfov_deg", "vfov_deg"):
        if key in block:
            kw[key[:4]] = float(np.deg2rad(_field(block, key, ctx, lo=0.0)))
    for key in ("near", "far", "rho", "threshold"):
        if key in block:
            kw[key] = _field(block, key, ctx, lo=0.0)
    for key in ("rays", "min_occluded_joints"):
        if key in block:
            kw[key] = int(_field(block, key, ctx, lo=1, integer=True))
    kw["seed"] = int(_field(block, "seed", ctx, seed, integer=True))
    try:
        return OcclusionSettings(**kw)
    except ConfigurationError as exc:
        raise ctx.error(str(exc)) from exc


def _human(block, ctx, base: Path) -> tuple[SkeletonSequence, str]:
    kind = str(block.get("action_kind", "whole-body"))
    if kind not in ACTION_KINDS:
        raise ctx.child("action_kind", block).error(f"expected one of {ACTION_KINDS}, got {kind!r}")
    if "file" in block:
        path = _resolve(str(block["file"]), base, ctx.child("file", block))
        seq = read_sequence(path)
    elif "generator" in block:
        name = str(block["generator"])
        if name not in synth.GENERATORS:
            raise ctx.child("generator", block).error(f"unknown generator {name!r}; "
                                                      f"expected one of {sorted(synth.GENERATORS)}")
        params = dict(block.get("params", {}) or {})
        if "action_label" in block:
            params["action_label"] = str(block["action_label"])
        try:
            seq = synth.GENERATORS[name](**params)
        except TypeError as exc:
            raise ctx.child("params", block).error(str(exc)) from exc
    else:
        raise ctx.error("expected 'file' or 'generator'")
    return seq, kind


def _config(block, ctx, key, rng, dof, name) -> np.ndarray:
    if key in block:
        v = _vec_field(block, key, ctx, dof)
        return v
    rkey = f"{key}_range"
    if rkey in block:
        rc = ctx.child(rkey, block)
        pair = block[rkey]
        if not isinstance(pair, list) or len(pair) != 2:
            raise rc.error("expected [lower, upper] configuration lists")
        lo = _vector(pair[0], rc.child(0, pair), dof)
        hi = _vector(pair[1], rc.child(1, pair), dof)
        if np.any(lo > hi):
            raise rc.error("lower bound exceeds upper bound")
        return rng.uniform(lo, hi)
    raise ctx.error(f"missing {name} configuration ('{key}' or '{rkey}')")


def _dataclass_kwargs(cls, block, ctx, skip=()) -> dict:
    if block is None:
        return {}
    names = {f.name: f for f in fields(cls)}
    out = {}
    for key in block:
        if key in skip:
            continue
        if key not in names:
            raise ctx.child(key, block).error(f"unknown field; expected one of {sorted(names)}")
        default = getattr(cls(), key) if key != "D" else None
        if isinstance(default, bool):
            out[key] = bool(block[key])
        elif isinstance(default, int):
            out[key] = int(_field(block, key, ctx, integer=True))
        elif key == "D":
            out[key] = tuple(_vec_field(block, key, ctx))
        else:
            out[key] = _field(block, key, ctx)
    return out


def _build(cls, data, key, ctx, **extra):
    """Instantiate a parameter dataclass from an optional block, locating range errors."""
    bctx = ctx.child(key, data)
    kwargs = {**extra, **_dataclass_kwargs(cls, data.get(key), bctx)}
    try:
        return cls(**kwargs)
    except ParseError:
        raise
    except ConfigurationError as exc:
        raise bctx.error(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    path: Optional[Path]
    seed: int
    task: ReplanTask
    params: PlannerParams
    action_kind: str
    raw: Any

    @property
    def scene(self) -> Scene:
        return self.task.scene

    @property
    def model(self) -> RobotModel:
        return self.task.scene.model

    def with_weights(self, **kw) -> "Scenario":
        task = ReplanTask(**{**_task_kwargs(self.task), "weights": self.task.weights.replace(**kw)})
        return Scenario(self.name, self.path, self.seed, task, self.params, self.action_kind, self.raw)


def _task_kwargs(task: ReplanTask) -> dict:
    return {f.name: getattr(task, f.name) for f in fields(ReplanTask)}


def load_scenario(path, seed: int | None = None, weight_overrides: dict | None = None,
                  samples_per_segment: int | None = None) -> Scenario:
    path = Path(path)
    data = _load_yaml(path)
    return scenario_from_dict(data, path, seed, weight_overrides, samples_per_segment)


def scenario_from_dict(data, path=None, seed: int | None = None, weight_overrides: dict | None = None,
                       samples_per_segment: int | None = None) -> Scenario:
    path = Path(path) if path is not None else Path("<scenario>")
    base = path.parent
    ctx = _Ctx(path, "", getattr(data, "line", 0))
    if not isinstance(data, dict):
        raise ctx.error("scenario must be a mapping")
    schema = data.get("schema")
    if schema != SCHEMA:
        raise ctx.child("schema", data).error(f"expected {SCHEMA!r}, got {schema!r}")
    known = {"schema", "name", "seed", "robot", "camera", "obstacles", "human", "task", "weights",
             "human_model", "horizon", "predictor", "planner", "cost", "description"}
    for key in data:
        if key not in known:
            raise ctx.child(key, data).error(f"unknown top-level field; expected one of {sorted(known)}")
    seed = int(_field(data, "seed", ctx, 0, integer=True)) if seed is None else int(seed)
    rng = np.random.default_rng(seed)

    camera_block = data.get("camera")
    model = robot_from_block(_get(data, "robot", ctx), ctx.child("robot", data), base, camera_block)
    settings = _camera_settings(camera_block, ctx.child("camera", data), seed)

    obstacles = []
    obs_raw = data.get("obstacles", []) or []
    octx = ctx.child("obstacles", data)
    for i, o in enumerate(obs_raw):
        obstacles.append(_shape(o, octx.child(i, obs_raw)))

    hctx = ctx.child("human", data)
    truth, kind = _human(_get(data, "human", ctx), hctx, base)

    hm = data.get("human_model", {}) or {}
    hmctx = ctx.child("human_model", data)
    r0 = _field(hm, "r0", hmctx, 0.20, lo=0.0)
    r1 = _field(hm, "r1", hmctx, 0.05, lo=0.0)
    if r0 < r1:
        raise hmctx.error(f"r0 must be >= r1, got r0={r0}, r1={r1}")

    wctx = ctx.child("weights", data)
    weights = CostWeights(**_dataclass_kwargs(CostWeights, data.get("weights"), wctx))
    if weight_overrides:
        try:
            weights = weights.replace(**{k: float(v) for k, v in weight_overrides.items()})
        except TypeError as exc:
            raise ConfigurationError(f"bad weight override: {exc}") from exc

    cost_block = data.get("cost", {}) or {}
    S = int(_field(cost_block, "samples_per_segment", ctx.child("cost", data), 16, lo=4, integer=True))
    if samples_per_segment is not None:
        S = int(samples_per_segment)
    try:
        scene = Scene(model, tuple(obstacles), settings, None, truth.bone_pairs, r0, r1, S)
    except ConfigurationError as exc:
        raise ctx.child("cost", data).error(str(exc)) from exc

    horizon = _build(PredictionHorizon, data, "horizon", ctx)
    predictor = _build(KalmanPredictor, data, "predictor", ctx)
    params = _build(PlannerParams, data, "planner", ctx, seed=seed)

    task_block = _get(data, "task", ctx)
    tctx = ctx.child("task", data)
    q_start = _config(task_block, tctx, "start", rng, model.dof, "start")
    q_goal = _config(task_block, tctx, "goal", rng, model.dof, "goal")
    for label, q in (("start", q_start), ("goal", q_goal)):
        if not model.within_limits(q):
            from .errors import ConstraintError
            raise ConstraintError(f"{path}: task {label} configuration is outside the joint limits")
    kw = dict(
        duration=_field(task_block, "duration", tctx, 3.0, lo=0.0),
        waypoints=int(_field(task_block, "waypoints", tctx, 10, lo=1, integer=True)),
        start_time=_field(task_block, "start_time", tctx, None) if "start_time" in task_block else None,
        warmup=int(_field(task_block, "warmup", tctx, 0, lo=0, integer=True)),
        execution_samples=int(_field(task_block, "execution_samples", tctx, 11, lo=2, integer=True)),
    )
    try:
        task = ReplanTask(scene, q_start, q_goal, truth, weights=weights, horizon=horizon,
                          predictor=predictor, **kw)
    except ConfigurationError as exc:
        raise tctx.error(str(exc)) from exc
    if task.t0 - task.warmup * params.replan_period < truth.start_time - 1e-9:
        raise tctx.error("warm-up starts before the first human frame")
    return Scenario(str(data.get("name", path.stem)), path, seed, task, params, kind, data)


def shipped_scenarios() -> list[Path]:
    return sorted(p for p in DATA_DIR.glob("*.yaml") if p.name.startswith("scenario_"))
