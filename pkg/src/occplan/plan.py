"""Projected finite-difference trajectory optimizer and the replanning loop.

The decision variables are the interior waypoint positions and velocities;
the endpoint configurations and both endpoint velocities stay fixed. Each
iteration takes a central-difference gradient of the weighted objective,
normalises it by its max-norm, and backtracks on the step until a projected
candidate both lowers the cost and stays inside the joint limits. After a
run of stalled iterations a batch of smooth random perturbations (STOMP
style) is tried before declaring convergence.

Every waypoint only influences its two adjacent segments, so the perturbed
samples of one variable are the base samples plus ``eps`` times a column of
the Hermite basis. All perturbations of one gradient are evaluated as a
single batch, and the ray offsets of the occlusion term are shared between
the + and - evaluations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .cost import (TERMS, CostReport, CostWeights, Scene, human_at, human_overlaps, integrands, max_overlap,
                   sample_grid, total_cost, evaluate_terms)
from .errors import ConstraintError, ParameterError
from .human import SkeletonSequence
from .occlusion import OcclusionReport, occlusion_report, summarize, visibility_batch
from .predict import KalmanPredictor, PredictedHuman, PredictionHorizon, Predictor, error_distance
from .robot import camera_pose, camera_pose_batch, fk_batch, shape_arrays
from .traj import Trajectory, basis_weights, sample_many, straight_line_init, check_limits, within_limits


@dataclass(frozen=True)
class PlannerParams:
    """Optimizer and replanning knobs.

    ``step_size`` is the initial max-norm step on the normalised gradient
    direction; ``tolerance`` is the absolute cost decrease below which an
    iteration counts as stalled.
    """

    max_iterations: int = 100
    step_size: float = 0.05
    max_step: float = 0.5
    min_step: float = 1e-6
    fd_epsilon: float = 1e-5
    occlusion_epsilon: float = 0.02
    perturbations: int = 8
    perturbation_scale: float = 0.05
    stall_iterations: int = 3
    escape_rounds: int = 1
    tolerance: float = 1e-9
    replan_period: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("max_iterations", "step_size", "max_step", "min_step", "fd_epsilon", "occlusion_epsilon",
                     "stall_iterations", "replan_period"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"planner parameter {name} must be positive, got {getattr(self, name)}")
        for name in ("perturbations", "perturbation_scale", "escape_rounds", "tolerance"):
            if getattr(self, name) < 0:
                raise ParameterError(f"planner parameter {name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class PlanResult:
    trajectory: Trajectory
    report: CostReport
    iterations: int
    converged: bool
    trace: tuple[float, ...]
    evaluations: int = 0
    wall_time: float = 0.0


def active_terms(scene: Scene, weights: CostWeights) -> list[str]:
    return [t for t in TERMS if weights.weight(t) > 0 and scene.has_term(t)]


def objective(traj: Trajectory, scene: Scene, weights: CostWeights, terms: Sequence[str] | None = None) -> float:
    """Weighted sum over the terms that can contribute (weight > 0, inputs present)."""
    terms = active_terms(scene, weights) if terms is None else list(terms)
    if not terms:
        return 0.0
    values, _ = evaluate_terms(traj, scene, terms, weights.diag(traj.dof))
    return float(sum(weights.weight(t) * values[t] for t in terms))


def _weighted(vals: dict[str, np.ndarray], weights: CostWeights) -> np.ndarray:
    out = None
    for term, v in vals.items():
        part = weights.weight(term) * v
        out = part if out is None else out + part
    return out


def _fd_batch(traj: Trajectory, scene: Scene, weights: CostWeights, eps: float, terms: Sequence[str]):
    N, n = traj.segments, traj.dof
    S = scene.samples_per_segment
    ts, w = sample_grid(traj, S)
    base = sample_many(traj, ts)
    Wq, Wqd, Vq, Vqd = basis_weights(traj, ts)

    L = 2 * S + 1
    idx = (np.arange(1, N)[:, None] - 1) * S + np.arange(L)[None, :]  # (N-1, L) sample rows per waypoint
    wi = np.arange(1, N)[:, None]
    eye = np.eye(n)
    qs, qds = [], []
    # basis columns of waypoint i on its two-segment support: (N-1, L)
    for cq, cqd in ((Wq[idx, wi], Wqd[idx, wi]), (Vq[idx, wi], Vqd[idx, wi])):
        for sign in (1.0, -1.0):
            qs.append(base.q[idx][:, None] + sign * eps * cq[:, None, :, None] * eye[None, :, None, :])
            qds.append(base.qd[idx][:, None] + sign * eps * cqd[:, None, :, None] * eye[None, :, None, :])
    Q = np.stack(qs)    # (4, N-1, n, L, n): [q+, q-, qd+, qd-]
    QD = np.stack(qds)
    T_rel = np.broadcast_to(ts[idx][None, :, None, :], Q.shape[:-1])
    vals = integrands(scene, Q.reshape(-1, n), QD.reshape(-1, n), T_rel.reshape(-1), terms,
                      weights.diag(n))
    f = _weighted(vals, weights).reshape(Q.shape[:-1])
    wl = w[idx][:, None, :]
    diff_q = np.sum(wl * (f[0] - f[1]), axis=-1) / (2 * eps)
    diff_qd = np.sum(wl * (f[2] - f[3]), axis=-1) / (2 * eps)
    return diff_q, diff_qd


def fd_gradient(traj: Trajectory, scene: Scene, weights: CostWeights, eps: float = 1e-5,
                terms: Sequence[str] | None = None, occlusion_eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient of the objective w.r.t. interior waypoints.

    The occlusion integrand is piecewise constant in the waypoints (each ray
    either hits or misses), so its differences use the wider
    ``occlusion_eps`` when given; the ray offsets are shared by both sides.
    Returns (g_q, g_qd), each (N+1, n); rows 0 and N are zero since the end
    waypoints are not variables.
    """
    terms = active_terms(scene, weights) if terms is None else list(terms)
    N, n = traj.segments, traj.dof
    g_q = np.zeros((N + 1, n))
    g_qd = np.zeros((N + 1, n))
    if N < 2 or not terms:
        return g_q, g_qd
    groups = [(eps, terms)]
    if occlusion_eps is not None and "occlusion" in terms:
        rest = [t for t in terms if t != "occlusion"]
        groups = [(eps, rest), (occlusion_eps, ["occlusion"])] if rest else [(occlusion_eps, ["occlusion"])]
    for e, group in groups:
        dq, dqd = _fd_batch(traj, scene, weights, e, group)
        g_q[1:N] += dq
        g_qd[1:N] += dqd
    return g_q, g_qd


def naive_gradient(traj: Trajectory, scene: Scene, weights: CostWeights, eps: float = 1e-5,
                   terms: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reference central differences: one full objective evaluation per perturbation."""
    N, n = traj.segments, traj.dof
    g_q = np.zeros((N + 1, n))
    g_qd = np.zeros((N + 1, n))
    for i in range(1, N):
        for d in range(n):
            for arr, g, is_q in ((traj.q, g_q, True), (traj.qd, g_qd, False)):
                vals = []
                for sign in (1.0, -1.0):
                    a = arr.copy()
                    a[i, d] += sign * eps
                    t = traj.with_waypoints(q=a) if is_q else traj.with_waypoints(qd=a)
                    vals.append(objective(t, scene, weights, terms))
                g[i, d] = (vals[0] - vals[1]) / (2 * eps)
    return g_q, g_qd


def project(traj: Trajectory, model) -> Trajectory:
    """Clip interior waypoints into the position and velocity boxes."""
    q = traj.q.copy()
    qd = traj.qd.copy()
    q[1:-1] = np.clip(q[1:-1], model.q_min, model.q_max)
    qd[1:-1] = np.clip(qd[1:-1], model.qd_min, model.qd_max)
    return traj.with_waypoints(q, qd)


def _step(traj: Trajectory, dq: np.ndarray, dqd: np.ndarray) -> Trajectory:
    q = traj.q.copy()
    qd = traj.qd.copy()
    q[1:-1] += dq[1:-1]
    qd[1:-1] += dqd[1:-1]
    return traj.with_waypoints(q, qd)


def smooth_noise(rng: np.random.Generator, count: int, points: int) -> np.ndarray:
    """Correlated unit-scale noise over ``points`` interior waypoints -> (count, points).

    The covariance is the inverse of A^T A for the second-difference matrix A
    with zero boundary values, normalised to unit maximum variance.
    """
    if points == 0:
        return np.zeros((count, 0))
    A = np.zeros((points + 2, points))
    for k in range(points):
        A[k, k] = 1.0
        A[k + 1, k] = -2.0
        A[k + 2, k] = 1.0
    cov = np.linalg.inv(A.T @ A)
    cov /= np.max(np.diag(cov))
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(points))
    return rng.standard_normal((count, points)) @ L.T


def perturbation_candidates(traj: Trajectory, rng: np.random.Generator, count: int, scale: float):
    """Smooth random moves of the interior waypoints; velocities follow the position noise."""
    N, n = traj.segments, traj.dof
    dt = np.diff(traj.t)
    out = []
    noise = smooth_noise(rng, count * n, N - 1).reshape(count, n, N - 1)
    for k in range(count):
        e = np.zeros((N + 1, n))
        e[1:N] = scale * noise[k].T
        de = np.zeros((N + 1, n))
        de[1:N] = (e[2:] - e[:-2]) / (dt[1:, None] + dt[:-1, None])
        out.append(_step(traj, e, de))
    return out


def _check_endpoints(traj: Trajectory, model) -> None:
    for label, q in (("start", traj.q[0]), ("goal", traj.q[-1])):
        if not model.within_limits(q):
            raise ConstraintError(f"{label} configuration {np.round(q, 6).tolist()} is outside the joint limits")
    for label, v in (("start", traj.qd[0]), ("goal", traj.qd[-1])):
        if np.any(v < model.qd_min) or np.any(v > model.qd_max):
            raise ConstraintError(f"{label} velocity is outside the velocity limits")


def _pack(g_q: np.ndarray, g_qd: np.ndarray) -> np.ndarray:
    return np.concatenate([g_q[1:-1].ravel(), g_qd[1:-1].ravel()])


def _unpack(v: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    N1, n = shape
    m = (N1 - 2) * n
    dq = np.zeros(shape)
    dqd = np.zeros(shape)
    dq[1:-1] = v[:m].reshape(N1 - 2, n)
    dqd[1:-1] = v[m:].reshape(N1 - 2, n)
    return dq, dqd


def _lbfgs_direction(g: np.ndarray, memory: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Two-loop recursion: -H g for the stored (s, y) pairs."""
    q = g.copy()
    alphas = []
    for s, y in reversed(memory):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if memory:
        s, y = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(memory, reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return -q


def optimize(initial: Trajectory, scene: Scene, weights: CostWeights | None = None,
             params: PlannerParams | None = None, rng: np.random.Generator | None = None) -> PlanResult:
    """Minimise the weighted objective subject to joint and velocity limits.

    The search direction is a limited-memory quasi-Newton step on the
    finite-difference gradient, falling back to the max-norm normalised
    steepest descent whenever it is not a descent direction.

    Raises:
        ConstraintError: the endpoints or the initial trajectory violate the limits.
    """
    weights = weights or CostWeights()
    params = params or PlannerParams()
    rng = np.random.default_rng(params.seed) if rng is None else rng
    model = scene.model
    start = time.perf_counter()
    _check_endpoints(initial, model)
    if not within_limits(initial, model):
        raise ConstraintError("initial trajectory violates the joint or velocity limits")

    terms = active_terms(scene, weights)
    shape = initial.q.shape
    x = initial
    c = objective(x, scene, weights, terms)
    evals = 1
    trace = [c]
    stall = 0
    converged = False
    iterations = 0
    escapes = 0
    memory: list[tuple[np.ndarray, np.ndarray]] = []
    g = _pack(*fd_gradient(x, scene, weights, params.fd_epsilon, terms, params.occlusion_epsilon))

    for it in range(1, params.max_iterations + 1):
        iterations = it
        decrease = 0.0
        gmax = np.max(np.abs(g)) if g.size else 0.0
        if gmax > 0 and np.isfinite(gmax):
            d = _lbfgs_direction(g, memory) if memory else None
            if d is None or not g @ d < 0:
                d = -g / gmax * params.step_size
                memory.clear()
            dmax = np.max(np.abs(d))
            s = min(1.0, params.max_step / dmax)
            accepted = False
            while s * dmax >= params.min_step:
                cand = project(_step(x, *_unpack(s * d, shape)), model)
                if within_limits(cand, model):
                    cc = objective(cand, scene, weights, terms)
                    evals += 1
                    if cc < c:
                        accepted = True
                        break
                s *= 0.5
            if accepted:
                g_new = _pack(*fd_gradient(cand, scene, weights, params.fd_epsilon, terms, params.occlusion_epsilon))
                sv = _pack(cand.q - x.q, cand.qd - x.qd)
                yv = g_new - g
                if sv @ yv > 1e-12 * max(1.0, float(sv @ sv)):
                    memory.append((sv, yv))
                    if len(memory) > 8:
                        memory.pop(0)
                decrease = c - cc
                x, c, g = cand, cc, g_new
            else:
                memory.clear()
        stall = stall + 1 if decrease <= params.tolerance else 0
        if stall >= params.stall_iterations:
            improved = False
            if params.perturbations and escapes < params.escape_rounds and x.segments > 1:
                escapes += 1
                best, best_c = None, c
                for cand in perturbation_candidates(x, rng, params.perturbations, params.perturbation_scale):
                    cand = project(cand, model)
                    if not within_limits(cand, model):
                        continue
                    cc = objective(cand, scene, weights, terms)
                    evals += 1
                    if cc < best_c - params.tolerance:
                        best, best_c = cand, cc
                if best is not None:
                    x, c = best, best_c
                    g = _pack(*fd_gradient(x, scene, weights, params.fd_epsilon, terms, params.occlusion_epsilon))
                    memory.clear()
                    improved = True
                    stall = 0
            if not improved:
                trace.append(c)
                converged = True
                break
        trace.append(c)
        if c == 0.0:
            converged = True
            break

    report = total_cost(x, scene, weights)
    return PlanResult(x, report, iterations, converged, tuple(trace), evals, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# replanning


@dataclass(frozen=True, eq=False)
class ReplanTask:
    """One point-to-point task executed against a streamed human.

    ``scene`` supplies the robot, obstacles, occlusion settings, radii and
    quadrature density; its ``human`` field is replaced every cycle.
    ``duration`` is the total motion time and must not exceed the
    prediction horizon. ``warmup`` sensing cycles run before the motion
    starts, with the robot parked at ``q_start``.
    """

    scene: Scene
    q_start: np.ndarray
    q_goal: np.ndarray
    truth: SkeletonSequence
    duration: float = 3.0
    waypoints: int = 6
    weights: CostWeights = field(default_factory=CostWeights)
    horizon: PredictionHorizon = field(default_factory=PredictionHorizon)
    predictor: Predictor = field(default_factory=KalmanPredictor)
    start_time: Optional[float] = None
    warmup: int = 0
    execution_samples: int = 11

    def __post_init__(self):
        object.__setattr__(self, "q_start", np.asarray(self.q_start, dtype=float).reshape(-1))
        object.__setattr__(self, "q_goal", np.asarray(self.q_goal, dtype=float).reshape(-1))
        if self.duration <= 0 or self.waypoints < 1:
            raise ParameterError("task needs duration > 0 and at least one segment")
        if self.duration > self.horizon.horizon + 1e-9:
            raise ParameterError(f"task duration {self.duration} exceeds the prediction horizon "
                                 f"{self.horizon.horizon}")
        if self.execution_samples < 2:
            raise ParameterError("execution_samples must be >= 2")

    @property
    def t0(self) -> float:
        return self.truth.start_time if self.start_time is None else float(self.start_time)


@dataclass(frozen=True, eq=False)
class ReplanStep:
    """Everything observed and produced in one replanning cycle."""

    cycle: int
    time: float
    result: PlanResult
    remaining: float
    sensing: OcclusionReport
    prediction: Optional[PredictedHuman]
    human_enabled: bool
    pre_human_cost: float
    executed_times: np.ndarray
    executed_q: np.ndarray
    executed_alpha: np.ndarray
    truth_overlap: np.ndarray
    d_err: np.ndarray
    violations: int


def shift_trajectory(prev: Trajectory, elapsed: float, segments: int, q_now, qd_now, q_goal) -> Trajectory:
    """Warm start: the part of ``prev`` after ``elapsed`` on a fresh uniform knot grid."""
    T = prev.duration - elapsed
    if T <= 0:
        raise ParameterError("nothing left of the previous trajectory to shift")
    t = np.linspace(0.0, T, segments + 1)
    s = sample_many(prev, np.clip(t + elapsed, 0.0, prev.duration))
    q = s.q.copy()
    qd = s.qd.copy()
    q[0], qd[0] = q_now, qd_now
    q[-1], qd[-1] = q_goal, 0.0
    return Trajectory(q, qd, t)


def _segments_for(task: ReplanTask, remaining: float) -> int:
    return max(1, int(round(task.waypoints * remaining / task.duration)))


def _truth_checks(task: ReplanTask, traj: Trajectory, abs_t0: float, span: float):
    """Frame confidence and signed robot/human overlap along the executed span."""
    sc = task.scene
    ts = np.linspace(0.0, span, task.execution_samples)
    abs_ts = np.clip(abs_t0 + ts, task.truth.start_time, task.truth.end_time)
    s = sample_many(traj, ts)
    poses = fk_batch(sc.model, s.q)
    shapes = shape_arrays(sc.model, poses)
    joints, conf, tracked = human_at(task.truth, abs_ts)
    # the physical body: tracked joints at the confident radius
    truth_scene = sc.replace(r0=sc.r1)
    overlap = max_overlap(human_overlaps(truth_scene, shapes, joints, conf), len(ts))
    if sc.occlusion is not None:
        o = sc.occlusion
        cam = camera_pose_batch(sc.model, poses)
        vis = visibility_batch(cam, joints, shapes, o.offsets, o.hfov, o.vfov, o.near, o.far)
        alpha = summarize(vis, tracked, o.threshold, o.min_occluded_joints)[1]
    else:
        alpha = np.ones(len(ts))
    return abs_t0 + ts, s.q, alpha, overlap


def _d_err(prediction: Optional[PredictedHuman], truth: SkeletonSequence, horizon: PredictionHorizon) -> np.ndarray:
    out = np.full(horizon.points, np.nan)
    if prediction is None:
        return out
    for k, t in enumerate(prediction.times[:horizon.points]):
        if truth.start_time <= t <= truth.end_time:
            out[k] = error_distance(prediction, truth, float(t))
    return out


def replan_loop(task: ReplanTask, params: PlannerParams | None = None) -> Iterator[ReplanStep]:
    """Sense, predict and re-optimize every ``replan_period`` seconds of simulated time.

    The simulator executes the commanded trajectory exactly, so the next
    start state is the commanded state at the end of the period.
    """
    params = params or PlannerParams()
    sc = task.scene
    model = sc.model
    period = params.replan_period
    predictor = task.predictor
    state = predictor.initial_state()
    q_now = task.q_start.copy()
    qd_now = np.zeros(model.dof)
    init = straight_line_init(task.q_start, task.q_goal, task.waypoints, task.duration)

    def sense(t: float, q):
        nonlocal state
        frame = task.truth.latest_before(t)
        poses = fk_batch(model, np.asarray(q)[None])
        shapes = shape_arrays(model, poses)
        settings = sc.occlusion
        if settings is None:
            report = OcclusionReport.fully_visible()
        else:
            report = occlusion_report(settings.camera(camera_pose_batch(model, poses)[0]), frame, shapes, settings)
        if state.time is None or frame.time > state.time:
            state = predictor.update(state, frame, report)
        return report

    for k in range(task.warmup, 0, -1):
        sense(task.t0 - k * period, q_now)
    t = task.t0

    remaining = task.duration
    prev: Optional[Trajectory] = None
    cycle = 0
    while remaining > 1e-9:
        report = sense(t, q_now)
        prediction = predictor.predict(state, task.horizon, report) if state.initialized else None
        segments = _segments_for(task, remaining)
        if prev is None:
            warm = init
        else:
            warm = shift_trajectory(prev, period, segments, q_now, qd_now, task.q_goal)
            if not within_limits(warm, model):
                warm = straight_line_init(q_now, task.q_goal, segments, remaining)
                warm = warm.with_waypoints(qd=np.vstack([qd_now, warm.qd[1:]]))
        human_enabled = prediction is not None
        scene = sc.replace(human=prediction, time_offset=t if human_enabled else None)
        pre_human = 0.0
        if human_enabled:
            pre_human = evaluate_terms(warm, scene, ["human"])[0]["human"]
        rng = np.random.default_rng([params.seed, cycle])
        result = optimize(warm, scene, task.weights, params, rng)
        traj = result.trajectory
        span = min(period, remaining)
        ex_t, ex_q, alpha, overlap = _truth_checks(task, traj, t, span)
        violations = len(check_limits(traj, model))
        yield ReplanStep(cycle, t, result, remaining, report, prediction, human_enabled, pre_human,
                         ex_t, ex_q, alpha, overlap, _d_err(prediction, task.truth, task.horizon), violations)
        end = sample_many(traj, [span])
        q_now, qd_now = end.q[0], end.qd[0]
        if span >= remaining - 1e-9:
            break
        prev = traj
        cycle += 1
        remaining = task.duration - cycle * period
        t = task.t0 + cycle * period
