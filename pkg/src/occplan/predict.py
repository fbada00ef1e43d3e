"""Human motion prediction over a short horizon with per-joint confidences.

``Predictor`` is the update/predict contract the planner consumes. The
shipped implementation, :class:`KalmanPredictor`, runs one constant-velocity
Kalman filter per joint on Cartesian positions. Joints reported as occluded
(or untracked) skip the measurement step and coast on the process model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .errors import OrderingError, ParameterError, RangeError, StateError
from .human import N_JOINTS, SkeletonFrame, SkeletonSequence, frame_at
from .occlusion import OcclusionReport


@dataclass(frozen=True)
class PredictionHorizon:
    horizon: float = 3.0
    step: float = 0.5

    def __post_init__(self):
        if self.step <= 0 or self.horizon <= 0:
            raise ParameterError(f"horizon and step must be positive, got {self.horizon}, {self.step}")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ParameterError(f"horizon {self.horizon} is not a whole number of {self.step} s steps")

    @property
    def points(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def offsets(self) -> np.ndarray:
        return self.step * np.arange(1, self.points + 1)


@dataclass(frozen=True, eq=False)
class PredictedHuman:
    """Predicted joints at ``times`` plus the current (zero-offset) estimate.

    ``origin_*`` hold the filtered state at ``origin_time`` so that the
    prediction can be interpolated over the whole interval
    [origin_time, times[-1]].
    """

    times: np.ndarray            # (P,)
    joints: np.ndarray           # (P, 23, 3)
    confidences: np.ndarray      # (P, 23)
    origin_time: float
    origin_joints: np.ndarray    # (23, 3)
    origin_confidence: np.ndarray  # (23,)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ParameterError("prediction times must be strictly increasing")
        if len(times) and times[0] <= self.origin_time:
            raise ParameterError("prediction times must follow the origin time")
        conf = np.asarray(self.confidences, dtype=float)
        if np.any(conf < 0) or np.any(conf > 1):
            raise ParameterError("confidences must lie in [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float).reshape(-1, N_JOINTS, 3))
        object.__setattr__(self, "confidences", conf.reshape(-1, N_JOINTS))
        object.__setattr__(self, "origin_joints", np.asarray(self.origin_joints, dtype=float).reshape(N_JOINTS, 3))
        object.__setattr__(self, "origin_confidence",
                           np.asarray(self.origin_confidence, dtype=float).reshape(N_JOINTS))

    @property
    def all_times(self) -> np.ndarray:
        return np.concatenate([[self.origin_time], self.times])

    @property
    def end_time(self) -> float:
        return float(self.times[-1]) if len(self.times) else self.origin_time

    def covers(self, t0: float, t1: float) -> bool:
        return t0 >= self.origin_time - 1e-9 and t1 <= self.end_time + 1e-9

    def at(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-linear joints (K, 23, 3) and confidences (K, 23) at absolute times."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < self.origin_time - 1e-9) or np.any(ts > self.end_time + 1e-9):
            raise RangeError(f"prediction covers [{self.origin_time}, {self.end_time}], asked for "
                             f"[{ts.min()}, {ts.max()}]")
        grid = self.all_times
        J = np.concatenate([self.origin_joints[None], self.joints], axis=0)
        C = np.concatenate([self.origin_confidence[None], self.confidences], axis=0)
        idx = np.clip(np.searchsorted(grid, ts, side="right") - 1, 0, max(len(grid) - 2, 0))
        if len(grid) == 1:
            return np.repeat(J, len(ts), axis=0), np.repeat(C, len(ts), axis=0)
        t0 = grid[idx]
        t1 = grid[idx + 1]
        w = np.clip((ts - t0) / (t1 - t0), 0.0, 1.0)
        joints = (1.0 - w)[:, None, None] * J[idx] + w[:, None, None] * J[idx + 1]
        conf = (1.0 - w)[:, None] * C[idx] + w[:, None] * C[idx + 1]
        return joints, conf

    @classmethod
    def static(cls, joints, confidence=1.0, t0: float = 0.0, horizon: PredictionHorizon | None = None) -> "PredictedHuman":
        """A prediction that holds ``joints`` fixed over the horizon."""
        horizon = horizon or PredictionHorizon()
        joints = np.asarray(joints, dtype=float).reshape(N_JOINTS, 3)
        conf = np.broadcast_to(np.asarray(confidence, dtype=float), (N_JOINTS,)).copy()
        P = horizon.points
        return cls(t0 + horizon.offsets, np.repeat(joints[None], P, 0), np.repeat(conf[None], P, 0),
                   t0, joints, conf)


@dataclass(frozen=True, eq=False)
class JointFilterState:
    """Per-joint [position, velocity] estimate with 6x6 covariance."""

    time: Optional[float]
    x: np.ndarray          # (23, 6)
    P: np.ndarray          # (23, 6, 6)
    frames: int            # frames ingested
    measured: np.ndarray   # (23,) measurement count per joint
    last_measured: np.ndarray  # (23, 3) last measured position per joint
    last_time: np.ndarray      # (23,) time of that measurement

    @property
    def initialized(self) -> bool:
        return self.frames >= 2

    @property
    def positions(self) -> np.ndarray:
        return self.x[:, :3]

    @property
    def velocities(self) -> np.ndarray:
        return self.x[:, 3:]

    @property
    def covariance_trace(self) -> np.ndarray:
        return np.trace(self.P, axis1=1, axis2=2)


class Predictor(Protocol):
    def initial_state(self) -> JointFilterState: ...

    def update(self, state: JointFilterState, frame: SkeletonFrame, report: OcclusionReport) -> JointFilterState: ...

    def predict(self, state: JointFilterState, horizon: PredictionHorizon,
                current_report: OcclusionReport) -> PredictedHuman: ...


def _cv_matrices(dt: float, q_pos: float, q_vel: float):
    I3 = np.eye(3)
    F = np.block([[I3, dt * I3], [np.zeros((3, 3)), I3]])
    Q = np.diag([q_pos] * 3 + [q_vel] * 3) * dt
    return F, Q


@dataclass(frozen=True)
class KalmanPredictor:
    """Constant-velocity Kalman baseline for 23 Cartesian joints.

    Noise values are variances: ``process_position`` and ``process_velocity``
    per second of elapsed time, ``measurement`` per observation. The first
    two measurements of a joint initialise it by two-point differencing.
    """

    process_position: float = 1e-4
    process_velocity: float = 1e-2
    measurement: float = 1e-4
    confidence_decay: float = 1.0
    threshold: float = 0.5

    def initial_state(self) -> JointFilterState:
        return JointFilterState(None, np.zeros((N_JOINTS, 6)), np.tile(np.eye(6), (N_JOINTS, 1, 1)),
                                0, np.zeros(N_JOINTS, dtype=int), np.zeros((N_JOINTS, 3)),
                                np.zeros(N_JOINTS))

    def observed_mask(self, frame: SkeletonFrame, report: OcclusionReport) -> np.ndarray:
        return frame.tracked & (report.per_joint_confidence >= self.threshold)

    def update(self, state: JointFilterState, frame: SkeletonFrame, report: OcclusionReport) -> JointFilterState:
        if state.time is not None and frame.time <= state.time:
            raise OrderingError(f"frame time {frame.time} does not follow filter time {state.time}")
        z = frame.joints
        obs = self.observed_mask(frame, report)
        x = state.x.copy()
        P = state.P.copy()
        measured = state.measured.copy()
        last = state.last_measured.copy()
        last_t = state.last_time.copy()
        R = self.measurement * np.eye(3)
        H = np.hstack([np.eye(3), np.zeros((3, 3))])

        if state.time is not None:
            dt = frame.time - state.time
            F, Q = _cv_matrices(dt, self.process_position, self.process_velocity)
            x = x @ F.T
            P = F @ P @ F.T + Q

        for k in range(N_JOINTS):
            if not obs[k]:
                continue
            if measured[k] == 0:
                x[k] = np.concatenate([z[k], np.zeros(3)])
                P[k] = np.diag([self.measurement] * 3 + [1.0] * 3)
            elif measured[k] == 1:
                gap = frame.time - last_t[k]
                v = (z[k] - last[k]) / gap
                x[k] = np.concatenate([z[k], v])
                r = self.measurement
                P[k] = np.block([[r * np.eye(3), (r / gap) * np.eye(3)],
                                 [(r / gap) * np.eye(3), (2 * r / gap ** 2) * np.eye(3)]])
            else:
                y = z[k] - H @ x[k]
                S = H @ P[k] @ H.T + R
                K = P[k] @ H.T @ np.linalg.inv(S)
                x[k] = x[k] + K @ y
                IKH = np.eye(6) - K @ H
                P[k] = IKH @ P[k] @ IKH.T + K @ R @ K.T  # Joseph form keeps P symmetric PSD
                P[k] = 0.5 * (P[k] + P[k].T)
            measured[k] += 1
            last[k] = z[k]
            last_t[k] = frame.time

        never = measured == 0
        if np.any(never) and np.any(~never):
            # no information yet: hold at the centroid of the measured joints
            x[never, :3] = x[~never, :3].mean(axis=0)
            x[never, 3:] = 0.0
        return JointFilterState(frame.time, x, P, state.frames + 1, measured, last, last_t)

    def predict(self, state: JointFilterState, horizon: PredictionHorizon,
                current_report: OcclusionReport) -> PredictedHuman:
        if not state.initialized:
            raise StateError(f"predictor needs at least 2 frames, has {state.frames}")
        dts = horizon.offsets
        p = state.positions
        v = state.velocities
        joints = p[None] + dts[:, None, None] * v[None]
        base = np.clip(current_report.per_joint_confidence, 0.0, 1.0)
        decay = self.confidence_decay ** dts
        conf = np.clip(base[None, :] * decay[:, None], 0.0, 1.0)
        return PredictedHuman(state.time + dts, joints, conf, state.time, p.copy(), base.copy())


def error_distance(predicted: PredictedHuman, truth: SkeletonSequence, t: float, tol: float = 1e-9) -> float:
    """Mean Euclidean joint error between prediction and ground truth at time t."""
    match = np.nonzero(np.abs(predicted.times - t) <= tol)[0]
    if match.size == 0:
        raise RangeError(f"t={t} is not a prediction time {predicted.times.tolist()}")
    frame = frame_at(truth, float(t))
    diff = predicted.joints[match[0]] - frame.joints
    return float(np.mean(np.linalg.norm(diff, axis=-1)))
