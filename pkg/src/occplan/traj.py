"""Waypoint trajectory with per-DOF cubic Hermite interpolation.

A trajectory is the 3-row waypoint matrix: configurations ``q`` (N+1, n),
velocities ``qd`` (N+1, n) and knot times ``t`` (N+1,) with t[0] = 0.

Dump format (decimal text, one sample per row, whitespace separated)::

    # occplan-trajectory 1
    # dof: 7
    t q_0 ... q_{n-1} qd_0 ... qd_{n-1}
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, RangeError


@dataclass(frozen=True, eq=False)
class Trajectory:
    q: np.ndarray
    qd: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        qd = np.array(self.qd, dtype=float)
        t = np.array(self.t, dtype=float).reshape(-1)
        if q.ndim != 2 or q.shape != qd.shape or q.shape[0] != t.shape[0]:
            raise ParameterError(f"inconsistent waypoint shapes q{q.shape} qd{qd.shape} t{t.shape}")
        if t.shape[0] < 2:
            raise ParameterError("trajectory needs at least two waypoints")
        if t[0] != 0.0:
            raise ParameterError(f"first knot time must be 0, got {t[0]}")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("knot times must be strictly increasing")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ParameterError("waypoints must be finite")
        for arr in (q, qd, t):
            arr.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "t", t)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def segments(self) -> int:
        return self.t.shape[0] - 1

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    def with_waypoints(self, q=None, qd=None) -> "Trajectory":
        return Trajectory(self.q if q is None else q, self.qd if qd is None else qd, self.t)


class Sample(NamedTuple):
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray


def hermite_basis(u: np.ndarray):
    """Cubic Hermite basis (h00, h10, h01, h11) and its first two derivatives in u."""
    u2 = u * u
    u3 = u2 * u
    h = np.stack([2 * u3 - 3 * u2 + 1, u3 - 2 * u2 + u, -2 * u3 + 3 * u2, u3 - u2])
    dh = np.stack([6 * u2 - 6 * u, 3 * u2 - 4 * u + 1, -6 * u2 + 6 * u, 3 * u2 - 2 * u])
    ddh = np.stack([12 * u - 6, 6 * u - 4, -12 * u + 6, 6 * u - 2])
    return h, dh, ddh


def locate(t_knots: np.ndarray, ts: np.ndarray):
    """Segment index and local parameter u in [0, 1] for each query time."""
    seg = np.searchsorted(t_knots, ts, side="right") - 1
    seg = np.clip(seg, 0, len(t_knots) - 2)
    dt = t_knots[seg + 1] - t_knots[seg]
    u = (ts - t_knots[seg]) / dt
    return seg, u, dt


def sample_many(traj: Trajectory, ts) -> Sample:
    """Vectorised sampling at times ``ts`` (K,) -> arrays (K, n)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    T = traj.duration
    if np.any(ts < 0.0) or np.any(ts > T):
        raise RangeError(f"sample time outside [0, {T}]")
    seg, u, dt = locate(traj.t, ts)
    h, dh, ddh = hermite_basis(u)
    p0, p1 = traj.q[seg], traj.q[seg + 1]
    m0, m1 = traj.qd[seg] * dt[:, None], traj.qd[seg + 1] * dt[:, None]
    q = h[0][:, None] * p0 + h[1][:, None] * m0 + h[2][:, None] * p1 + h[3][:, None] * m1
    qd = (dh[0][:, None] * p0 + dh[1][:, None] * m0 + dh[2][:, None] * p1 + dh[3][:, None] * m1) / dt[:, None]
    qdd = (ddh[0][:, None] * p0 + ddh[1][:, None] * m0 + ddh[2][:, None] * p1
           + ddh[3][:, None] * m1) / (dt * dt)[:, None]
    # exact knot reproduction
    at_knot = u == 0.0
    q = np.where(at_knot[:, None], p0, q)
    qd = np.where(at_knot[:, None], traj.qd[seg], qd)
    at_end = u == 1.0
    q = np.where(at_end[:, None], p1, q)
    qd = np.where(at_end[:, None], traj.qd[seg + 1], qd)
    return Sample(q, qd, qdd)


def sample(traj: Trajectory, t: float) -> Sample:
    s = sample_many(traj, [t])
    return Sample(s.q[0], s.qd[0], s.qdd[0])


def basis_weights(traj: Trajectory, ts: np.ndarray):
    """Linear maps from waypoint values to sampled q and q'.

    Returns (Wq, Wqd) for positions and (Vq, Vqd) for velocities, each of
    shape (K, N+1): q(ts) = Wq @ Q + Vq @ Qd and q'(ts) = Wqd @ Q + Vqd @ Qd.
    """
    ts = np.asarray(ts, dtype=float)
    seg, u, dt = locate(traj.t, ts)
    h, dh, _ = hermite_basis(u)
    K, N1 = ts.shape[0], traj.t.shape[0]
    rows = np.arange(K)
    Wq = np.zeros((K, N1)); Vq = np.zeros((K, N1))
    Wqd = np.zeros((K, N1)); Vqd = np.zeros((K, N1))
    Wq[rows, seg] = h[0]; Wq[rows, seg + 1] = h[2]
    Vq[rows, seg] = h[1] * dt; Vq[rows, seg + 1] = h[3] * dt
    Wqd[rows, seg] = dh[0] / dt; Wqd[rows, seg + 1] = dh[2] / dt
    Vqd[rows, seg] = dh[1]; Vqd[rows, seg + 1] = dh[3]
    return Wq, Wqd, Vq, Vqd


def straight_line_init(q_s, q_g, n: int = 10, T: float = 1.0) -> Trajectory:
    """Waypoints evenly spaced on the segment from q_s to q_g; zero end velocities."""
    if n < 1 or T <= 0:
        raise ParameterError(f"need n >= 1 and T > 0, got n={n}, T={T}")
    q_s = np.asarray(q_s, dtype=float).reshape(-1)
    q_g = np.asarray(q_g, dtype=float).reshape(-1)
    lam = np.linspace(0.0, 1.0, n + 1)
    q = q_s[None] + lam[:, None] * (q_g - q_s)[None]
    q[0], q[-1] = q_s, q_g
    qd = np.repeat(((q_g - q_s) / T)[None], n + 1, axis=0)
    qd[0] = 0.0
    qd[-1] = 0.0
    return Trajectory(q, qd, np.linspace(0.0, T, n + 1))


def uniform_times(traj: Trajectory, samples: int) -> np.ndarray:
    return np.linspace(0.0, traj.duration, samples)


class Violation(NamedTuple):
    t: float
    dof: int
    kind: str
    value: float


def check_limits(traj: Trajectory, model, samples: int = 200, tol: float = 1e-12) -> list[Violation]:
    """Every uniformly sampled position/velocity outside the model's limits."""
    if samples < 2:
        raise ParameterError(f"samples must be >= 2, got {samples}")
    ts = uniform_times(traj, samples)
    s = sample_many(traj, ts)
    out: list[Violation] = []
    for kind, values, lo, hi in (("position", s.q, model.q_min, model.q_max),
                                 ("velocity", s.qd, model.qd_min, model.qd_max)):
        bad = (values < lo - tol) | (values > hi + tol)
        for k, d in zip(*np.nonzero(bad)):
            out.append(Violation(float(ts[k]), int(d), kind, float(values[k, d])))
    out.sort(key=lambda v: (v.t, v.dof, v.kind))
    return out


def cubic_coefficients(traj: Trajectory):
    """Per-segment power-basis coefficients in u: q = a u^3 + b u^2 + c u + d, each (N, n)."""
    dt = np.diff(traj.t)[:, None]
    p0, p1 = traj.q[:-1], traj.q[1:]
    m0, m1 = traj.qd[:-1] * dt, traj.qd[1:] * dt
    a = 2 * p0 + m0 - 2 * p1 + m1
    b = -3 * p0 - 2 * m0 + 3 * p1 - m1
    return a, b, m0, p0


def segment_bounds(traj: Trajectory):
    """Exact per-segment (q_lo, q_hi, qd_lo, qd_hi), each (N, n).

    Position extrema sit at the endpoints or at roots of q'(u) inside the
    segment; the velocity is a parabola in u, so its extremum is the vertex.
    """
    a, b, c, d = cubic_coefficients(traj)
    dt = np.diff(traj.t)[:, None]
    cand_u = [np.zeros_like(a), np.ones_like(a)]
    # roots of 3a u^2 + 2b u + c
    A, B, C = 3 * a, 2 * b, c
    disc = B * B - 4 * A * C
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        quad = np.abs(A) > 1e-14
        r1 = np.where(quad, (-B + sq) / (2 * A), np.where(np.abs(B) > 0, -C / B, 0.0))
        r2 = np.where(quad, (-B - sq) / (2 * A), r1)
        ok = np.where(quad, disc >= 0, True)
        vertex = np.where(np.abs(a) > 1e-14, -b / (3 * a), 0.0)
    for r in (r1, r2):
        cand_u.append(np.where(ok & (r > 0) & (r < 1), r, 0.0))
    U = np.stack(cand_u)
    qv = ((a * U + b) * U + c) * U + d
    Uv = np.stack([np.zeros_like(a), np.ones_like(a), np.clip(vertex, 0.0, 1.0)])
    vv = ((3 * a * Uv + 2 * b) * Uv + c) / dt
    return qv.min(0), qv.max(0), vv.min(0), vv.max(0)


def within_limits(traj: Trajectory, model, tol: float = 1e-12) -> bool:
    """True iff the continuous trajectory stays inside position and velocity limits."""
    qlo, qhi, vlo, vhi = segment_bounds(traj)
    return bool(np.all(qlo >= model.q_min - tol) and np.all(qhi <= model.q_max + tol)
                and np.all(vlo >= model.qd_min - tol) and np.all(vhi <= model.qd_max + tol))


def _fmt(v: float) -> str:
    return repr(float(v))


def dump_rows(traj: Trajectory, ts, offset: float = 0.0) -> list[str]:
    s = sample_many(traj, ts)
    rows = []
    for k, t in enumerate(np.atleast_1d(ts)):
        rows.append(" ".join([_fmt(t + offset)] + [_fmt(v) for v in s.q[k]] + [_fmt(v) for v in s.qd[k]]))
    return rows


def write_dump(traj: Trajectory, path, samples: int = 101) -> None:
    lines = ["# occplan-trajectory 1", f"# dof: {traj.dof}"]
    lines += dump_rows(traj, uniform_times(traj, samples))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dump(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a dump back into (t, q, qd) arrays."""
    dof = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if line.startswith("# dof:"):
                dof = int(line.split(":", 1)[1])
            continue
        if line.strip():
            rows.append([float(x) for x in line.split()])
    arr = np.array(rows)
    if dof is None:
        dof = (arr.shape[1] - 1) // 2
    return arr[:, 0], arr[:, 1:1 + dof], arr[:, 1 + dof:1 + 2 * dof]
