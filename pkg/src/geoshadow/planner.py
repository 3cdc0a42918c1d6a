"""Code synthesis that steers the slow dynamics along a prescribed curve.

The curve is cut into waypoints ``eps * L`` apart.  From the current
trajectory point at the last waypoint index, the displacement to the next
waypoint is split into nonnegative guiding times along a cone basis of
guiding fields; each guiding time becomes a run of identical symbols.
Physical time is glued to curve time piecewise linearly over waypoints.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import (ConfigurationError, DomainError, InputError, PreconditionError,
                     RangeError, ShadowingFailure)
from .geometry import GuidingFieldSet, as_slow_point
from .spanning import check_A3_region, cone_decompose
from .symbolic import (Code, Constants, ReducedMapParams, Trajectory, constants,
                       iterate_forward, return_times, trajectory)

ROOT_XTOL = 1e-15
CEIL_TOL = 1e-9


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class CurveSpec:
    """A continuous curve ``t -> gamma(t)``, ``t >= 0``.

    ``speed`` is a Lipschitz bound used to size the crossing scan.
    """

    sampler: Callable[[float], np.ndarray]
    speed: float
    kind: str = "parametric"
    params: dict = field(default_factory=dict)

    def __call__(self, t: float) -> np.ndarray:
        p = np.asarray(self.sampler(float(t)), dtype=float)
        if not np.all(np.isfinite(p)):
            raise InputError(f"curve returned a non-finite point at t = {t}")
        return p

    # presets --------------------------------------------------------------

    @classmethod
    def line(cls, start, velocity) -> "CurveSpec":
        start = np.array(start, dtype=float)
        velocity = np.array(velocity, dtype=float)
        if start.shape != velocity.shape:
            raise ConfigurationError("line start and velocity must have the same shape")
        return cls(lambda t: start + t * velocity, float(np.linalg.norm(velocity)), "line",
                   {"start": start.tolist(), "velocity": velocity.tolist()})

    @classmethod
    def constant(cls, point) -> "CurveSpec":
        point = np.array(point, dtype=float)
        return cls(lambda t: point.copy(), 0.0, "constant", {"point": point.tolist()})

    @classmethod
    def circle(cls, center, radius: float, omega: float = 1.0, phase: float = 0.0,
               plane: tuple[int, int] | None = None) -> "CurveSpec":
        """Circle in the coordinate plane ``plane`` (default ``(u1, v1)``)."""
        center = np.array(center, dtype=float)
        if radius < 0:
            raise ConfigurationError("radius must be non-negative")
        i, j = plane if plane is not None else (0, center.size // 2)

        def sample(t):
            p = center.copy()
            p[i] += radius * math.cos(omega * t + phase)
            p[j] += radius * math.sin(omega * t + phase)
            return p

        return cls(sample, abs(radius * omega), "circle",
                   {"center": center.tolist(), "radius": radius, "omega": omega, "phase": phase})

    @classmethod
    def lissajous(cls, center, amplitudes, frequencies, phase: float = math.pi / 2,
                  plane: tuple[int, int] | None = None) -> "CurveSpec":
        center = np.array(center, dtype=float)
        (ax, ay), (fx, fy) = amplitudes, frequencies
        i, j = plane if plane is not None else (0, center.size // 2)

        def sample(t):
            p = center.copy()
            p[i] += ax * math.sin(fx * t + phase)
            p[j] += ay * math.sin(fy * t)
            return p

        return cls(sample, math.hypot(ax * fx, ay * fy), "lissajous",
                   {"center": center.tolist(), "amplitudes": [ax, ay],
                    "frequencies": [fx, fy], "phase": phase})

    @classmethod
    def polyline(cls, points, speed: float = 1.0) -> "CurveSpec":
        """Arclength-parameterized polyline; rests at the last vertex afterwards."""
        pts = np.array(points, dtype=float)
        if pts.ndim != 2 or len(pts) < 1:
            raise ConfigurationError("polyline needs a (k, 2d) array of points")
        if not np.all(np.isfinite(pts)):
            raise InputError("polyline points must be finite")
        if speed <= 0:
            raise ConfigurationError("polyline speed must be positive")
        knots = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]) / speed

        def sample(t):
            return np.array([np.interp(t, knots, pts[:, c]) for c in range(pts.shape[1])])

        return cls(sample, speed if len(pts) > 1 else 0.0, "polyline",
                   {"points": pts.tolist(), "speed": speed, "duration": float(knots[-1])})


# ---------------------------------------------------------------------------
# waypoints


@dataclass(frozen=True)
class Waypoints:
    times: np.ndarray
    points: np.ndarray
    stopped_at: int | None = None  # first index governed by the unit-step rule

    def __len__(self) -> int:
        return len(self.times)


def _check_in_domain(p: np.ndarray, fields_domain, t: float):
    if fields_domain is not None and not fields_domain.contains(p):
        raise DomainError(f"curve leaves the domain at t = {t}: {p}")


def _next_crossing(curve: CurveSpec, t0: float, p0: np.ndarray, radius: float,
                   stay_horizon: float, domain) -> float | None:
    """Smallest ``t > t0`` with ``|gamma(t) - p0| = radius``, or None if none within the horizon."""
    if curve.speed == 0:
        h = stay_horizon / 64
    else:
        h = min(radius / (4 * curve.speed), stay_horizon / 8)
    lo = t0
    while lo - t0 < stay_horizon:
        hi = lo + h
        p = curve(hi)
        _check_in_domain(p, domain, hi)
        if np.linalg.norm(p - p0) >= radius:
            # bracketed root solve; far tighter than the required tolerance, so
            # waypoint times are reproducible independent of the scan grid
            gap = lambda t: float(np.linalg.norm(curve(t) - p0)) - radius
            return float(brentq(gap, lo, hi, xtol=ROOT_XTOL * max(1.0, hi),
                                rtol=4 * np.finfo(float).eps))
        lo = hi
    return None


def discretize_curve(curve: CurveSpec, eps: float, L: float, horizon: int | None = None,
                     t_end: float | None = None, stay_horizon: float = 10.0,
                     domain=None) -> Waypoints:
    """Waypoint times ``t_0 = 0 < t_1 < ...`` with consecutive points ``eps * L`` apart.

    Stops after ``horizon`` steps or at ``t_end`` (which is appended as a
    final waypoint), whichever is first.  If the curve stays within
    ``eps * L`` of the current waypoint for ``stay_horizon`` time units,
    every later step advances ``t`` by one.
    """
    if not (eps > 0 and L > 0):
        raise ConfigurationError("eps and L must be positive")
    if horizon is None and t_end is None:
        raise ConfigurationError("need a waypoint horizon or an end time")
    if horizon is not None and horizon < 0:
        raise ConfigurationError("horizon must be non-negative")
    radius = eps * L
    p = curve(0.0)
    _check_in_domain(p, domain, 0.0)
    times, points = [0.0], [p]
    stopped = None
    while horizon is None or len(times) <= horizon:
        t0 = times[-1]
        t = t0 + 1.0 if stopped is not None else _next_crossing(curve, t0, points[-1], radius,
                                                                stay_horizon, domain)
        if t is None:
            stopped = len(times)
            t = t0 + 1.0
        if t_end is not None and t >= t_end:
            if t_end > t0:
                times.append(float(t_end))
                points.append(curve(t_end))
                _check_in_domain(points[-1], domain, t_end)
            break
        p = curve(t)
        _check_in_domain(p, domain, t)
        times.append(float(t))
        points.append(p)
    return Waypoints(np.array(times), np.array(points), stopped)


# ---------------------------------------------------------------------------
# guiding paths and code updates


@dataclass(frozen=True)
class PathSegment:
    label: int
    time: float
    vector: np.ndarray


@dataclass(frozen=True)
class GuidingPath:
    start: np.ndarray
    segments: tuple[PathSegment, ...]
    end: np.ndarray

    @property
    def is_empty(self) -> bool:
        return not self.segments

    def vertices(self) -> np.ndarray:
        """Start, every segment end, in order."""
        return self.start + np.concatenate([np.zeros((1, self.start.size)),
                                            np.cumsum([s.vector for s in self.segments], axis=0)
                                            if self.segments else np.zeros((0, self.start.size))])

    def point(self, s: float) -> np.ndarray:
        """Position after cumulative guiding time ``s`` (clamped to the path)."""
        z = self.start.copy()
        for seg in self.segments:
            frac = min(max(s, 0.0), seg.time) / seg.time
            z = z + frac * seg.vector
            s -= seg.time
            if s <= 0:
                break
        return z


def guiding_path(z_from, z_to, fields: GuidingFieldSet, eps: float,
                 max_length: float | None = None) -> GuidingPath:
    """Split ``z_to - z_from`` into legs ``eps * a_j * X_j(z_from)``, ``a_j > 0``."""
    z_from = as_slow_point(z_from, fields.dim)
    z_to = as_slow_point(z_to, fields.dim)
    v = z_to - z_from
    if max_length is not None and np.linalg.norm(v) > max_length * (1 + 1e-9):
        raise PreconditionError(f"displacement {np.linalg.norm(v):.3e} exceeds {max_length:.3e}")
    if not np.any(v):
        return GuidingPath(z_from, (), z_from.copy())
    gt = cone_decompose(v / eps, fields, z_from)
    X = fields.guiding_vectors(z_from)
    segs = tuple(PathSegment(j, float(a), eps * a * X[j])
                 for j, a in sorted(zip(gt.selection, gt.times)) if a > 0)
    end = z_from + sum((s.vector for s in segs), np.zeros_like(z_from))
    return GuidingPath(z_from, segs, end)


def segment_counts(path: GuidingPath, fields: GuidingFieldSet) -> list[tuple[int, int]]:
    """``(label, ceil(a_j / T_j))`` per segment, ``T_j`` taken at the segment start."""
    out = []
    for seg, start in zip(path.segments, path.vertices()):
        T = fields.fields[seg.label].period_at(start)
        if not (np.isfinite(T) and T > 0):
            raise ConfigurationError(f"period of {fields.labels[seg.label]} must be positive, got {T}")
        n = math.ceil(seg.time / T - CEIL_TOL)
        if n > 0:
            out.append((seg.label, n))
    return out


def synthesize_segment_code(code_a: Code, path: GuidingPath, fields: GuidingFieldSet,
                            start: int = 0) -> tuple[Code, int]:
    """Keep ``code_a`` up to ``start``, then one symbol run per path segment."""
    runs = segment_counts(path, fields)
    if not runs:
        return code_a, 0
    new = np.concatenate([np.full(n, lab, dtype=np.int64) for lab, n in runs])
    return code_a.replace_after(start, new), int(new.size)


@dataclass(frozen=True)
class Landing:
    code: Code
    steps: int
    path: GuidingPath
    trajectory: Trajectory
    target: np.ndarray
    distance: float
    excursion: float

    @property
    def point(self) -> np.ndarray:
        return self.trajectory.at(self.steps)


def land_near(code_a: Code, z0, target, params: ReducedMapParams, anchor: int = 0) -> Landing:
    """Steer from ``z_0 = z0`` (under ``code_a``) to ``target``.

    The new trajectory is pinned to the old one at index ``anchor <= 0``.
    """
    if anchor > 0:
        raise InputError("anchor index must be <= 0")
    z0 = as_slow_point(z0, params.fields.dim)
    target = as_slow_point(target, params.fields.dim)
    zp = trajectory(code_a, 0, z0, (anchor, 0), params).at(anchor)
    path = guiding_path(z0, target, params.fields, params.eps)
    code_b, n = synthesize_segment_code(code_a, path, params.fields, start=0)
    traj = trajectory(code_b, anchor, zp, (anchor, n), params)
    tail = traj.points[-anchor:]
    return Landing(code_b, n, path, traj, target,
                   float(np.linalg.norm(traj.at(n) - target)),
                   float(np.max(np.linalg.norm(tail - z0, axis=1))))


# ---------------------------------------------------------------------------
# the induction


@dataclass(frozen=True)
class ShadowResult:
    code: Code
    trajectory: Trajectory
    marks: np.ndarray
    waypoint_times: np.ndarray
    waypoint_targets: np.ndarray
    return_times: np.ndarray
    constants: Constants
    eps: float
    L: float
    landing_errors: np.ndarray
    labels: tuple[str, ...]
    history: tuple = ()

    @property
    def waypoint_errors(self) -> np.ndarray:
        """``|z*_{P(k)} - gamma(t_k)|`` on the final trajectory."""
        return np.linalg.norm(self.trajectory.points[self.marks] - self.waypoint_targets, axis=1)

    @property
    def knot_times(self) -> np.ndarray:
        return self.return_times[self.marks]

    def physical_time(self, t):
        return reparameterize(self, t)

    def position_at(self, tau) -> np.ndarray:
        """Slow state at physical time ``tau``, linear between section hits."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        pts = self.trajectory.points
        return np.stack([np.interp(tau, self.return_times, pts[:, c]) for c in range(pts.shape[1])],
                        axis=-1)

    def to_csv(self) -> str:
        d = self.trajectory.points.shape[1] // 2
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "symbol"] + [f"u{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)]
                   + ["tau"])
        syms = self.code.lookup(self.trajectory.indices)
        for i, s, z, tau in zip(self.trajectory.indices, syms, self.trajectory.points, self.return_times):
            w.writerow([int(i), self.labels[s]] + [repr(float(x)) for x in z] + [repr(float(tau))])
        return buf.getvalue()

    def summary(self) -> dict:
        errs = self.waypoint_errors
        return {
            "eps": self.eps,
            "L": self.L,
            "waypoints": int(len(self.marks)),
            "steps": int(self.marks[-1]),
            "code": self.code.format(self.labels),
            "marks": self.marks.tolist(),
            "waypoint_times": self.waypoint_times.tolist(),
            "waypoint_errors": errs.tolist(),
            "landing_errors": self.landing_errors.tolist(),
            "max_waypoint_error": float(errs.max()),
            "constants": self.constants.to_dict(),
        }


def _pre_checks(params: ReducedMapParams, consts: Constants, a3_resolution: int):
    if not params.eps > 0:
        raise PreconditionError("eps must be positive for shadowing")
    if params.eps > consts.eps_usable:
        raise PreconditionError(
            f"eps = {params.eps} exceeds the usable bound {consts.eps_usable:.6g}")
    report = check_A3_region(params.fields, a3_resolution)
    if not report.all_satisfied:
        bad = report.points[~report.satisfied][0]
        raise PreconditionError(f"spanning condition fails on the domain, e.g. at {bad}")


def shadow_curve(curve: CurveSpec, params: ReducedMapParams, L: float = 1.0,
                 horizon: int | None = None, t_end: float | None = None,
                 consts: Constants | None = None, a3_resolution: int = 9,
                 start_symbol: int = 0, record_history: bool = False,
                 stay_horizon: float = 10.0) -> ShadowResult:
    """Build a code whose trajectory follows ``curve`` up to ``O(eps)``.

    Each step plans from ``z*_{P(k)}`` to the next waypoint and rewrites the
    code after ``P(k)``; the trajectory stays anchored at ``z_0 = gamma(0)``.
    """
    fields = params.fields
    eps = params.eps
    consts = constants(params, L) if consts is None else consts
    _pre_checks(params, consts, a3_resolution)
    wp = discretize_curve(curve, eps, L, horizon, t_end, stay_horizon, fields.domain)
    limit = eps * consts.between_waypoints

    code = Code.constant(start_symbol).validate(fields.n)
    pts = np.array([wp.points[0]])
    marks = [0]
    landing = [0.0]
    history = []
    reach = params.fast.M + 1 if params.eta > 0 else 0
    for k in range(1, len(wp)):
        pk = marks[-1]
        target = wp.points[k]
        path = guiding_path(pts[pk], target, fields, eps)
        code, n = synthesize_segment_code(code, path, fields, start=pk)
        j0 = max(0, pk - reach)
        seg = iterate_forward(pts[j0], j0, pk + n, code, params)
        pts = np.concatenate([pts[:j0], seg])
        marks.append(pk + n)
        miss = float(np.linalg.norm(pts[pk + n] - target))
        landing.append(miss)
        if miss > limit:
            raise ShadowingFailure(
                f"waypoint {k} missed by {miss:.3e} > eps (K + C1 + A) = {limit:.3e}",
                {"k": k, "distance": miss, "bound": limit, "constants": consts.to_dict()})
        if record_history:
            history.append((pk + n, code, pts.copy()))

    marks_arr = np.array(marks)
    final = Trajectory(0, iterate_forward(wp.points[0], 0, marks[-1], code, params))
    taus = return_times(code, final, params)
    return ShadowResult(code, final, marks_arr, wp.times, wp.points, taus, consts, eps, L,
                        np.array(landing), fields.labels, tuple(history))


def reparameterize(result: ShadowResult, t):
    """Piecewise-linear map from curve time to physical time through the knots."""
    t_arr = np.asarray(t, dtype=float)
    t_max = result.waypoint_times[-1]
    if np.any(t_arr < 0) or np.any(t_arr > t_max * (1 + 1e-12)):
        raise RangeError(f"t must lie in [0, {t_max}]")
    out = np.interp(t_arr, result.waypoint_times, result.knot_times)
    return float(out) if out.ndim == 0 else out
