"""Empirical checks of the closeness, drift, landing and shadowing bounds.

Every experiment draws trial ``t`` from ``numpy.random.default_rng([seed, t])``
so results do not depend on trial order.  A report passes iff every trial's
observed value is within its bound; the worst observed/bound ratio is kept
either way.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeoShadowError, PreconditionError
from .planner import CurveSpec, ShadowResult, land_near, shadow_curve
from .symbolic import Code, Constants, ReducedMapParams, constants, iterate_forward

DEFAULT_TRIALS = 200


@dataclass
class ExperimentReport:
    name: str
    parameters: dict
    constants: dict
    trials: list = field(default_factory=list)
    max_ratio: float = 0.0
    passed: bool = True
    seed: int = 0

    def add(self, observed: float, bound: float, **extra):
        ratio = observed / bound if bound > 0 else (0.0 if observed == 0 else math.inf)
        self.trials.append({"observed": float(observed), "bound": float(bound),
                            "ratio": float(ratio), **extra})
        self.max_ratio = max(self.max_ratio, float(ratio))
        self.passed = self.passed and observed <= bound

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable)

    def to_csv(self) -> str:
        keys = sorted({k for t in self.trials for k in t if not isinstance(t[k], (list, dict))})
        rows = [",".join(["trial"] + keys)]
        for i, t in enumerate(self.trials):
            rows.append(",".join([str(i)] + [repr(t.get(k, "")) for k in keys]))
        return "\n".join(rows) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def _random_point(rng, params: ReducedMapParams, shrink: float) -> np.ndarray:
    box = params.fields.domain.shrink(shrink)
    return rng.uniform(box.lo, box.hi)


def _require_eps(params: ReducedMapParams, bound: float, what: str):
    if not params.eps > 0:
        raise PreconditionError("eps must be positive")
    if params.eps > bound:
        raise PreconditionError(f"eps = {params.eps} exceeds the {what} bound {bound:.6g}")


# ---------------------------------------------------------------------------
# uniform closeness


def closeness_profile(code_a: Code, code_b: Code, z0, N: int, params: ReducedMapParams) -> np.ndarray:
    """``|z^a_i - z^b_i|`` for ``0 <= i <= N``, both started at ``z0``."""
    za = iterate_forward(z0, 0, N, code_a, params)
    zb = iterate_forward(z0, 0, N, code_b, params)
    return np.linalg.norm(za - zb, axis=1)


def agreeing_codes(rng, n_labels: int, N: int, M: int) -> tuple[Code, Code]:
    """Codes equal on ``|i| <= N`` and different at every other stored index."""
    width = N + M + 2
    lo = -width
    a = rng.integers(0, n_labels, 2 * width + 1)
    shift = rng.integers(1, n_labels, 2 * width + 1)
    b = (a + shift) % n_labels
    inner = slice(width - N, width + N + 1)
    b[inner] = a[inner]
    return Code(a, lo), Code(b, lo)


def uniform_closeness_experiment(params: ReducedMapParams, N: int, trials: int = DEFAULT_TRIALS,
                                 seed: int = 0, consts: Constants | None = None,
                                 shrink: float = 0.5) -> ExperimentReport:
    """Codes agreeing on ``|i| <= N`` from a common start stay within ``K eps lam^(N - i)``."""
    if N < 1:
        raise PreconditionError("N must be at least 1")
    consts = constants(params) if consts is None else consts
    _require_eps(params, consts.eps0_uniform, "uniform-closeness")
    lam, eps, K = params.fast.lam, params.eps, consts.K
    profile_bound = K * eps * lam ** (N - np.arange(N + 1))
    rep = ExperimentReport("uniform_closeness", {"N": N, "trials": trials, "eps": eps,
                                                 "eta": params.eta, "lambda": lam, "r": params.fast.r},
                           consts.to_dict(), seed=seed)
    for t in range(trials):
        rng = _trial_rng(seed, t)
        code_a, code_b = agreeing_codes(rng, params.fields.n, N, params.fast.M)
        z0 = _random_point(rng, params, shrink)
        gaps = closeness_profile(code_a, code_b, z0, N, params)
        worst = int(np.argmax(gaps / profile_bound))
        rep.add(float(gaps[worst]), float(profile_bound[worst]), index=worst,
                max_gap=float(gaps.max()), max_gap_bound=K * eps)
    return rep


# ---------------------------------------------------------------------------
# same-code drift


def drift_window(consts: Constants, eps: float) -> int:
    """``floor(1 / (eps C2))``, or ``floor(1 / eps)`` when ``C2 = 0``."""
    return int(math.floor(1.0 / (eps * consts.C2))) if consts.C2 > 0 else int(math.floor(1.0 / eps))


def same_code_drift_experiment(params: ReducedMapParams, K0: float = 1.0,
                               trials: int = DEFAULT_TRIALS, seed: int = 0,
                               consts: Constants | None = None, shrink: float = 0.7,
                               initial_gap: float | None = None) -> ExperimentReport:
    """Two codes sharing a constant run; gap ``eps K0`` at its start stays within ``3 eps C1``."""
    consts = constants(params, K0=K0) if consts is None else consts
    _require_eps(params, consts.eps0_uniform, "uniform-closeness")
    eps, M, n = params.eps, params.fast.M, params.fields.n
    window = drift_window(consts, eps)
    gap0 = eps * K0 if initial_gap is None else float(initial_gap)
    bound = 3 * eps * consts.C1
    rep = ExperimentReport("same_code_drift", {"K0": K0, "trials": trials, "eps": eps,
                                               "eta": params.eta, "window": window,
                                               "initial_gap": gap0},
                           consts.to_dict(), seed=seed)
    for t in range(trials):
        rng = _trial_rng(seed, t)
        c = int(rng.integers(0, n))
        pad = M + 2
        syms = [rng.integers(0, n, window + 1 + 2 * pad) for _ in range(2)]
        for s in syms:
            s[pad:pad + window + 1] = c
        code1, code2 = (Code(s, -pad) for s in syms)
        z1 = _random_point(rng, params, shrink)
        direction = rng.standard_normal(z1.size)
        z2 = z1 + gap0 * direction / np.linalg.norm(direction)
        gaps = np.linalg.norm(iterate_forward(z1, 0, window, code1, params)
                              - iterate_forward(z2, 0, window, code2, params), axis=1)
        rep.add(float(gaps.max()), bound, symbol=c, index=int(np.argmax(gaps)))
    return rep


# ---------------------------------------------------------------------------
# landing accuracy


def endpoint_accuracy_experiment(params: ReducedMapParams, L: float = 1.0, trials: int = 100,
                                 seed: int = 0, consts: Constants | None = None,
                                 shrink: float = 0.7, max_anchor: int = 10) -> ExperimentReport:
    """Synthesized codes land within ``eps A`` of targets up to ``eps (L + A)`` away."""
    consts = constants(params, L) if consts is None else consts
    _require_eps(params, consts.eps_usable, "usable")
    eps, n, M = params.eps, params.fields.n, params.fast.M
    reach = eps * (L + consts.A)
    bound = eps * consts.A
    dom = params.fields.domain
    rep = ExperimentReport("endpoint_accuracy", {"L": L, "trials": trials, "eps": eps,
                                                 "eta": params.eta, "reach": reach},
                           consts.to_dict(), seed=seed)
    for t in range(trials):
        rng = _trial_rng(seed, t)
        z0 = _random_point(rng, params, shrink)
        dim = z0.size
        while True:
            u = rng.standard_normal(dim)
            target = z0 + reach * rng.uniform() ** (1 / dim) * u / np.linalg.norm(u)
            if dom.contains(target):
                break
        pad = max_anchor + M + 2
        code_a = Code(rng.integers(0, n, pad + 1), -pad)
        anchor = -int(rng.integers(0, max_anchor + 1))
        landing = land_near(code_a, z0, target, params, anchor=anchor)
        rep.add(landing.distance, bound, anchor=anchor, steps=landing.steps,
                excursion=landing.excursion, displacement=float(np.linalg.norm(target - z0)))
    return rep


# ---------------------------------------------------------------------------
# shadowing error


def sample_times(result: ShadowResult, samples: int = 10) -> np.ndarray:
    """``samples`` uniform points per waypoint interval, knots included."""
    if samples < 1:
        raise PreconditionError("need at least one sample per interval")
    t = result.waypoint_times
    frac = np.arange(samples) / samples
    inner = (t[:-1, None] + np.diff(t)[:, None] * frac).ravel()
    return np.append(inner, t[-1])


def shadow_error_profile(curve: CurveSpec, result: ShadowResult, samples: int = 10):
    ts = sample_times(result, samples)
    z = result.position_at(result.physical_time(ts))
    g = np.array([curve(t) for t in ts])
    return ts, np.linalg.norm(z - g, axis=1)


def shadow_error(curve: CurveSpec, result: ShadowResult, samples: int = 10) -> float:
    """``max_t |z*(T(t)) - gamma(t)|`` over sampled curve times."""
    return float(shadow_error_profile(curve, result, max(samples, 10))[1].max())


@dataclass
class SweepReport:
    eps: list
    errors: list
    slope: float
    failures: list
    seed: int = 0
    parameters: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures

    def slope_within(self, lo: float = 0.75, hi: float = 1.25) -> bool:
        return self.complete and lo <= self.slope <= hi

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2, default=_jsonable)

    def to_csv(self) -> str:
        rows = ["eps,max_error,C_estimate"]
        rows += [f"{e!r},{err!r},{err / e!r}" for e, err in zip(self.eps, self.errors)]
        return "\n".join(rows) + "\n"


def fit_slope(eps, errors) -> float:
    """Least-squares slope of ``log error`` against ``log eps``."""
    x, y = np.log(np.asarray(eps, dtype=float)), np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def epsilon_sweep(curve: CurveSpec, eps_list, params: ReducedMapParams, L: float = 1.0,
                  horizon: int | None = None, t_end: float | None = None, samples: int = 10,
                  seed: int = 0) -> SweepReport:
    """Run the planner per ``eps`` and fit the log-log error slope.

    Failed runs are listed in ``failures``; the slope uses the rest.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise PreconditionError("an eps sweep needs at least three values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise PreconditionError("eps values must be strictly decreasing")
    done_eps, errors, failures = [], [], []
    for eps in eps_list:
        p = params.with_(eps=eps)
        try:
            res = shadow_curve(curve, p, L, horizon, t_end)
            errors.append(shadow_error(curve, res, samples))
            done_eps.append(eps)
        except GeoShadowError as exc:
            failures.append({"eps": eps, "error": type(exc).__name__, "message": str(exc)})
    slope = fit_slope(done_eps, errors) if len(done_eps) >= 2 and min(errors) > 0 else math.nan
    return SweepReport(done_eps, errors, slope, failures, seed,
                       {"L": L, "horizon": horizon, "t_end": t_end, "eta": params.eta,
                        "curve": curve.kind, "curve_params": curve.params})


def horizon_independence(curve: CurveSpec, params: ReducedMapParams, L: float = 1.0,
                         horizon: int = 100, factor: int = 2, samples: int = 10) -> dict:
    """C-estimates (max error / eps) at ``horizon`` and ``factor * horizon`` waypoints."""
    estimates = []
    for h in (horizon, factor * horizon):
        res = shadow_curve(curve, params, L, horizon=h)
        estimates.append(shadow_error(curve, res, samples) / params.eps)
    change = abs(estimates[1] - estimates[0]) / estimates[0] if estimates[0] > 0 else 0.0
    return {"horizons": [horizon, factor * horizon], "C_estimates": estimates,
            "relative_change": change}
