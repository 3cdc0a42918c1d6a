"""Positive spanning checks and conic decomposition of displacements.

The spanning condition asks that zero lie strictly inside the convex hull of
the action gradients.  It is certified with the linear program

    max delta  s.t.  sum_i w_i g_i = 0,  sum_i w_i = 1,  w_i >= delta,

together with a rank check (the gradients must span R^{2d}).  Under the
condition every displacement is a nonnegative combination of guiding
vectors; :func:`select_cone_basis` picks ``2d`` of them and
:func:`decompose` recovers the guiding times.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.optimize import linprog

from .errors import (ConditioningError, NumericalError, PreconditionError,
                     SelectionError)
from .geometry import GuidingFieldSet, as_slow_point

MARGIN_TOL = 1e-9
NEG_TOL = 1e-12
MAX_COND = 1e8
# Above this many candidate bases the conic LP goes to HiGHS instead of
# enumerating vertices.
ENUMERATION_LIMIT = 512


@dataclass(frozen=True)
class SpanCertificate:
    satisfied: bool
    weights: np.ndarray | None
    margin: float
    gradients: np.ndarray | None = None

    @property
    def residual(self) -> float:
        """``|sum w_i g_i|``; zero for a valid certificate."""
        if self.weights is None or self.gradients is None:
            return float("nan")
        return float(np.linalg.norm(self.weights @ self.gradients))

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "weights": None if self.weights is None else self.weights.tolist(),
            "margin": self.margin,
            "residual": None if self.weights is None else self.residual,
        }


@lru_cache(maxsize=4096)
def _certify_cached(raw: bytes, shape: tuple[int, int]) -> tuple[bool, tuple | None, float]:
    G = np.frombuffer(raw, dtype=float).reshape(shape)
    n, dim = shape
    if not np.any(G):
        return False, None, 0.0
    if np.linalg.matrix_rank(G) < dim:
        return False, None, 0.0
    # variables (w_1..w_n, delta); maximise delta
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.zeros((dim + 1, n + 1))
    A_eq[:dim, :n] = G.T
    A_eq[dim, :n] = 1.0
    b_eq = np.zeros(dim + 1)
    b_eq[dim] = 1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    b_ub = np.zeros(n)
    bounds = [(0, None)] * n + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return False, None, 0.0
    w = np.clip(res.x[:n], 0.0, None)
    w /= w.sum()
    margin = float(w.min())
    if margin <= MARGIN_TOL:
        return False, None, margin
    return True, tuple(w), margin


def certify_gradients(G) -> SpanCertificate:
    """Spanning certificate for an explicit gradient matrix ``G`` of shape ``(n, 2d)``."""
    G = np.ascontiguousarray(G, dtype=float)
    if G.ndim != 2:
        raise PreconditionError("gradient matrix must be 2-D")
    if not np.all(np.isfinite(G)):
        raise NumericalError("non-finite gradients")
    ok, w, margin = _certify_cached(G.tobytes(), G.shape)
    weights = None if w is None else np.array(w)
    return SpanCertificate(ok, weights, margin, G.copy())


def angular_coverage(G) -> bool:
    """Planar cross-check: nonzero gradient directions leave no gap of angle >= pi."""
    G = np.asarray(G, dtype=float)
    if G.shape[1] != 2:
        raise PreconditionError("angular coverage is only defined for d = 1")
    norms = np.linalg.norm(G, axis=1)
    G = G[norms > 1e-14 * max(norms.max(initial=0.0), 1.0)]
    if len(G) < 3:
        return False
    angles = np.sort(np.arctan2(G[:, 1], G[:, 0]))
    gaps = np.diff(np.r_[angles, angles[0] + 2 * np.pi])
    return bool(gaps.max() < np.pi - 1e-12)


def check_A3(fields: GuidingFieldSet, z) -> SpanCertificate:
    """Certify that zero is interior to the hull of the action gradients at ``z``."""
    z = as_slow_point(z, fields.dim)
    return certify_gradients(fields.gradients(z))


@dataclass(frozen=True)
class RegionReport:
    points: np.ndarray
    certificates: tuple[SpanCertificate, ...]

    @property
    def satisfied(self) -> np.ndarray:
        return np.array([c.satisfied for c in self.certificates])

    @property
    def all_satisfied(self) -> bool:
        return bool(self.satisfied.all())

    @property
    def satisfied_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Bounding box of the grid points where the condition holds."""
        mask = self.satisfied
        if not mask.any():
            return None
        pts = self.points[mask]
        return pts.min(axis=0), pts.max(axis=0)

    def to_dict(self) -> dict:
        box = self.satisfied_box
        return {
            "all_satisfied": self.all_satisfied,
            "satisfied_box": None if box is None else {"lo": box[0].tolist(), "hi": box[1].tolist()},
            "points": [
                {"z": p.tolist(), **c.to_dict()} for p, c in zip(self.points, self.certificates)
            ],
        }


def check_A3_region(fields: GuidingFieldSet, grid_resolution: int) -> RegionReport:
    """Evaluate :func:`check_A3` on a uniform grid over the domain box."""
    pts = fields.domain.grid(grid_resolution)
    return RegionReport(pts, tuple(check_A3(fields, p) for p in pts))


# ---------------------------------------------------------------------------
# conic decomposition


def _vertex_enumeration_batch(V: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Exact solutions of ``min sum a  s.t.  V^T a = v, a >= 0`` for each row ``v`` of ``vs``.

    The feasible set is pointed and the objective is bounded below, so the
    optimum sits at a vertex; vertices are the nonnegative solutions of the
    square subsystems.  Ties go to the lexicographically first basis.  Rows
    with no feasible vertex come back as NaN.
    """
    n, dim = V.shape
    m = vs.shape[0]
    combos = np.array(list(itertools.combinations(range(n), dim)))
    Ws = np.transpose(V[combos], (0, 2, 1))
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(Ws)
    good = np.isfinite(cond) & (cond <= MAX_COND)
    out = np.full((m, n), np.nan)
    if not good.any():
        return out
    combos, Ws = combos[good], Ws[good]
    # sols[b, j] solves basis b for target j
    sols = np.linalg.solve(Ws[:, None], np.broadcast_to(vs, (len(Ws), m, dim))[..., None])[..., 0]
    scale = 1.0 + np.abs(sols).max(axis=2)
    feasible = np.all(sols >= -NEG_TOL * scale[..., None], axis=2)
    totals = np.where(feasible, np.clip(sols, 0, None).sum(axis=2), np.inf)
    best = totals.min(axis=0)
    ok = np.isfinite(best)
    pick = np.argmax(totals <= (best + 1e-12 * (1.0 + best))[None, :], axis=0)
    rows = np.flatnonzero(ok)
    out[rows] = 0.0
    out[rows[:, None], combos[pick[rows]]] = np.clip(sols[pick[rows], rows], 0.0, None)
    return out


def _vertex_enumeration(V: np.ndarray, v: np.ndarray) -> np.ndarray | None:
    a = _vertex_enumeration_batch(V, v[None, :])[0]
    return None if np.isnan(a).any() else a


def _highs_conic(V: np.ndarray, v: np.ndarray) -> np.ndarray | None:
    n = V.shape[0]
    res = linprog(np.ones(n), A_eq=V.T, b_eq=v, bounds=[(0, None)] * n, method="highs")
    if res.status != 0:
        return None
    return np.clip(res.x, 0.0, None)


def conic_combination(V, v, method: str = "auto") -> np.ndarray:
    """Nonnegative coefficients ``a`` with ``V^T a = v`` minimising ``sum a``.

    ``method`` is ``"enumerate"``, ``"highs"`` or ``"auto"`` (enumerate when
    the number of candidate bases is small).
    """
    V = np.asarray(V, dtype=float)
    v = np.asarray(v, dtype=float)
    n, dim = V.shape
    if method == "auto":
        method = "enumerate" if comb(n, dim) <= ENUMERATION_LIMIT else "highs"
    a = _vertex_enumeration(V, v) if method == "enumerate" else _highs_conic(V, v)
    if a is None:
        raise NumericalError("conic combination infeasible; spanning condition violated?")
    return a


def caratheodory_reduce(V, a, tol: float = 1e-12) -> np.ndarray:
    """Shrink the support of a conic combination to linearly independent vectors.

    Keeps ``V^T a`` fixed and ``a >= 0`` while moving along null directions
    of the supporting columns until each step zeroes one coefficient.
    """
    V = np.asarray(V, dtype=float)
    a = np.array(a, dtype=float)
    scale = tol * (1.0 + np.abs(a).max(initial=0.0))
    a[a <= scale] = 0.0
    while True:
        support = np.flatnonzero(a > 0)
        if support.size == 0:
            return a
        S = V[support].T
        if np.linalg.matrix_rank(S) == support.size:
            return a
        null = np.linalg.svd(S)[2][-1]
        if not np.any(null > 0):
            null = -null
        pos = null > 0
        ratios = np.where(pos, a[support] / np.where(pos, null, 1.0), np.inf)
        j = int(np.argmin(ratios))
        a[support] = a[support] - ratios[j] * null
        a[support[j]] = 0.0
        a[a <= scale] = 0.0


def _pad_selection(V: np.ndarray, support: list[int]) -> list[int]:
    dim = V.shape[1]
    chosen = list(support)
    for i in range(V.shape[0]):
        if len(chosen) == dim:
            break
        if i in chosen:
            continue
        if np.linalg.matrix_rank(V[chosen + [i]]) == len(chosen) + 1:
            chosen.append(i)
    if len(chosen) < dim:
        raise NumericalError("guiding vectors do not span the slow space")
    return chosen


def select_from_vectors(V, v, method: str = "auto") -> tuple[int, ...]:
    """Cone basis selection on explicit guiding vectors ``V`` (rows)."""
    V = np.asarray(V, dtype=float)
    v = np.asarray(v, dtype=float)
    dim = V.shape[1]
    if not np.any(v):
        return tuple(_pad_selection(V, []))
    if method == "auto":
        method = "enumerate" if comb(V.shape[0], dim) <= ENUMERATION_LIMIT else "highs"
    a = conic_combination(V, v, method)
    if method != "enumerate":  # vertex supports are already independent
        a = caratheodory_reduce(V, a)
    support = [int(i) for i in np.flatnonzero(a > 0)]
    if len(support) > dim:
        raise NumericalError("Caratheodory reduction left a dependent support")
    return tuple(_pad_selection(V, support))


def select_cone_basis(v, fields: GuidingFieldSet, z, method: str = "auto") -> tuple[int, ...]:
    """Indices of ``2d`` guiding fields whose cone contains ``v`` at ``z``.

    Support of the minimum-total-time conic combination first (ordered by
    label), padded with the lowest-index independent fields.
    """
    z = as_slow_point(z, fields.dim)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite target vector")
    if not check_A3(fields, z).satisfied:
        raise PreconditionError(f"spanning condition fails at {z}")
    return select_from_vectors(fields.guiding_vectors(z), v, method)


@dataclass(frozen=True)
class GuidingTimes:
    selection: tuple[int, ...]
    times: np.ndarray
    residual: float = 0.0

    def labels(self, fields: GuidingFieldSet) -> tuple[str, ...]:
        return tuple(fields.labels[i] for i in self.selection)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.times))


def decompose_with_vectors(V, v, selection) -> GuidingTimes:
    V = np.asarray(V, dtype=float)
    v = np.asarray(v, dtype=float)
    W = V[list(selection)].T
    if np.linalg.cond(W) > MAX_COND:
        raise ConditioningError(f"cone basis {selection} is ill-conditioned")
    a = np.linalg.solve(W, v)
    if np.any(a < -NEG_TOL * (1.0 + np.abs(a).max())):
        raise SelectionError(f"negative guiding time {a.min():.3e} for basis {selection}")
    a = np.clip(a, 0.0, None)
    residual = float(np.linalg.norm(W @ a - v))
    if residual > 1e-10 * (1.0 + np.linalg.norm(v)):
        raise NumericalError(f"decomposition residual {residual:.3e} too large")
    return GuidingTimes(tuple(int(i) for i in selection), a, residual)


def decompose(v, fields: GuidingFieldSet, z, selection) -> GuidingTimes:
    """Guiding times ``a = W^{-1} v`` for the basis ``selection`` at ``z``."""
    z = as_slow_point(z, fields.dim)
    return decompose_with_vectors(fields.guiding_vectors(z), v, selection)


def cone_decompose(v, fields: GuidingFieldSet, z) -> GuidingTimes:
    """:func:`select_cone_basis` followed by :func:`decompose`, sharing one field evaluation."""
    z = as_slow_point(z, fields.dim)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite target vector")
    G, V = fields.gradients_and_vectors(z)
    if not certify_gradients(G).satisfied:
        raise PreconditionError(f"spanning condition fails at {z}")
    return decompose_with_vectors(V, v, select_from_vectors(V, v))


def sample_directions(dim: int, count: int | None = None) -> np.ndarray:
    """Unit directions used by :func:`bound_D`: ``360 d`` of them."""
    d = dim // 2
    count = 360 * d if count is None else count
    if dim == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((count, dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def bound_D(fields: GuidingFieldSet, z, L_plus_A: float, directions=None) -> float:
    """Sampled ``sup_zeta |W_zeta^{-1}| (L + A)`` at ``z``."""
    if not L_plus_A > 0:
        raise PreconditionError("L + A must be positive")
    z = as_slow_point(z, fields.dim)
    if not check_A3(fields, z).satisfied:
        raise PreconditionError(f"spanning condition fails at {z}")
    V = fields.guiding_vectors(z)
    dirs = sample_directions(V.shape[1]) if directions is None else np.asarray(directions, dtype=float)
    if comb(V.shape[0], V.shape[1]) <= ENUMERATION_LIMIT:
        # vertex supports are already independent; pad each distinct one once
        A = _vertex_enumeration_batch(V, dirs)
        if np.isnan(A).any():
            raise NumericalError("conic combination infeasible; spanning condition violated?")
        supports = {tuple(int(i) for i in np.flatnonzero(a > 0)) for a in A}
        bases = {tuple(_pad_selection(V, list(s))) for s in supports}
    else:
        bases = {select_from_vectors(V, zeta) for zeta in dirs}
    worst = max(1.0 / np.linalg.svd(V[list(s)].T, compute_uv=False)[-1] for s in bases)
    return float(worst * L_plus_A)


def bound_D_region(fields: GuidingFieldSet, L_plus_A: float, grid_resolution: int = 5) -> float:
    """:func:`bound_D` maximised over a coarse domain grid."""
    return max(bound_D(fields, p, L_plus_A) for p in fields.domain.grid(grid_resolution))


__all__ = [
    "SpanCertificate", "RegionReport", "GuidingTimes", "certify_gradients", "angular_coverage",
    "check_A3", "check_A3_region", "conic_combination", "caratheodory_reduce", "select_cone_basis",
    "select_from_vectors", "decompose", "decompose_with_vectors", "cone_decompose", "bound_D",
    "bound_D_region", "sample_directions",
]
