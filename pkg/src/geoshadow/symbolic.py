"""Reduced slow dynamics driven by symbol codes.

A trajectory lives on the Poincare sections and obeys

    z_{i+1} = z_i + eps * phi(x_i, y_{i+1}, z_i),
    phi = T_c(z) X_c(z) + eta * B(x_i, y_{i+1}) * w,     c = code[i + 1],

where ``B(x, y) = x^T Q y`` reads out synthetic fast states.  The fast states
are exponentially weighted symbol embeddings,

    x_i = sum_{|k| <= M} lam^{|k|} e_x(code[i + k]),

so two codes agreeing on ``|i| <= n`` give fast states ``2 r lam^(n - |i|)``
apart, and ``|x_i| <= r``.  ``T_c X_c`` equals ``Omega grad J_c``; the period
cancels in the slow step and only enters through section return times.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (BackwardStepError, ConfigurationError, EscapeError,
                     InputError, NumericalError)
from .geometry import GuidingFieldSet, as_slow_point, hamiltonian_field

TRUNCATION_FLOOR = 1e-14
NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
MAX_GRID_POINTS = 65536


# ---------------------------------------------------------------------------
# codes


@dataclass(frozen=True)
class Code:
    """Finite window of a bi-infinite code with constant tails.

    Symbols are label indices.  ``symbols[k]`` sits at position ``base + k``;
    positions left of the window read ``left_tail`` and right of it
    ``right_tail``.
    """

    symbols: np.ndarray
    base: int = 0
    left_tail: int | None = None
    right_tail: int | None = None

    def __post_init__(self):
        syms = np.array(self.symbols, dtype=np.int64).ravel()
        if syms.size == 0:
            raise InputError("code window must be non-empty")
        syms.flags.writeable = False
        object.__setattr__(self, "symbols", syms)
        object.__setattr__(self, "base", int(self.base))
        left = int(syms[0]) if self.left_tail is None else int(self.left_tail)
        right = int(syms[-1]) if self.right_tail is None else int(self.right_tail)
        object.__setattr__(self, "left_tail", left)
        object.__setattr__(self, "right_tail", right)
        if min(syms.min(), left, right) < 0:
            raise InputError("symbols must be non-negative label indices")

    @classmethod
    def constant(cls, symbol: int) -> "Code":
        return cls(np.array([symbol]), 0, symbol, symbol)

    @property
    def stop(self) -> int:
        return self.base + self.symbols.size

    def lookup(self, i):
        """Symbol(s) at integer position(s) ``i``; total on all of Z."""
        idx = np.asarray(i, dtype=np.int64)
        off = idx - self.base
        inner = self.symbols[np.clip(off, 0, self.symbols.size - 1)]
        out = np.where(off < 0, self.left_tail, np.where(off >= self.symbols.size, self.right_tail, inner))
        return int(out) if out.ndim == 0 else out

    def __getitem__(self, i: int) -> int:
        return self.lookup(i)

    def segment(self, start: int, stop: int) -> np.ndarray:
        return self.lookup(np.arange(start, stop))

    def replace_after(self, start: int, new_symbols) -> "Code":
        """Keep positions ``<= start``, write ``new_symbols`` from ``start + 1`` on.

        The right tail becomes the last new symbol.  An empty update returns
        the code unchanged.
        """
        new = np.asarray(new_symbols, dtype=np.int64).ravel()
        if new.size == 0:
            return self
        lo = min(self.base, start)
        kept = self.lookup(np.arange(lo, start + 1))
        return Code(np.concatenate([kept, new]), lo, self.left_tail, int(new[-1]))

    def validate(self, n_labels: int) -> "Code":
        if max(self.symbols.max(), self.left_tail, self.right_tail) >= n_labels:
            raise InputError(f"code uses a symbol index >= {n_labels}")
        return self

    def format(self, labels) -> str:
        """E.g. ``"(c1)^inf | c1 c3 c3 c2 | (c2)^inf @ 0"``; ``@`` gives the base index."""
        body = " ".join(labels[s] for s in self.symbols)
        return f"({labels[self.left_tail]})^inf | {body} | ({labels[self.right_tail]})^inf @ {self.base}"

    @classmethod
    def parse(cls, text: str, labels) -> "Code":
        m = re.fullmatch(r"\s*\((\S+)\)\^inf\s*\|(.*)\|\s*\((\S+)\)\^inf\s*(?:@\s*(-?\d+))?\s*", text)
        if m is None:
            raise InputError(f"cannot parse code {text!r}")
        lookup = {lab: k for k, lab in enumerate(labels)}
        try:
            left, right = lookup[m.group(1)], lookup[m.group(3)]
            body = [lookup[s] for s in m.group(2).split()]
        except KeyError as exc:
            raise InputError(f"unknown label {exc.args[0]!r} in code") from None
        if not body:
            raise InputError("code window must be non-empty")
        return cls(np.array(body), int(m.group(4) or 0), left, right)


# ---------------------------------------------------------------------------
# fast states


def truncation_width(lam: float) -> int:
    """Smallest ``M`` with ``lam**M <= 1e-14``."""
    return max(1, math.ceil(math.log(TRUNCATION_FLOOR) / math.log(lam)))


@dataclass(frozen=True)
class FastStateModel:
    """Synthetic fast-state surrogate with code-locality constants ``r``, ``lam``.

    ``eps_bias`` adds ``eps * eps_bias`` to both surrogates, modelling the
    ``O(eps)`` dependence of the fast states; it is off by default.
    """

    embed_x: np.ndarray
    embed_y: np.ndarray
    r: float = 1.0
    lam: float = 0.5
    M: int | None = None
    eps_bias: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ConfigurationError(f"lambda must lie in (0, 1), got {self.lam}")
        if not self.r > 0:
            raise ConfigurationError(f"r must be positive, got {self.r}")
        ex = np.array(self.embed_x, dtype=float)
        ey = np.array(self.embed_y, dtype=float)
        if ex.ndim != 2 or ex.shape != ey.shape:
            raise ConfigurationError("embeddings must be matching (n_labels, m) arrays")
        bound = self.embed_bound * (1 + 1e-12)
        if np.linalg.norm(ex, axis=1).max() > bound or np.linalg.norm(ey, axis=1).max() > bound:
            raise ConfigurationError(f"embedding norm exceeds r (1 - lam)^2 / 2 = {self.embed_bound}")
        M = truncation_width(self.lam) if self.M is None else int(self.M)
        if self.lam ** M > TRUNCATION_FLOOR * (1 + 1e-9):
            raise ConfigurationError(f"truncation M = {M} leaves lam^M = {self.lam ** M:.2e} > 1e-14")
        bias = None if self.eps_bias is None else np.array(self.eps_bias, dtype=float)
        if bias is not None and bias.shape != (ex.shape[1],):
            raise ConfigurationError("eps_bias must be a vector of the fast dimension")
        for a in (ex, ey) + ((bias,) if bias is not None else ()):
            a.flags.writeable = False
        object.__setattr__(self, "embed_x", ex)
        object.__setattr__(self, "embed_y", ey)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "eps_bias", bias)

    @classmethod
    def default(cls, n_labels: int, r: float = 1.0, lam: float = 0.5, dim: int = 2,
                M: int | None = None, eps_bias=None) -> "FastStateModel":
        """Embeddings spread on a circle at the maximal admissible radius."""
        if dim < 2:
            raise ConfigurationError("fast dimension must be at least 2")
        bound = r * (1 - lam) ** 2 / 2
        theta = 2 * np.pi * np.arange(n_labels) / n_labels
        ex = np.zeros((n_labels, dim))
        ey = np.zeros((n_labels, dim))
        ex[:, 0], ex[:, 1] = np.cos(theta), np.sin(theta)
        ey[:, 0], ey[:, 1] = np.sin(theta + np.pi / n_labels), -np.cos(theta + np.pi / n_labels)
        return cls(bound * ex, bound * ey, r, lam, M, eps_bias)

    @property
    def n_labels(self) -> int:
        return self.embed_x.shape[0]

    @property
    def dim(self) -> int:
        return self.embed_x.shape[1]

    @property
    def embed_bound(self) -> float:
        return self.r * (1 - self.lam) ** 2 / 2

    @property
    def kernel(self) -> np.ndarray:
        k = np.arange(-self.M, self.M + 1)
        return self.lam ** np.abs(k)

    def radii(self, eps: float = 0.0) -> tuple[float, float]:
        """Attainable ``sup |x|`` and ``sup |y|`` over all codes."""
        mass = self.kernel.sum()
        bias = 0.0 if self.eps_bias is None else eps * float(np.linalg.norm(self.eps_bias))
        rx = float(np.linalg.norm(self.embed_x, axis=1).max() * mass) + bias
        ry = float(np.linalg.norm(self.embed_y, axis=1).max() * mass) + bias
        return rx, ry


def fast_states(code: Code, i0: int, i1: int, model: FastStateModel, eps: float = 0.0):
    """Surrogates ``x_i`` and ``y_{i+1}`` for ``i0 <= i < i1`` as ``(i1-i0, m)`` arrays."""
    M = model.M
    syms = code.lookup(np.arange(i0 - M, i1 + M + 1))
    w = model.kernel
    X = sliding_window_view(model.embed_x[syms[:-1]], 2 * M + 1, axis=0) @ w
    Y = sliding_window_view(model.embed_y[syms[1:]], 2 * M + 1, axis=0) @ w
    if model.eps_bias is not None and eps:
        X = X + eps * model.eps_bias
        Y = Y + eps * model.eps_bias
    return X, Y


def fast_state(code: Code, i: int, z, model: FastStateModel, eps: float = 0.0):
    """Pair ``(x_i, y_{i+1})``.  The synthetic surrogate does not depend on ``z``."""
    X, Y = fast_states(code, i, i + 1, model, eps)
    return X[0], Y[0]


# ---------------------------------------------------------------------------
# the reduced map


@dataclass(frozen=True)
class ReducedMapParams:
    fields: GuidingFieldSet
    fast: FastStateModel
    eps: float
    eta: float = 0.0
    coupling: np.ndarray | None = None
    direction: np.ndarray | None = None
    escape_fraction: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps >= 0):
            raise ConfigurationError(f"eps must be non-negative, got {self.eps}")
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")
        if self.fast.n_labels != self.fields.n:
            raise ConfigurationError("fast-state model and field set disagree on the label count")
        m, dim = self.fast.dim, 2 * self.fields.dim
        Q = np.eye(m) if self.coupling is None else np.array(self.coupling, dtype=float)
        if Q.shape != (m, m):
            raise ConfigurationError(f"coupling matrix must be {m}x{m}")
        w = np.ones(dim) / math.sqrt(dim) if self.direction is None else np.array(self.direction, dtype=float)
        if w.shape != (dim,) or abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ConfigurationError("coupling direction must be a unit vector in the slow space")
        Q.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "coupling", Q)
        object.__setattr__(self, "direction", w)

    def with_(self, **changes) -> "ReducedMapParams":
        return replace(self, **changes)

    @property
    def escape_margin(self) -> float:
        return self.escape_fraction * self.fields.domain.diameter


def coupling_terms(code: Code, i0: int, i1: int, params: ReducedMapParams) -> np.ndarray:
    """``eta * x_i^T Q y_{i+1}`` for ``i0 <= i < i1``."""
    if params.eta == 0.0 or i1 <= i0:
        return np.zeros(max(i1 - i0, 0))
    X, Y = fast_states(code, i0, i1, params.fast, params.eps)
    return params.eta * np.einsum("ij,jk,ik->i", X, params.coupling, Y)


def slow_velocity(params: ReducedMapParams, symbol: int, z: np.ndarray) -> np.ndarray:
    """``T_c(z) X_c(z)``, i.e. ``Omega grad J_c(z)``."""
    return hamiltonian_field(params.fields.fields[symbol].grad(z))


def _check_escape(z, params: ReducedMapParams, index: int):
    dom = params.fields.domain
    if not np.all(np.isfinite(z)):
        raise NumericalError(f"non-finite slow state at index {index}")
    if not dom.contains(z, params.escape_margin):
        raise EscapeError(f"trajectory left the domain at index {index}: z = {z}")


def step(z, i: int, code: Code, params: ReducedMapParams) -> np.ndarray:
    """One application of the slow section map from index ``i`` to ``i + 1``."""
    z = as_slow_point(z, params.fields.dim)
    b = coupling_terms(code, i, i + 1, params)[0]
    out = z + params.eps * (slow_velocity(params, code.lookup(i + 1), z) + b * params.direction)
    _check_escape(out, params, i + 1)
    return out


def iterate_forward(z0, i0: int, i1: int, code: Code, params: ReducedMapParams) -> np.ndarray:
    """Points ``z_{i0}, ..., z_{i1}`` starting from ``z_{i0} = z0``."""
    z = np.array(z0, dtype=float)
    out = np.empty((i1 - i0 + 1, z.size))
    out[0] = z
    if i1 == i0:
        return out
    syms = code.lookup(np.arange(i0 + 1, i1 + 1))
    push = params.eps * coupling_terms(code, i0, i1, params)[:, None] * params.direction
    fields = params.fields.fields
    eps = params.eps
    d = z.size // 2
    lo = params.fields.domain.lo - params.escape_margin
    hi = params.fields.domain.hi + params.escape_margin
    for k in range(i1 - i0):
        g = fields[syms[k]].grad(z)
        z = z + eps * np.concatenate([g[d:], -g[:d]]) + push[k]
        if not (np.all(z >= lo) and np.all(z <= hi)):
            _check_escape(z, params, i0 + k + 1)
        out[k + 1] = z
    return out


def _velocity_jacobian(params: ReducedMapParams, symbol: int, z: np.ndarray) -> np.ndarray:
    H = params.fields.fields[symbol].hess(z)
    return hamiltonian_field(H.T).T


def backward_step(z_next, i: int, code: Code, params: ReducedMapParams) -> np.ndarray:
    """Solve ``step(z, i) = z_next`` for ``z`` by Newton's method."""
    z_next = np.asarray(z_next, dtype=float)
    symbol = code.lookup(i + 1)
    push = params.eps * coupling_terms(code, i, i + 1, params)[0] * params.direction
    eye = np.eye(z_next.size)
    z = z_next - params.eps * slow_velocity(params, symbol, z_next) - push
    for _ in range(NEWTON_MAXITER):
        resid = z + params.eps * slow_velocity(params, symbol, z) + push - z_next
        jac = eye + params.eps * _velocity_jacobian(params, symbol, z)
        dz = np.linalg.solve(jac, resid)
        z = z - dz
        if np.linalg.norm(dz) <= NEWTON_TOL * (1.0 + np.linalg.norm(z)):
            _check_escape(z, params, i)
            return z
    raise BackwardStepError(f"Newton did not converge for the inverse step at index {i}")


@dataclass(frozen=True)
class Trajectory:
    """Slow iterates ``z_first, ..., z_last`` on consecutive section indices."""

    first: int
    points: np.ndarray

    @property
    def last(self) -> int:
        return self.first + len(self.points) - 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.first, self.last + 1)

    def at(self, i: int) -> np.ndarray:
        if not self.first <= i <= self.last:
            raise IndexError(f"index {i} outside [{self.first}, {self.last}]")
        return self.points[i - self.first]


def trajectory(code: Code, anchor: int, anchor_point, index_range, params: ReducedMapParams) -> Trajectory:
    """Trajectory through ``z_anchor = anchor_point`` over ``[i_lo, i_hi]``."""
    i_lo, i_hi = (int(k) for k in index_range)
    if not i_lo <= anchor <= i_hi:
        raise InputError(f"anchor {anchor} outside [{i_lo}, {i_hi}]")
    z_anchor = as_slow_point(anchor_point, params.fields.dim)
    fwd = iterate_forward(z_anchor, anchor, i_hi, code, params)
    back = [z_anchor]
    for i in range(anchor - 1, i_lo - 1, -1):
        back.append(backward_step(back[-1], i, code, params))
    pts = np.concatenate([np.array(back[:0:-1]).reshape(-1, z_anchor.size), fwd])
    pts[anchor - i_lo] = z_anchor
    pts.flags.writeable = False
    return Trajectory(i_lo, pts)


def return_times(code: Code, traj: Trajectory, params: ReducedMapParams) -> np.ndarray:
    """Cumulative section times ``tau_i``, ``tau_first = 0``, increments ``T_{code[i+1]}(z_i)``."""
    syms = code.lookup(traj.indices[1:])
    fields = params.fields.fields
    inc = np.array([fields[s].period_at(z) for s, z in zip(syms, traj.points[:-1])])
    if np.any(~np.isfinite(inc)) or np.any(inc <= 0):
        raise ConfigurationError("periods must be positive along the trajectory")
    return np.concatenate([[0.0], np.cumsum(inc)])


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class Constants:
    """All bound constants for one parameter set.

    ``A`` is the closed form used by the shadowing estimates;
    ``A_recursive`` is the ``eps``-weighted recursion evaluated at ``2d``
    and is reported for comparison only.
    """

    phi_C1: float
    phi_C1_per_label: tuple[float, ...]
    sup_velocity_per_label: tuple[float, ...]
    dphi_dxy: float
    dphi_dz: float
    C: float
    K: float
    K0: float
    C1: float
    C2: float
    A: float
    A_recursive: float
    L: float
    eps: float
    eps0_uniform: float
    eps0_shadowing: float
    x_radius: float
    y_radius: float
    grid_resolution: int
    extra: dict = field(default_factory=dict)

    @property
    def eps_usable(self) -> float:
        return min(self.eps0_uniform, self.eps0_shadowing)

    @property
    def C_shadow(self) -> float:
        """``C2 + L + K + C1 + A``."""
        return self.C2 + self.L + self.K + self.C1 + self.A

    @property
    def between_waypoints(self) -> float:
        """``K + C1 + A``."""
        return self.K + self.C1 + self.A

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "extra"}
        out["phi_C1_per_label"] = list(self.phi_C1_per_label)
        out["sup_velocity_per_label"] = list(self.sup_velocity_per_label)
        out.update(eps_usable=self.eps_usable, C_shadow=self.C_shadow)
        out.update(self.extra)
        return out


def _grid_for_constants(params: ReducedMapParams, resolution: int) -> tuple[np.ndarray, int]:
    dim = 2 * params.fields.dim
    res = max(2, min(resolution, int(MAX_GRID_POINTS ** (1.0 / dim))))
    return params.fields.domain.grid(res), res


def _coupling_bounds(params: ReducedMapParams) -> tuple[float, float, float, float]:
    rx, ry = params.fast.radii(params.eps)
    qn = float(np.linalg.norm(params.coupling, 2))
    value = params.eta * qn * rx * ry
    lip = params.eta * qn * math.hypot(rx, ry)
    return value, lip, rx, ry


def _field_sups(params: ReducedMapParams, pts: np.ndarray):
    vel, jac, inv_speed = [], [], []
    for h in params.fields.fields:
        g = h.grads_on(pts)
        gn = np.linalg.norm(g, axis=1)
        vel.append(float(gn.max()))
        jac.append(float(np.linalg.norm(h.hessians_on(pts), ord=2, axis=(1, 2)).max()))
        T = h.periods_on(pts)
        if np.any(T <= 0):
            raise ConfigurationError(f"non-positive period for {h.label} on the domain grid")
        with np.errstate(divide="ignore"):
            inv_speed.append(float(np.max(1.0 / (T * gn))))
    return np.array(vel), np.array(jac), np.array(inv_speed)


def constants(params: ReducedMapParams, L: float = 1.0, K0: float = 1.0,
              grid_resolution: int = 64) -> Constants:
    """Evaluate the bound constants on a domain grid plus the analytic coupling bounds.

    ``|phi|_C1`` per label is ``max(sup|phi|, sup|d phi/d(x,y)| + sup|d phi/dz|)``
    with the supremum over grid points and attainable fast states.
    """
    if not L > 0 or not K0 > 0:
        raise ConfigurationError("L and K0 must be positive")
    pts, res = _grid_for_constants(params, grid_resolution)
    vel, jac, inv_speed = _field_sups(params, pts)
    b_val, b_lip, rx, ry = _coupling_bounds(params)
    lam, r = params.fast.lam, params.fast.r
    per_label = np.maximum(vel + b_val, b_lip + jac)
    phi = float(per_label.max())
    C = phi  # fast surrogates do not depend on z
    K = 8 * phi * r * lam / (1 - lam)
    tail = 4 * r / (1 - lam)
    C1 = b_lip * tail + K0
    C2 = float(jac.max())
    A = 4 * float(np.max(6 * per_label * tail + 3 * K + 1 + vel))
    d = params.fields.dim
    Ai = float(np.max(3 * params.eps * (K + per_label * tail + 1 + vel)))
    for _ in range(2 * d - 1):
        Ai = float(np.max(3 * params.eps * (Ai + per_label * tail + 1 + vel)))
    eps0_u = math.inf if C == 0 else (1 - lam) / (2 * C * lam)
    worst = float(inv_speed.max()) * (L + A)
    eps0_s = math.inf if C == 0 else (0.0 if not np.isfinite(worst) else 1.0 / (C * worst))
    return Constants(
        phi_C1=phi, phi_C1_per_label=tuple(float(p) for p in per_label),
        sup_velocity_per_label=tuple(float(v) for v in vel), dphi_dxy=b_lip, dphi_dz=C2,
        C=C, K=K, K0=K0, C1=C1, C2=C2, A=A, A_recursive=Ai, L=L, eps=params.eps,
        eps0_uniform=eps0_u, eps0_shadowing=eps0_s, x_radius=rx, y_radius=ry,
        grid_resolution=res,
    )


def coupling_for_norm(params: ReducedMapParams, target: float = 1.0,
                      grid_resolution: int = 64) -> ReducedMapParams:
    """Return ``params`` with the largest ``eta`` keeping ``|phi|_C1 <= target``."""
    pts, _ = _grid_for_constants(params, grid_resolution)
    vel, jac, _ = _field_sups(params, pts)
    unit = params.with_(eta=1.0)
    b_val, b_lip, _, _ = _coupling_bounds(unit)
    if max(vel.max(), jac.max()) >= target:
        raise ConfigurationError(f"|phi|_C1 already >= {target} without coupling")
    candidates = []
    if b_val > 0:
        candidates.append((target - vel.max()) / b_val)
    if b_lip > 0:
        candidates.append((target - jac.max()) / b_lip)
    if not candidates:
        raise ConfigurationError("coupling has no effect on |phi|_C1 (zero embeddings?)")
    eta = min(candidates) * (1 - 1e-12)
    return params.with_(eta=float(eta))
