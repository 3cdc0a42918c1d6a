"""Slow phase space, action Hamiltonians and their guiding vector fields.

Slow points are plain float arrays ``z = (u_1..u_d, v_1..v_d)``.  Every
action ``J_c`` generates a guiding field

    X_c(z) = Omega grad J_c(z) / T_c(z),   Omega (g_u, g_v) = (g_v, -g_u),

so that ``du/dt = (1/T) dJ/dv`` and ``dv/dt = -(1/T) dJ/du``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError

FD_REL_STEP = 1e-6


def as_slow_point(z, dim: int | None = None) -> np.ndarray:
    """Validate ``z`` as a slow point and return it as a float array."""
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or arr.size % 2:
        raise DomainError(f"slow point must be a vector of even length 2d, got shape {arr.shape}")
    if dim is not None and arr.size != 2 * dim:
        raise DomainError(f"slow point has length {arr.size}, expected {2 * dim}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"slow point has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lo <= z <= hi`` standing in for the closed region."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).copy()
        hi = np.asarray(self.hi, dtype=float).copy()
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size % 2:
            raise ConfigurationError("box bounds must be vectors of equal even length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi <= lo):
            raise ConfigurationError(f"degenerate box lo={lo} hi={hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, half_width: float, d: int = 1) -> "Box":
        return cls(-half_width * np.ones(2 * d), half_width * np.ones(2 * d))

    @property
    def dim(self) -> int:
        return self.lo.size // 2

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, z, margin: float = 0.0) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.lo - margin) and np.all(z <= self.hi + margin))

    def grid(self, resolution: int) -> np.ndarray:
        """Uniform tensor grid, shape ``(resolution**(2d), 2d)``.

        ``resolution == 1`` yields the single centre point.
        """
        if resolution < 1:
            raise ConfigurationError("grid resolution must be positive")
        if resolution == 1:
            return self.center[None, :]
        axes = [np.linspace(a, b, resolution) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def shrink(self, fraction: float) -> "Box":
        """Concentric box scaled by ``fraction`` (used to draw interior samples)."""
        half = 0.5 * (self.hi - self.lo) * fraction
        return Box(self.center - half, self.center + half)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def hamiltonian_field(grad) -> np.ndarray:
    """Symplectic rotation ``(g_u, g_v) -> (g_v, -g_u)`` over the last axis."""
    g = np.asarray(grad, dtype=float)
    if g.shape[-1] % 2:
        raise NumericalError("gradient must have even length")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    d = g.shape[-1] // 2
    return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)


def _fd_step(z: np.ndarray) -> float:
    return FD_REL_STEP * (1.0 + float(np.linalg.norm(z)))


def central_gradient(func: Callable[[np.ndarray], float], z: np.ndarray) -> np.ndarray:
    """Central finite-difference gradient with step ``1e-6 (1 + |z|)``."""
    h = _fd_step(z)
    out = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        out[k] = (func(z + e) - func(z - e)) / (2 * h)
    return out


@dataclass(frozen=True)
class PolynomialAction:
    """``J(z) = constant + linear . z + z^T quadratic z`` (degree <= 2)."""

    constant: float
    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).copy()
        quad = np.asarray(self.quadratic, dtype=float).copy()
        if lin.ndim != 1 or lin.size % 2:
            raise ConfigurationError("linear coefficients must have even length 2d")
        if quad.shape != (lin.size, lin.size):
            raise ConfigurationError(f"quadratic coefficients must be {lin.size}x{lin.size}")
        lin.flags.writeable = False
        quad.flags.writeable = False
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", quad)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.constant + z @ self.linear + np.einsum("...i,ij,...j->...", z, self.quadratic, z)

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        return self.linear + z @ (self.quadratic + self.quadratic.T).T

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        h = self.quadratic + self.quadratic.T
        return np.broadcast_to(h, z.shape[:-1] + h.shape).copy()


@dataclass(frozen=True)
class GuidingHamiltonian:
    """One action ``J_c`` with its period ``T_c``.

    ``gradient`` and ``hessian`` are optional analytic derivatives; when
    missing they are replaced by central finite differences.  ``period`` is
    either a positive constant or a callable of ``z``.  ``vectorized`` marks
    callables that accept stacked points of shape ``(..., 2d)``.
    """

    label: str
    action: Callable
    gradient: Callable | None = None
    period: float | Callable = 1.0
    hessian: Callable | None = None
    vectorized: bool = False

    def grad(self, z: np.ndarray) -> np.ndarray:
        if self.gradient is not None:
            return np.asarray(self.gradient(z), dtype=float)
        return central_gradient(self.action, z)

    def hess(self, z: np.ndarray) -> np.ndarray:
        if self.hessian is not None:
            return np.asarray(self.hessian(z), dtype=float)
        h = _fd_step(z)
        cols = []
        for k in range(z.size):
            e = np.zeros_like(z)
            e[k] = h
            cols.append((self.grad(z + e) - self.grad(z - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def period_at(self, z: np.ndarray) -> float:
        return float(self.period(z)) if callable(self.period) else float(self.period)

    def grads_on(self, points: np.ndarray) -> np.ndarray:
        """Gradients at a stack of points, shape ``(npts, 2d)``."""
        if self.vectorized and self.gradient is not None:
            return np.asarray(self.gradient(points), dtype=float).reshape(points.shape)
        return np.stack([self.grad(p) for p in points])

    def hessians_on(self, points: np.ndarray) -> np.ndarray:
        if self.vectorized and self.hessian is not None:
            n = points.shape[-1]
            return np.asarray(self.hessian(points), dtype=float).reshape(points.shape[0], n, n)
        return np.stack([self.hess(p) for p in points])

    def periods_on(self, points: np.ndarray) -> np.ndarray:
        if not callable(self.period):
            return np.full(points.shape[0], float(self.period))
        return np.array([self.period_at(p) for p in points])


def polynomial_hamiltonian(label: str, constant=0.0, linear=None, quadratic=None,
                           period: float | Callable = 1.0, d: int | None = None) -> GuidingHamiltonian:
    """Build a :class:`GuidingHamiltonian` from degree-2 polynomial coefficients."""
    if linear is None and quadratic is None and d is None:
        raise ConfigurationError("need linear or quadratic coefficients (or d) to fix the dimension")
    n = 2 * d if d is not None else (len(linear) if linear is not None else len(quadratic))
    lin = np.zeros(n) if linear is None else linear
    quad = np.zeros((n, n)) if quadratic is None else quadratic
    poly = PolynomialAction(constant, lin, quad)
    return GuidingHamiltonian(label=label, action=poly, gradient=poly.gradient, period=period,
                              hessian=poly.hessian, vectorized=True)


def grad_action(h: GuidingHamiltonian, z, domain: Box | None = None) -> np.ndarray:
    """``grad_(u,v) J_c(z)``, analytic when available, else central differences."""
    z = as_slow_point(z)
    if domain is not None and not domain.contains(z):
        raise DomainError(f"point {z} outside domain [{domain.lo}, {domain.hi}]")
    g = h.grad(z)
    if g.shape != z.shape:
        raise NumericalError(f"gradient of {h.label} has shape {g.shape}, expected {z.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient of {h.label} at {z}")
    return g


def guiding_field(h: GuidingHamiltonian, z, domain: Box | None = None) -> np.ndarray:
    """Guiding vector field ``X_c(z) = Omega grad J_c(z) / T_c(z)``."""
    z = as_slow_point(z)
    period = h.period_at(z)
    if not np.isfinite(period) or period <= 0:
        raise ConfigurationError(f"period of {h.label} must be positive, got {period} at {z}")
    return hamiltonian_field(grad_action(h, z, domain)) / period


@dataclass(frozen=True)
class GuidingFieldSet:
    """Ordered family of actions sharing one slow domain.

    The field count ``n >= 2d + 1`` is enforced unless
    ``allow_underdetermined`` is set, which lets the spanning check report
    on families that cannot possibly satisfy it.
    """

    fields: tuple[GuidingHamiltonian, ...]
    domain: Box
    allow_underdetermined: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        fields = tuple(self.fields)
        object.__setattr__(self, "fields", fields)
        labels = [f.label for f in fields]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"labels must be distinct, got {labels}")
        if not fields:
            raise ConfigurationError("field set is empty")
        if not self.allow_underdetermined and len(fields) < 2 * self.dim + 1:
            raise ConfigurationError(
                f"need at least 2d+1 = {2 * self.dim + 1} actions for d = {self.dim}, got {len(fields)}")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n(self) -> int:
        return len(self.fields)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.fields)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"unknown label {label!r}; known: {self.labels}") from None

    def __getitem__(self, key) -> GuidingHamiltonian:
        if isinstance(key, str):
            key = self.index(key)
        return self.fields[key]

    def gradients(self, z, domain_check: bool = True) -> np.ndarray:
        """All action gradients at ``z``, shape ``(n, 2d)``."""
        z = as_slow_point(z)
        if domain_check and not self.domain.contains(z):
            raise DomainError(f"point {z} outside the domain {self.domain.to_dict()}")
        return np.stack([grad_action(h, z) for h in self.fields])

    def guiding_vectors(self, z, domain_check: bool = True) -> np.ndarray:
        """All guiding vectors ``X_c(z)``, shape ``(n, 2d)``."""
        return self.gradients_and_vectors(z, domain_check)[1]

    def gradients_and_vectors(self, z, domain_check: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Gradients and guiding vectors from a single field evaluation."""
        G = self.gradients(z, domain_check)
        T = self.periods(z)
        bad = ~(np.isfinite(T) & (T > 0))
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ConfigurationError(f"period of {self.labels[k]} must be positive, got {T[k]} at {z}")
        return G, hamiltonian_field(G) / T[:, None]

    def periods(self, z) -> np.ndarray:
        return np.array([h.period_at(np.asarray(z, dtype=float)) for h in self.fields])

    def scaled(self, factor: float) -> "GuidingFieldSet":
        """Same family with every action multiplied by ``factor``."""
        scaled = []
        for h in self.fields:
            grad = (lambda z, h=h: factor * h.grad(np.asarray(z, dtype=float)))
            hess = (lambda z, h=h: factor * h.hess(np.asarray(z, dtype=float)))
            scaled.append(GuidingHamiltonian(
                label=h.label, action=(lambda z, h=h: factor * h.action(z)), gradient=grad,
                period=h.period, hessian=hess, vectorized=False))
        return GuidingFieldSet(tuple(scaled), self.domain, self.allow_underdetermined, dict(self.meta))


EXAMPLE_DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])


def example_system(mu: float = 0.1, base_actions: Sequence[float] = (0.0, 0.0, 0.0),
                   periods: Sequence[float | Callable] = (1.0, 1.0, 1.0),
                   domain: Box | None = None) -> GuidingFieldSet:
    """Three-orbit example with gradients ``mu e_u``, ``mu e_v``, ``-mu (e_u + e_v)``.

    Actions are the first-order expansion ``J0_i + mu * g_i . (u, v)``; the
    ``O(mu^2)`` remainder is not modelled.
    """
    if not mu > 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    if len(base_actions) != 3 or len(periods) != 3:
        raise ConfigurationError("example system has exactly three labels")
    domain = domain if domain is not None else Box.symmetric(1.0, d=1)
    if domain.dim != 1:
        raise ConfigurationError("example system lives in d = 1")
    fields = tuple(
        polynomial_hamiltonian(f"c{i + 1}", constant=j0, linear=mu * g, period=t)
        for i, (j0, g, t) in enumerate(zip(base_actions, EXAMPLE_DIRECTIONS, periods))
    )
    return GuidingFieldSet(fields, domain, meta={"preset": "example", "mu": mu})


def quadratic_system(mu: float = 0.1, domain: Box | None = None) -> GuidingFieldSet:
    """Saddle ``mu u v``, ellipse ``mu (u^2 + 2 v^2) / 2`` and circle ``mu (u^2 + v^2) / 2``.

    Position-dependent fields with a non-zero Hessian bound, used to exercise
    same-code drift.  All three vanish at the origin, so the spanning
    condition fails there.
    """
    if not mu > 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    domain = domain if domain is not None else Box.symmetric(1.0, d=1)
    if domain.dim != 1:
        raise ConfigurationError("quadratic system lives in d = 1")
    quads = {
        "saddle": [[0.0, mu / 2], [mu / 2, 0.0]],
        "ellipse": [[mu / 2, 0.0], [0.0, mu]],
        "circle": [[mu / 2, 0.0], [0.0, mu / 2]],
    }
    fields = tuple(polynomial_hamiltonian(k, quadratic=np.array(q)) for k, q in quads.items())
    return GuidingFieldSet(fields, domain, meta={"preset": "quadratic", "mu": mu})
