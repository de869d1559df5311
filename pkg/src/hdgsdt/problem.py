"""Coefficients, boundary data and discretization parameters of one run.

Pointwise callables take physical points ``x`` of shape ``(..., 2)``. Fields
that differ between the free-flow and porous regions also receive ``sub``,
an integer array with the shape of ``x[..., 0]`` holding ``STOKES``/``DARCY``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hdgsdt.mesh import DARCY, STOKES

Field = Callable[..., np.ndarray]


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# viscosity models


@dataclass(frozen=True)
class ConstantViscosity:
    mu: float

    def __call__(self, c):
        return np.full(np.shape(c), self.mu, dtype=float)

    def derivative(self, c):
        return np.zeros(np.shape(c))

    @property
    def depends_on_concentration(self) -> bool:
        return False


@dataclass(frozen=True)
class QuarterPowerViscosity:
    """mu(c) = mu0 * ((mu0/mu1)^(1/4) c + 1 - c)^(-4)."""

    mu0: float = 0.9
    mu1: float = 1.3

    def _base(self, c):
        r = (self.mu0 / self.mu1) ** 0.25
        return r * np.asarray(c, dtype=float) + 1.0 - np.asarray(c, dtype=float), r

    def __call__(self, c):
        base, _ = self._base(c)
        if np.any(base <= 0.0):
            raise FloatingPointError("quarter-power viscosity undefined: mixing base <= 0")
        return self.mu0 * base ** -4

    def derivative(self, c):
        base, r = self._base(c)
        return -4.0 * self.mu0 * (r - 1.0) * base ** -5

    @property
    def depends_on_concentration(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# dispersion models


@dataclass(frozen=True)
class ConstantDispersion:
    """Fixed tensors per region (``d_s`` in the free flow, ``d_d`` in the porous part)."""

    d_s: tuple
    d_d: tuple

    def __post_init__(self):
        for m in (self.d_s, self.d_d):
            a = np.asarray(m, dtype=float)
            if a.shape != (2, 2) or not np.allclose(a, a.T) or np.linalg.eigvalsh(a).min() <= 0:
                raise ConfigurationError("dispersion tensors must be symmetric positive definite 2x2")

    def tensor(self, u, x, sub, porosity=None):
        out = np.empty(np.shape(sub) + (2, 2))
        out[...] = np.asarray(self.d_d, dtype=float)
        out[sub == STOKES] = np.asarray(self.d_s, dtype=float)
        return out

    @property
    def depends_on_velocity(self) -> bool:
        return False


@dataclass(frozen=True)
class VelocityDiagonalDispersion:
    """D(u) = diag(1 + u1^2, 1 + u2^2) everywhere."""

    def tensor(self, u, x, sub, porosity=None):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + u[..., 0] ** 2
        out[..., 1, 1] = 1.0 + u[..., 1] ** 2
        return out

    @property
    def depends_on_velocity(self) -> bool:
        return True


@dataclass(frozen=True)
class BearDispersion:
    """delta*I in the free flow; phi*d_m*I + d_l|u|T + d_t|u|(I - T) in the porous part,
    with T = u u^T / |u|^2 (the |u|-weighted terms vanish continuously at u = 0)."""

    delta: float = 1e-6
    d_m: float = 1e-5
    d_l: float = 1e-5
    d_t: float = 1e-5

    def __post_init__(self):
        if min(self.delta, self.d_m) <= 0 or min(self.d_l, self.d_t) < 0:
            raise ConfigurationError("Bear dispersion needs delta, d_m > 0 and d_l, d_t >= 0")
        if self.d_l < self.d_t:
            raise ConfigurationError("Bear dispersion needs d_l >= d_t")

    def tensor(self, u, x, sub, porosity=None):
        u = np.asarray(u, dtype=float)
        phi = np.ones(u.shape[:-1]) if porosity is None else np.broadcast_to(porosity, u.shape[:-1])
        speed = np.linalg.norm(u, axis=-1)
        eye = np.eye(2)
        outer = u[..., :, None] * u[..., None, :]
        safe = np.where(speed > 0.0, speed, 1.0)
        # |u| T = u u^T / |u|
        uT = outer / safe[..., None, None]
        darcy = (phi * self.d_m)[..., None, None] * eye + self.d_l * uT + self.d_t * (speed[..., None, None] * eye - uT)
        out = np.where((sub == STOKES)[..., None, None], self.delta * eye, darcy)
        return out

    @property
    def depends_on_velocity(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# boundary data


@dataclass
class FlowBoundary:
    """Flow boundary treatment per facet kind.

    velocity: Dirichlet data ``g(x, t)`` on Stokes kinds (trace fixed; the
        pressure-trace row imposes ``u.n = g.n``).
    slip: Stokes kinds with ``ubar.n = 0`` and free tangential trace.
    traction: Stokes kinds with zero normal stress (trace free).
    normal_flux: Darcy kinds with ``u.n = g.n`` for vector data ``g(x, t)``.
    pressure: Darcy kinds with the pressure trace fixed to ``p(x, t)``.
    """

    velocity: dict = field(default_factory=dict)
    slip: tuple = ()
    traction: tuple = ()
    normal_flux: dict = field(default_factory=dict)
    pressure: dict = field(default_factory=dict)

    def kinds(self):
        return (list(self.velocity) + list(self.slip) + list(self.traction)
                + list(self.normal_flux) + list(self.pressure))


@dataclass
class TransportBoundary:
    """Either Dirichlet data on the listed kinds, or a flux condition.

    With ``dirichlet`` empty, outflow portions (u.n > 0) let the advective
    flux leave freely and inflow portions carry the total flux
    ``inflow_value * u.n``.
    """

    dirichlet: dict = field(default_factory=dict)
    inflow_value: float = 0.0


# ---------------------------------------------------------------------------


@dataclass
class Problem:
    """Everything needed to run the coupled scheme on a given mesh."""

    k_f: int
    k_c: int | None = None
    beta_s: float | None = None
    beta_tr: float | None = None
    viscosity: object = field(default_factory=lambda: ConstantViscosity(1.0))
    permeability: Field = lambda x: np.ones(np.shape(x)[:-1])
    alpha: float = 1.0
    porosity: Field = lambda x, sub: np.ones(np.shape(sub))
    dispersion: object = field(default_factory=lambda: ConstantDispersion(((1.0, 0.0), (0.0, 1.0)),
                                                                          ((1.0, 0.0), (0.0, 1.0))))
    stokes_force: Field | None = None        # f(x, t, c) -> (..., 2)
    darcy_force: Field | None = None         # f(x, t, c) -> (..., 2)
    injection: Field | None = None           # g_i(x, t)
    production: Field | None = None          # g_p(x, t)
    injected_concentration: Field | None = None  # c_I(x, t)
    transport_source: Field | None = None    # s(x, t), manufactured runs only
    flow_boundary: FlowBoundary = field(default_factory=FlowBoundary)
    transport_boundary: TransportBoundary = field(default_factory=TransportBoundary)
    mean_constraint: bool = True
    initial_velocity: Field | None = None    # u0(x, sub)
    initial_concentration: Field | None = None  # c0(x, sub)
    quad_degree_flow: int | None = None
    quad_degree_transport: int | None = None
    penalty_weight: str = "normal"           # "normal": n.Dn, "full": |Dn|

    def __post_init__(self):
        if self.k_f < 1:
            raise ConfigurationError("k_f must be >= 1")
        if self.k_c is None:
            self.k_c = self.k_f - 1
        if self.k_c < 1:
            raise ConfigurationError(
                f"k_c must be >= 1 (k_c = k_f - 1 needs k_f >= 2), got k_c={self.k_c}")
        if self.beta_s is None:
            self.beta_s = 6.0 * self.k_f ** 2
        if self.beta_tr is None:
            self.beta_tr = 6.0 * self.k_c ** 2
        if self.beta_s <= 0 or self.beta_tr <= 0:
            raise ConfigurationError("penalty parameters must be positive")
        if self.quad_degree_flow is None:
            self.quad_degree_flow = 2 * self.k_f + 2
        if self.quad_degree_transport is None:
            self.quad_degree_transport = 2 * self.k_c + 3
        if self.penalty_weight not in ("normal", "full"):
            raise ConfigurationError("penalty_weight must be 'normal' or 'full'")

    def kappa_tensor(self, x) -> np.ndarray:
        """Permeability as ``(..., 2, 2)``; scalar fields are promoted to kappa*I."""
        k = np.asarray(self.permeability(x), dtype=float)
        if k.shape == np.shape(x)[:-1]:
            return k[..., None, None] * np.eye(2)
        return k

    def wells(self, x, t):
        """(g_i, g_p, c_I) at points, zero where not configured."""
        shape = np.shape(x)[:-1]
        gi = np.zeros(shape) if self.injection is None else np.asarray(self.injection(x, t), dtype=float)
        gp = np.zeros(shape) if self.production is None else np.asarray(self.production(x, t), dtype=float)
        ci = np.zeros(shape) if self.injected_concentration is None else np.asarray(
            self.injected_concentration(x, t), dtype=float)
        return gi, gp, ci


__all__ = [
    "ConfigurationError", "ConstantViscosity", "QuarterPowerViscosity", "ConstantDispersion",
    "VelocityDiagonalDispersion", "BearDispersion", "FlowBoundary", "TransportBoundary",
    "Problem", "STOKES", "DARCY",
]
