"""Manufactured solutions, source synthesis, error norms and convergence studies.

The exact fields live on the unit square with the free-flow region above
x2 = 1/2. With ``E = exp((x2 + t)/2)``, ``S = sin(pi x1 + t)``,
``C = cos(pi x1 + t)``:

    u_s = (-S E / (2 pi^2), C E / pi)        u_d = (-2 S E, C E / pi)
    p_s = (kappa mu - 2) C E / (kappa pi)    p_d = -2 C E / (kappa pi)
    c   = sin(2 pi (x1 - t)) cos(2 pi (x2 - t))

and the slip coefficient ``alpha = (1 + 4 pi^2) sqrt(kappa) / 2`` makes the
interface conditions hold exactly. Derivatives are coded by hand and checked
against central differences by :func:`check_derivatives`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from hdgsdt.fem import TriangleBasis, triangle_quadrature
from hdgsdt.mesh import (DARCY, DARCY_BOUNDARY, STOKES, STOKES_BOUNDARY, BOUNDARY_KINDS, INTERFACE_HEIGHT,
                         build_structured_mesh)
from hdgsdt.problem import (ConstantDispersion, ConstantViscosity, FlowBoundary, Problem, QuarterPowerViscosity,
                            TransportBoundary, VelocityDiagonalDispersion)
from hdgsdt.timeloop import Simulation, TimeScheme

log = logging.getLogger(__name__)
PI = math.pi


class DerivativeMismatch(AssertionError):
    pass


def _stack(a, b):
    return np.stack([a, b], axis=-1)


@dataclass
class ExactSolution:
    """Manufactured fields with analytic derivatives.

    ``viscosity`` may depend on the concentration; the free-flow pressure then
    uses ``mu(c(x, t))`` so that the normal-stress balance holds pointwise.
    """

    kappa: float = 1.0
    viscosity: object = field(default_factory=lambda: ConstantViscosity(1.0))

    @property
    def alpha(self) -> float:
        return 0.5 * (1.0 + 4.0 * PI ** 2) * math.sqrt(self.kappa)

    # -- building blocks --------------------------------------------------------

    @staticmethod
    def _ecs(x, t):
        E = np.exp((x[..., 1] + t) / 2.0)
        S = np.sin(PI * x[..., 0] + t)
        C = np.cos(PI * x[..., 0] + t)
        return E, C, S

    # -- velocity ----------------------------------------------------------------

    def u_stokes(self, x, t):
        E, C, S = self._ecs(x, t)
        return _stack(-S * E / (2 * PI ** 2), C * E / PI)

    def grad_u_stokes(self, x, t):
        """``G[..., i, j] = d u_i / d x_j``."""
        E, C, S = self._ecs(x, t)
        G = np.empty(x.shape[:-1] + (2, 2))
        G[..., 0, 0] = -C * E / (2 * PI)
        G[..., 0, 1] = -S * E / (4 * PI ** 2)
        G[..., 1, 0] = -S * E
        G[..., 1, 1] = C * E / (2 * PI)
        return G

    def laplace_u_stokes(self, x, t):
        E, C, S = self._ecs(x, t)
        return _stack(S * E * (0.5 - 1.0 / (8 * PI ** 2)), C * E * (-PI + 1.0 / (4 * PI)))

    def dt_u_stokes(self, x, t):
        E, C, S = self._ecs(x, t)
        return _stack(-(C * E + 0.5 * S * E) / (2 * PI ** 2), (-S * E + 0.5 * C * E) / PI)

    def u_darcy(self, x, t):
        E, C, S = self._ecs(x, t)
        return _stack(-2 * S * E, C * E / PI)

    def grad_u_darcy(self, x, t):
        E, C, S = self._ecs(x, t)
        G = np.empty(x.shape[:-1] + (2, 2))
        G[..., 0, 0] = -2 * PI * C * E
        G[..., 0, 1] = -S * E
        G[..., 1, 0] = -S * E
        G[..., 1, 1] = C * E / (2 * PI)
        return G

    def velocity(self, x, t, sub):
        sub = np.asarray(sub)[..., None]
        return np.where(sub == STOKES, self.u_stokes(x, t), self.u_darcy(x, t))

    def grad_velocity(self, x, t, sub):
        sub = np.asarray(sub)[..., None, None]
        return np.where(sub == STOKES, self.grad_u_stokes(x, t), self.grad_u_darcy(x, t))

    # -- pressure -------------------------------------------------------------------

    def p_stokes(self, x, t):
        E, C, S = self._ecs(x, t)
        mu = self.viscosity(self.c(x, t))
        return (self.kappa * mu - 2.0) * C * E / (self.kappa * PI)

    def grad_p_stokes(self, x, t):
        E, C, S = self._ecs(x, t)
        c = self.c(x, t)
        mu = self.viscosity(c)
        dmu = self.viscosity.derivative(c)
        gce = _stack(-PI * S * E, 0.5 * C * E)
        return ((self.kappa * mu - 2.0) / (self.kappa * PI))[..., None] * gce \
            + (dmu * C * E / PI)[..., None] * self.grad_c(x, t)

    def p_darcy(self, x, t):
        E, C, S = self._ecs(x, t)
        return -2.0 * C * E / (self.kappa * PI)

    def grad_p_darcy(self, x, t):
        E, C, S = self._ecs(x, t)
        return (-2.0 / (self.kappa * PI)) * _stack(-PI * S * E, 0.5 * C * E)

    def pressure(self, x, t, sub):
        return np.where(np.asarray(sub) == STOKES, self.p_stokes(x, t), self.p_darcy(x, t))

    # -- concentration ----------------------------------------------------------------

    @staticmethod
    def c(x, t):
        return np.sin(2 * PI * (x[..., 0] - t)) * np.cos(2 * PI * (x[..., 1] - t))

    @staticmethod
    def grad_c(x, t):
        a = 2 * PI * (x[..., 0] - t)
        b = 2 * PI * (x[..., 1] - t)
        return _stack(2 * PI * np.cos(a) * np.cos(b), -2 * PI * np.sin(a) * np.sin(b))

    @staticmethod
    def hess_c(x, t):
        a = 2 * PI * (x[..., 0] - t)
        b = 2 * PI * (x[..., 1] - t)
        H = np.empty(x.shape[:-1] + (2, 2))
        H[..., 0, 0] = -4 * PI ** 2 * np.sin(a) * np.cos(b)
        H[..., 1, 1] = H[..., 0, 0]
        H[..., 0, 1] = -4 * PI ** 2 * np.cos(a) * np.sin(b)
        H[..., 1, 0] = H[..., 0, 1]
        return H

    @staticmethod
    def dt_c(x, t):
        a = 2 * PI * (x[..., 0] - t)
        b = 2 * PI * (x[..., 1] - t)
        return -2 * PI * np.cos(a) * np.cos(b) + 2 * PI * np.sin(a) * np.sin(b)

    # -- derived data -------------------------------------------------------------------

    def mass_source(self, x, t):
        """g_p - g_i = -div u_d."""
        E, C, S = self._ecs(x, t)
        return (2 * PI - 1.0 / (2 * PI)) * C * E


def stokes_force(ex: ExactSolution, x, t, c):
    """du/dt - div(2 mu(c) eps(u)) + grad p with grad mu taken along the exact c."""
    mu = ex.viscosity(c)
    dmu = ex.viscosity.derivative(c)
    G = ex.grad_u_stokes(x, t)
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    # div(2 mu eps) = mu lap u + 2 eps grad mu   (div u = 0)
    div_stress = mu[..., None] * ex.laplace_u_stokes(x, t) \
        + 2.0 * dmu[..., None] * np.einsum("...ij,...j->...i", eps, ex.grad_c(x, t))
    return ex.dt_u_stokes(x, t) - div_stress + ex.grad_p_stokes(x, t)


def darcy_force(ex: ExactSolution, x, t, c):
    """f_d with (mu(c)/kappa) f_d = (mu(c)/kappa) u + grad p."""
    mu = ex.viscosity(c)
    return ex.u_darcy(x, t) + (ex.kappa / mu)[..., None] * ex.grad_p_darcy(x, t)


def _flux_divergence(ex: ExactSolution, dispersion, x, t, sub):
    """div(c u - D(u) grad c) for the exact fields."""
    u = ex.velocity(x, t, sub)
    G = ex.grad_velocity(x, t, sub)
    c = ex.c(x, t)
    gc = ex.grad_c(x, t)
    Hc = ex.hess_c(x, t)
    div_u = G[..., 0, 0] + G[..., 1, 1]
    adv = np.einsum("...i,...i->...", u, gc) + c * div_u
    if isinstance(dispersion, VelocityDiagonalDispersion):
        d1 = 1.0 + u[..., 0] ** 2
        d2 = 1.0 + u[..., 1] ** 2
        diff = (d1 * Hc[..., 0, 0] + 2 * u[..., 0] * G[..., 0, 0] * gc[..., 0]
                + d2 * Hc[..., 1, 1] + 2 * u[..., 1] * G[..., 1, 1] * gc[..., 1])
    elif isinstance(dispersion, ConstantDispersion):
        D = dispersion.tensor(u, x, sub)
        diff = np.einsum("...ij,...ij->...", D, Hc)
    else:
        raise NotImplementedError("manufactured sources need a constant or velocity-diagonal dispersion")
    return adv - diff


# ---------------------------------------------------------------------------
# manufactured problems


WELL_LEVEL = 12.0  # exceeds max |g_p - g_i| for t <= 0.1 so both well rates stay >= 0


def manufactured_problem(ex: ExactSolution, k_f: int, dispersion, porosity: float = 1.0,
                         quad_degree: int | None = None) -> Problem:
    """Problem whose exact solution is ``ex``; Dirichlet data on the whole boundary."""

    def vel_s(x, t):
        return ex.u_stokes(x, t)

    def vel_d(x, t):
        return ex.u_darcy(x, t)

    def transport_source(x, t):
        sub = np.where(x[..., 1] > INTERFACE_HEIGHT, STOKES, DARCY)
        phi = np.where(sub == DARCY, porosity, 1.0)
        s = phi * ex.dt_c(x, t) + _flux_divergence(ex, dispersion, x, t, sub)
        gp = ex.mass_source(x, t) + WELL_LEVEL
        return s + np.where(sub == DARCY, gp * ex.c(x, t), 0.0)

    qf = quad_degree if quad_degree is not None else 2 * k_f + 4
    flow_bc = FlowBoundary(velocity={k: vel_s for k in STOKES_BOUNDARY},
                           normal_flux={k: vel_d for k in DARCY_BOUNDARY})
    transport_bc = TransportBoundary(dirichlet={k: ex.c for k in BOUNDARY_KINDS})
    return Problem(
        k_f=k_f,
        viscosity=ex.viscosity,
        permeability=lambda x: np.full(np.shape(x)[:-1], ex.kappa),
        alpha=ex.alpha,
        porosity=lambda x, sub: np.where(np.asarray(sub) == DARCY, porosity, 1.0),
        dispersion=dispersion,
        stokes_force=lambda x, t, c: stokes_force(ex, x, t, c),
        darcy_force=lambda x, t, c: darcy_force(ex, x, t, c),
        injection=lambda x, t: np.full(np.shape(x)[:-1], WELL_LEVEL),
        production=lambda x, t: ex.mass_source(x, t) + WELL_LEVEL,
        injected_concentration=None,
        transport_source=transport_source,
        flow_boundary=flow_bc,
        transport_boundary=transport_bc,
        mean_constraint=True,
        initial_velocity=lambda x, sub: ex.velocity(x, 0.0, sub),
        initial_concentration=lambda x, sub: ex.c(x, 0.0),
        quad_degree_flow=qf,
        quad_degree_transport=qf,
    )


EXAMPLE1_DISPERSION = ((0.01, 0.005), (0.005, 0.02))


def example1(kappa: float = 1.0, mu: float = 1.0, k_f: int = 2):
    ex = ExactSolution(kappa, ConstantViscosity(mu))
    disp = ConstantDispersion(EXAMPLE1_DISPERSION, EXAMPLE1_DISPERSION)
    return ex, manufactured_problem(ex, k_f, disp)


def example2(kappa: float = 1.0, k_f: int = 3):
    ex = ExactSolution(kappa, QuarterPowerViscosity(0.9, 1.3))
    return ex, manufactured_problem(ex, k_f, VelocityDiagonalDispersion())


def default_time_step(n: int, k_f: int) -> float:
    """dt = 0.1 h^k_f / (k_f + 1) with the nominal h = 1/n."""
    return 0.1 * (1.0 / n) ** k_f / (k_f + 1)


# ---------------------------------------------------------------------------
# finite-difference validation


def check_derivatives(ex: ExactSolution, samples: int = 20, rtol: float = 1e-6, seed: int = 0) -> float:
    """Compare hand-coded derivatives with central differences; returns the worst
    relative mismatch, raising :class:`DerivativeMismatch` above ``rtol``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(samples, 2))
    t = rng.uniform(0.0, 0.1, size=samples)[:, None]
    h = 1e-5
    e = np.eye(2) * h
    worst = 0.0

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))

    def grad_fd(f):
        return np.stack([(f(x + e[j], t[:, 0]) - f(x - e[j], t[:, 0])) / (2 * h) for j in range(2)], axis=-1)

    tt = t[:, 0]
    checks = [
        (grad_fd(ex.u_stokes), ex.grad_u_stokes(x, tt)),
        (grad_fd(ex.u_darcy), ex.grad_u_darcy(x, tt)),
        (grad_fd(ex.c), ex.grad_c(x, tt)),
        (grad_fd(ex.p_darcy), ex.grad_p_darcy(x, tt)),
        (grad_fd(ex.p_stokes), ex.grad_p_stokes(x, tt)),
        (np.stack([grad_fd(lambda y, s: ex.grad_c(y, s)[..., i]) for i in range(2)], axis=-2), ex.hess_c(x, tt)),
        ((ex.u_stokes(x, tt + h) - ex.u_stokes(x, tt - h)) / (2 * h), ex.dt_u_stokes(x, tt)),
        ((ex.c(x, tt + h) - ex.c(x, tt - h)) / (2 * h), ex.dt_c(x, tt)),
    ]
    lap = sum((ex.u_stokes(x + e[j], tt) - 2 * ex.u_stokes(x, tt) + ex.u_stokes(x - e[j], tt)) / h ** 2
              for j in range(2))
    checks.append((lap, ex.laplace_u_stokes(x, tt)))
    for fd, exact in checks:
        worst = max(worst, rel(exact, fd))
    # second differences lose digits; 1e-5 step keeps them near 1e-5 relative
    if worst > max(rtol, 1e-4):
        raise DerivativeMismatch(f"analytic derivative disagrees with finite differences ({worst:.2e})")
    return worst


def check_interface_conditions(ex: ExactSolution, samples: int = 50, t: float = 0.05) -> dict:
    """Residuals of normal-velocity continuity, normal-stress balance and the
    slip law at interface samples."""
    x1 = np.linspace(0.0, 1.0, samples)
    x = np.stack([x1, np.full(samples, INTERFACE_HEIGHT)], axis=-1)
    n = np.array([0.0, -1.0])
    tau = np.array([1.0, 0.0])
    us, ud = ex.u_stokes(x, t), ex.u_darcy(x, t)
    mu = ex.viscosity(ex.c(x, t))
    G = ex.grad_u_stokes(x, t)
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    en = eps @ n
    normal_vel = np.max(np.abs(us @ n - ud @ n))
    normal_stress = np.max(np.abs(ex.p_stokes(x, t) - 2 * mu * (en @ n) - ex.p_darcy(x, t)))
    gamma = ex.alpha / math.sqrt(ex.kappa)
    slip = np.max(np.abs(-2 * mu * (en @ tau) - gamma * mu * (us @ tau)))
    return {"normal_velocity": float(normal_vel), "normal_stress": float(normal_stress), "slip": float(slip)}


# ---------------------------------------------------------------------------
# error norms


@dataclass
class ErrorReport:
    err_u_s: float
    err_p_s: float
    err_u_d: float
    err_p_d: float
    err_c: float
    div_s: float
    div_d_proj: float


def compute_errors(sim: Simulation, flow, conc, ex: ExactSolution, t: float, quad_degree: int | None = None
                   ) -> ErrorReport:
    """L2 errors per region; pressures are compared after removing the exact mean."""
    mesh = sim.mesh
    kf, kc = sim.problem.k_f, sim.problem.k_c
    qd = quad_degree if quad_degree is not None else 2 * kf + 6
    rule = triangle_quadrature(qd)
    ne = mesh.num_elements
    x = mesh.to_physical(rule.points[None], np.arange(ne)[:, None])
    w = rule.weights[None, :] * mesh.det[:, None]
    sub = np.broadcast_to(mesh.subdomain[:, None], w.shape)
    ub = TriangleBasis(kf)
    phi = ub.eval(rule.points)
    uh = np.einsum("qb,ecb->eqc", phi, flow.u)
    ue = ex.velocity(x, t, sub)
    np_ = flow.dofs.np
    ph = flow.p @ phi[:, :np_].T
    pe = ex.pressure(x, t, sub)
    pe = pe - np.sum(w * pe) / np.sum(w)
    cb = TriangleBasis(kc)
    ch = conc.c @ cb.eval(rule.points).T
    ce = ex.c(x, t)
    s = mesh.subdomain == STOKES
    d = ~s

    def norm(vals, mask):
        return float(np.sqrt(np.sum(w[mask] * vals[mask])))

    du = np.sum((uh - ue) ** 2, axis=-1)
    # divergence of u_h from reference gradients
    ginv = np.linalg.inv(mesh.jacobians)
    dphi = np.einsum("qbr,ers->eqbs", ub.grad(rule.points), ginv)
    div_h = np.einsum("eqbc,ecb->eq", dphi, flow.u)
    G = ex.grad_velocity(x, t, sub)
    div_e = G[..., 0, 0] + G[..., 1, 1]
    # Pi_Q of div(u_h - u) on the porous part
    dd = div_h - div_e
    coef = np.einsum("eq,eq,qa->ea", w, dd, phi[:, :np_]) / mesh.det[:, None]
    div_d_proj = float(np.sqrt(np.sum(mesh.det[d] * np.sum(coef[d] ** 2, axis=1))))
    return ErrorReport(
        err_u_s=norm(du, s),
        err_p_s=norm((ph - pe) ** 2, s),
        err_u_d=norm(du, d),
        err_p_d=norm((ph - pe) ** 2, d),
        err_c=norm((ch - ce) ** 2, np.ones(ne, dtype=bool)),
        div_s=norm(div_h ** 2, s),
        div_d_proj=div_d_proj,
    )


def rates(errors) -> list:
    """log2 ratios of consecutive errors (None for the first entry)."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else None)
    return out


# ---------------------------------------------------------------------------
# convergence studies


CSV_COLUMNS = ["h", "dofs", "err_u_s", "rate_u_s", "err_p_s", "rate_p_s", "err_u_d", "rate_u_d",
               "err_p_d", "rate_p_d", "err_c", "rate_c", "div_s", "div_d_proj"]


@dataclass
class StudyRow:
    n: int
    dofs: int
    errors: ErrorReport
    steps: int
    wall_time: float
    max_div_stokes: float
    max_mass_residual: float
    max_jump: float
    max_interface_mismatch: float
    conservation_scale: float


@dataclass
class ConvergenceStudy:
    example: str
    k_f: int
    kappa: float
    mu: float | None
    scheme: str
    T: float = 0.1
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def column(self, name: str) -> list:
        return [getattr(r.errors, name) for r in self.rows]

    def rates(self, name: str) -> list:
        return rates(self.column(name))

    def table_rows(self) -> list[dict]:
        out = []
        rate_cols = {n: self.rates(n) for n in ("err_u_s", "err_p_s", "err_u_d", "err_p_d", "err_c")}
        for i, r in enumerate(self.rows):
            row = {"h": f"1/{r.n}", "dofs": r.dofs}
            for name in ("u_s", "p_s", "u_d", "p_d", "c"):
                row[f"err_{name}"] = getattr(r.errors, f"err_{name}")
                row[f"rate_{name}"] = rate_cols[f"err_{name}"][i]
            row["div_s"] = r.errors.div_s
            row["div_d_proj"] = r.errors.div_d_proj
            out.append(row)
        return out

    def to_csv(self, metadata: dict | None = None) -> str:
        buf = io.StringIO()
        meta = {"example": self.example, "k_f": self.k_f, "k_c": self.k_f - 1, "kappa": self.kappa,
                "mu": self.mu if self.mu is not None else "quarter-power", "scheme": self.scheme,
                "T": self.T, "boundary_data": "velocity Dirichlet on Stokes boundary; u.n on Darcy boundary; "
                                           "c Dirichlet on all boundary facets",
                "dofs": "free unknowns of the coupled flow system"}
        meta.update(metadata or {})
        for key, val in meta.items():
            buf.write(f"# {key}: {val}\n")
        for msg in self.warnings:
            buf.write(f"# warning: {msg}\n")
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.table_rows():
            writer.writerow({k: ("" if v is None else (f"{v:.6e}" if isinstance(v, float) else v))
                             for k, v in row.items()})
        return buf.getvalue()

    def format_table(self) -> str:
        head = f"{'h':>6} {'dofs':>7} {'u_s':>9} {'r':>5} {'p_s':>9} {'r':>5} {'u_d':>9} {'r':>5} " \
               f"{'p_d':>9} {'r':>5} {'c':>9} {'r':>5} {'div_s':>9} {'div_d':>9}"
        lines = [head]

        def rt(v):
            return f"{v:5.2f}" if v is not None else "   --"

        for row in self.table_rows():
            lines.append(
                f"{row['h']:>6} {row['dofs']:>7} {row['err_u_s']:9.2e} {rt(row['rate_u_s'])} "
                f"{row['err_p_s']:9.2e} {rt(row['rate_p_s'])} {row['err_u_d']:9.2e} {rt(row['rate_u_d'])} "
                f"{row['err_p_d']:9.2e} {rt(row['rate_p_d'])} {row['err_c']:9.2e} {rt(row['rate_c'])} "
                f"{row['div_s']:9.2e} {row['div_d_proj']:9.2e}")
        return "\n".join(lines)


def run_manufactured(example: str, n: int, k_f: int, kappa: float = 1.0, mu: float = 1.0, scheme: str = "BDF3",
                     T: float = 0.1, dt: float | None = None, check_conservation: bool = True,
                     condense: bool = True, setup=None):
    """One manufactured run; returns (simulation, result, exact, errors).

    ``setup`` optionally supplies a prebuilt ``(exact, problem)`` pair.
    """
    if setup is not None:
        ex, prob = setup
    elif example == "example1":
        ex, prob = example1(kappa, mu, k_f)
    elif example == "example2":
        ex, prob = example2(kappa, k_f)
    else:
        raise ValueError(f"unknown manufactured example {example!r}")
    mesh = build_structured_mesh(n)
    step = dt if dt is not None else default_time_step(n, k_f)
    sim = Simulation(mesh, prob, TimeScheme(scheme, step, T), check_conservation=check_conservation,
                     condense=condense)
    result = sim.run()
    errs = compute_errors(sim, result.flow, result.conc, ex, result.flow.t)
    return sim, result, ex, errs


def convergence_study(example: str, k_f: int, meshes=(4, 8, 16), kappa: float = 1.0, mu: float = 1.0,
                      scheme: str = "BDF3", T: float = 0.1, progress=None,
                      condense: bool = True, setup=None, dt_rule=None) -> ConvergenceStudy:
    """Run a refinement chain to ``T`` and tabulate errors and observed rates.

    ``dt_rule(n)`` overrides the default step schedule; ``setup`` is passed
    through to :func:`run_manufactured`.
    """
    meshes = list(meshes)
    for a, b in zip(meshes[:-1], meshes[1:]):
        if b != 2 * a:
            raise ValueError("mesh list must be a uniform refinement chain (each n doubles)")
    study = ConvergenceStudy(example, k_f, kappa, mu if example == "example1" else None, scheme, T)
    for n in meshes:
        t0 = time.perf_counter()
        sim, result, ex, errs = run_manufactured(example, n, k_f, kappa, mu, scheme, T,
                                                dt=dt_rule(n) if dt_rule else None,
                                                condense=condense, setup=setup)
        reps = [r for _, r in result.reports]
        row = StudyRow(
            n=n, dofs=len(sim.flow.system.free_index), errors=errs, steps=result.steps,
            wall_time=time.perf_counter() - t0,
            max_div_stokes=max((r.max_div_stokes for r in reps), default=0.0),
            max_mass_residual=max((r.max_mass_residual for r in reps), default=0.0),
            max_jump=max((r.max_jump for r in reps), default=0.0),
            max_interface_mismatch=max((r.max_interface_mismatch for r in reps), default=0.0),
            conservation_scale=max((r.scale for r in reps), default=0.0),
        )
        study.rows.append(row)
        if progress:
            progress(f"n={n}: {result.steps} steps in {row.wall_time:.1f}s, err_u_s={errs.err_u_s:.2e}, "
                     f"err_c={errs.err_c:.2e}")
    for name in ("err_u_s", "err_p_s", "err_u_d", "err_p_d", "err_c"):
        col = study.column(name)
        if any(b >= a for a, b in zip(col[:-1], col[1:])):
            study.warnings.append(f"{name} does not decrease monotonically")
    return study


__all__ = [
    "ExactSolution", "ErrorReport", "ConvergenceStudy", "StudyRow", "compute_errors", "convergence_study",
    "run_manufactured", "manufactured_problem", "example1", "example2", "default_time_step",
    "check_derivatives", "check_interface_conditions", "rates", "stokes_force", "darcy_force",
    "CSV_COLUMNS", "DerivativeMismatch",
]
