"""Invariant suite: discretization properties that hold independently of any
reference numbers."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from hdgsdt.fem import TriangleBasis, bdm_interpolate, edge_quadrature, triangle_quadrature
from hdgsdt.mesh import build_structured_mesh


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3e} vs {self.tolerance:.1e}{extra}"


def _below(name, value, tol, detail=""):
    return CheckResult(name, float(value), tol, bool(value <= tol), detail)


def quadrature_exactness(max_degree: int = 30, tol: float = 1e-13) -> CheckResult:
    """Monomials x^a y^b (a + b <= d) on the reference triangle and t^a on [0, 1]."""
    worst = 0.0
    for d in range(max_degree + 1):
        rule = triangle_quadrature(d)
        x, y = rule.points[:, 0], rule.points[:, 1]
        for a in range(d + 1):
            for b in range(d + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                worst = max(worst, abs(rule.weights @ (x ** a * y ** b) - exact) / exact)
        e = edge_quadrature(d)
        for a in range(d + 1):
            worst = max(worst, abs(e.weights @ e.points ** a - 1.0 / (a + 1)) * (a + 1))
    return _below("quadrature exactness", worst, tol, f"degrees 0..{max_degree}, relative")


def bdm_reproduction(n: int = 4, degrees=(1, 2, 3), tol: float = 1e-11, seed: int = 0) -> CheckResult:
    """Interpolating a global polynomial field of degree k returns it unchanged."""
    rng = np.random.default_rng(seed)
    mesh = build_structured_mesh(n)
    worst = 0.0
    for k in degrees:
        powers = [(a, b) for a in range(k + 1) for b in range(k + 1 - a)]
        coef = rng.standard_normal((2, len(powers)))

        def field(x, sub, coef=coef, powers=powers):
            mono = np.stack([x[..., 0] ** a * x[..., 1] ** b for a, b in powers], axis=-1)
            return mono @ coef.T

        u = bdm_interpolate(field, mesh, k)
        rule = triangle_quadrature(2 * k + 2)
        phi = TriangleBasis(k).eval(rule.points)
        uh = np.einsum("qb,ecb->eqc", phi, u)
        elems = np.repeat(np.arange(mesh.num_elements), len(rule.points)).reshape(mesh.num_elements, -1)
        xq = mesh.to_physical(np.broadcast_to(rule.points, elems.shape + (2,)), elems)
        worst = max(worst, np.abs(uh - field(xq, None)).max())
    return _below("BDM polynomial reproduction", worst, tol, f"k in {tuple(degrees)}, max abs")


def _manufactured(n: int, k_f: int):
    from hdgsdt.timeloop import Simulation, TimeScheme
    from hdgsdt.verification import default_time_step, example1
    _, prob = example1(1.0, 1.0, k_f)
    dt = default_time_step(n, k_f)
    return Simulation(build_structured_mesh(n), prob, TimeScheme("BDF3", dt, 3 * dt))


def flow_symmetry(n: int = 4, k_f: int = 2, tol: float = 1e-12) -> CheckResult:
    sim = _manufactured(n, k_f)
    A = sim.flow.full_matrix(None, time_coef=1.0).tocsr()
    asym = abs(A - A.T).max() / abs(A).max()
    return _below("flow operator symmetry", asym, tol, "max |A - A^T| / max |A|")


def _restricted_min_eig(M, keep):
    sub = M[keep][:, keep].toarray()
    return float(np.linalg.eigvalsh(0.5 * (sub + sub.T)).min())


def coercivity(n: int = 4, k_f: int = 2) -> list[CheckResult]:
    """Smallest eigenvalue of the symmetric part of the velocity form and of
    the transport form, with boundary-constrained unknowns removed."""
    sim = _manufactured(n, k_f)
    flow = sim.flow
    d = flow.dofs
    A = flow.full_matrix(None, time_coef=0.0).tocsr()
    vel = np.zeros(d.ndofs, dtype=bool)
    vel[d.u.ravel()] = True
    vel[d.ubar.ravel()] = True
    keep = np.flatnonzero(vel & ~flow.system.fixed)
    lam_a = _restricted_min_eig(A, keep)
    # transport form with the interpolated initial velocity
    u0 = flow.initial_state(0.0).u
    tr = sim.transport
    B = tr.full_matrix(u0, time_coef=0.0).tocsr()
    lam_b = _restricted_min_eig(B, np.flatnonzero(~tr.system.fixed))
    return [CheckResult("velocity form coercivity", lam_a, 0.0, lam_a > 0.0, "smallest eigenvalue > 0"),
            CheckResult("transport form coercivity", lam_b, 0.0, lam_b > 0.0, "smallest eigenvalue > 0")]


def constant_preservation(n: int = 4, value: float = 0.3, steps: int = 3, tol: float = 1e-12,
                          condense: bool = True) -> CheckResult:
    """With a divergence-free velocity, no sources and inflow carrying the same
    constant, a constant concentration stays constant."""
    from hdgsdt.examples import plume_problem
    from hdgsdt.timeloop import Simulation, TimeScheme
    prob = plume_problem(k_f=2, inflow_concentration=value)
    prob = dataclasses.replace(prob, initial_concentration=lambda x, sub: np.full(np.shape(x)[:-1], value))
    sim = Simulation(build_structured_mesh(n), prob, TimeScheme("BDF3", 0.01, 0.01 * steps), condense=condense)
    res = sim.run()
    ref = np.zeros_like(res.conc.c)
    ref[:, 0] = value / math.sqrt(2.0)
    err = max(np.abs(res.conc.c - ref).max(), np.abs(res.conc.cbar[:, 1:]).max(),
              np.abs(res.conc.cbar[:, 0] - value).max())
    return _below("constant preservation", err, tol, f"{steps} steps, max coefficient deviation")


def determinism(n: int = 4, k_f: int = 2) -> CheckResult:
    runs = []
    for _ in range(2):
        res = _manufactured(n, k_f).run()
        runs.append((res.flow.x.tobytes(), res.conc.x.tobytes()))
    same = runs[0] == runs[1]
    return CheckResult("bit-identical reruns", 0.0 if same else 1.0, 0.0, same)


def manufactured_consistency(tol: float = 1e-6) -> list[CheckResult]:
    from hdgsdt.problem import QuarterPowerViscosity
    from hdgsdt.verification import DerivativeMismatch, ExactSolution, check_derivatives, check_interface_conditions
    out = []
    for label, ex in (("constant viscosity", ExactSolution(1.0)),
                      ("quarter-power viscosity", ExactSolution(1.0, QuarterPowerViscosity()))):
        try:
            err = check_derivatives(ex, rtol=tol)
        except DerivativeMismatch as exc:
            err = float("inf")
            label += f"; {exc}"
        out.append(_below(f"manufactured derivatives ({label})", err, max(tol, 1e-4)))
        resid = max(check_interface_conditions(ex).values())
        out.append(_below(f"manufactured interface conditions ({label})", resid, 1e-12))
    return out


def conservation(n: int = 4, k_f: int = 2) -> list[CheckResult]:
    sim = _manufactured(n, k_f)
    sim.check_conservation = True
    res = sim.run()
    reps = [r for _, r in res.reports]
    worst_div = max(r.max_div_stokes for r in reps)
    worst_res = max(r.max_mass_residual / max(r.scale, 1.0) for r in reps)
    worst_jump = max(max(r.max_jump, r.max_interface_mismatch) / max(r.scale, 1.0) for r in reps)
    return [_below("free-flow divergence", worst_div, 1e-10),
            _below("porous mass residual (scaled)", worst_res, 1e-9),
            _below("normal-flux jumps (scaled)", worst_jump, 1e-18)]


def run_all(progress=None) -> list[CheckResult]:
    steps = [quadrature_exactness, bdm_reproduction, flow_symmetry, coercivity, constant_preservation,
             determinism, manufactured_consistency, conservation]
    results = []
    for fn in steps:
        r = fn()
        for item in (r if isinstance(r, list) else [r]):
            results.append(item)
            if progress:
                progress(item.line())
    return results


__all__ = ["CheckResult", "run_all", "quadrature_exactness", "bdm_reproduction", "flow_symmetry", "coercivity",
           "constant_preservation", "determinism", "manufactured_consistency", "conservation"]
