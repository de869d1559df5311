import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgsdt.flow import FlowState
from hdgsdt.fem import bdm_interpolate
from hdgsdt.mesh import build_structured_mesh
from hdgsdt.problem import QuarterPowerViscosity
from hdgsdt.timeloop import Simulation, TimeScheme
from hdgsdt.verification import (CSV_COLUMNS, ExactSolution, check_derivatives, check_interface_conditions,
                                 compute_errors, convergence_study, example1, rates)


def test_stokes_velocity_point_value():
    u = ExactSolution(1.0).u_stokes(np.array([0.0, 0.5]), 0.0)
    assert u == pytest.approx([0.0, math.exp(0.25) / math.pi], rel=1e-15)


@pytest.mark.parametrize("kappa", [1.0, 1e-2])
def test_mass_source_is_minus_darcy_divergence(kappa):
    ex = ExactSolution(kappa)
    x = np.random.default_rng(3).uniform(0, 1, (30, 2))
    h = 1e-6
    div = sum((ex.u_darcy(x + h * e, 0.04)[:, j] - ex.u_darcy(x - h * e, 0.04)[:, j]) / (2 * h)
              for j, e in enumerate(np.eye(2)))
    assert np.allclose(ex.mass_source(x, 0.04), -div, atol=1e-7)


@pytest.mark.parametrize("ex", [ExactSolution(1.0), ExactSolution(1e-2, QuarterPowerViscosity()),
                                ExactSolution(1e-4)])
def test_derivatives_and_interface_conditions(ex):
    assert check_derivatives(ex) < 1e-4
    # pressures scale like 1/kappa
    assert max(check_interface_conditions(ex).values()) < 1e-12 * max(1.0, 1.0 / ex.kappa)


def test_stokes_velocity_divergence_free():
    ex = ExactSolution(1.0)
    x = np.random.default_rng(1).uniform(0, 1, (20, 2))
    G = ex.grad_u_stokes(x, 0.07)
    assert np.abs(G[:, 0, 0] + G[:, 1, 1]).max() < 1e-13


@given(st.floats(1e-6, 1e3), st.floats(1.1, 64.0))
@settings(max_examples=50, deadline=None)
def test_rates_scale_invariant(scale, ratio):
    errs = [scale, scale / ratio, scale / ratio ** 2]
    r = rates(errs)
    assert r[0] is None
    assert r[1] == pytest.approx(math.log2(ratio)) and r[2] == pytest.approx(math.log2(ratio))
    assert rates([e * 7.0 for e in errs])[1:] == pytest.approx(r[1:], rel=1e-12)


def _interpolated_errors(n, k_f=2, t=0.03):
    ex, prob = example1(1.0, 1.0, k_f)
    mesh = build_structured_mesh(n)
    sim = Simulation(mesh, prob, TimeScheme("BE", t, t))
    x = np.zeros(sim.flow.dofs.ndofs)
    x[sim.flow.dofs.u] = bdm_interpolate(lambda y, sub: ex.velocity(y, t, sub), mesh, k_f).reshape(mesh.num_elements, -1)
    flow = FlowState(x, t, sim.flow.dofs)
    sim.problem.initial_concentration = lambda y, sub: ex.c(y, t)
    conc = sim.transport.initial_state(t)
    return sim, flow, conc, ex


def test_error_norms_recover_interpolation_orders():
    e = [compute_errors(*_interpolated_errors(n), 0.03) for n in (4, 8, 16)]
    u_rates = rates([r.err_u_s for r in e])[1:] + rates([r.err_u_d for r in e])[1:]
    c_rates = rates([r.err_c for r in e])[1:]
    assert min(u_rates[-1], u_rates[1]) > 2.8                      # k_f + 1 = 3
    assert c_rates[-1] > 1.8                                        # k_c + 1 = 2
    assert e[-1].div_s < 1e-11 and e[-1].div_d_proj < 1e-11


def test_error_quadrature_converged():
    sim, flow, conc, ex = _interpolated_errors(8)
    a = compute_errors(sim, flow, conc, ex, 0.03)
    b = compute_errors(sim, flow, conc, ex, 0.03, quad_degree=2 * 2 + 14)
    for name in ("err_u_s", "err_u_d", "err_p_s", "err_p_d", "err_c"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-3)


def test_study_csv_schema():
    study = convergence_study("example1", 2, meshes=(2, 4), T=0.01, dt_rule=lambda n: 0.005)
    text = study.to_csv({"beta_s": 24.0})
    meta = [l for l in text.splitlines() if l.startswith("#")]
    assert any(l.startswith("# k_c: 1") for l in meta) and any("beta_s: 24.0" in l for l in meta)
    rows = list(csv.DictReader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#")))))
    assert list(rows[0]) == CSV_COLUMNS
    assert [r["h"] for r in rows] == ["1/2", "1/4"]
    assert rows[0]["rate_u_s"] == "" and float(rows[1]["rate_u_s"]) > 0
    assert int(rows[1]["dofs"]) == study.rows[1].dofs
    with pytest.raises(ValueError):
        convergence_study("example1", 2, meshes=(4, 12))
