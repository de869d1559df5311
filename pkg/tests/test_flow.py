import numpy as np
import pytest

from hdgsdt.config import build_problem, load_config
from hdgsdt.examples import plume_problem
from hdgsdt.flow import FlowDiscretization
from hdgsdt.mesh import STOKES, build_structured_mesh
from hdgsdt.timeloop import Simulation, TimeScheme
from hdgsdt.verification import default_time_step, example1


@pytest.fixture(scope="module")
def manufactured():
    _, prob = example1(1.0, 1.0, 2)
    return build_structured_mesh(4), prob


def test_operator_symmetric(manufactured):
    mesh, prob = manufactured
    A = FlowDiscretization(mesh, prob).full_matrix(None, time_coef=3.0).tocsr()
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_time_term_is_free_flow_mass_matrix(manufactured):
    mesh, prob = manufactured
    flow = FlowDiscretization(mesh, prob)
    diff = (flow.full_matrix(None, time_coef=2.5) - flow.full_matrix(None, time_coef=0.0)).tocsr()
    d = flow.dofs
    expected = np.zeros(d.ndofs)
    for e in range(mesh.num_elements):
        if mesh.subdomain[e] == STOKES:
            expected[d.u[e]] = 2.5 * mesh.det[e]
    assert np.allclose(diff.diagonal(), expected, rtol=1e-13, atol=1e-14)
    diff.setdiag(0.0)
    assert abs(diff).max() <= 1e-13


def test_velocity_form_coercive(manufactured):
    mesh, prob = manufactured
    flow = FlowDiscretization(mesh, prob)
    A = flow.full_matrix(None, time_coef=0.0).tocsr()
    d = flow.dofs
    vel = np.zeros(d.ndofs, dtype=bool)
    vel[d.u.ravel()] = vel[d.ubar.ravel()] = True
    keep = np.flatnonzero(vel & ~flow.system.fixed)
    sub = A[keep][:, keep].toarray()
    assert np.linalg.eigvalsh(0.5 * (sub + sub.T)).min() > 0.0


def test_condensed_and_unreduced_steps_agree(manufactured):
    mesh, prob = manufactured
    dt = default_time_step(4, 2)
    runs = [Simulation(mesh, prob, TimeScheme("BDF3", dt, 4 * dt), condense=c).run() for c in (True, False)]
    scale = np.abs(runs[1].flow.x).max()
    assert np.abs(runs[0].flow.x - runs[1].flow.x).max() <= 1e-9 * scale
    assert np.abs(runs[0].conc.x - runs[1].conc.x).max() <= 1e-9


def test_manufactured_run_conserves_mass(manufactured):
    mesh, prob = manufactured
    dt = default_time_step(4, 2)
    sim = Simulation(mesh, prob, TimeScheme("BDF3", dt, 5 * dt), check_conservation=True)
    for _, rep in sim.run().reports:
        assert rep.ok()
        assert rep.max_div_stokes <= 1e-10


def test_condensed_divergence_at_small_viscosity():
    # element blocks of size mu next to O(1) pressure couplings
    _, prob = example1(1.0, 1e-6, 2)
    dt = default_time_step(4, 2)
    sim = Simulation(build_structured_mesh(4), prob, TimeScheme("BDF3", dt, 6 * dt), check_conservation=True)
    reps = [rep for _, rep in sim.run().reports]
    assert max(r.max_div_stokes for r in reps) <= 1e-13
    assert max(max(r.max_jump, r.max_interface_mismatch) / r.scale for r in reps) <= 1e-20
    assert sim.flow.solver.factorizations == 1


def test_zero_data_gives_zero_solution():
    cfg = load_config(None, {"example": "custom", "n": "4", "dt": "0.01", "T": "0.03"})
    prob, exact = build_problem(cfg)
    assert exact is None
    res = Simulation(build_structured_mesh(4), prob, TimeScheme("BDF3", 0.01, 0.03)).run()
    assert np.abs(res.flow.x).max() <= 1e-14
    assert np.abs(res.conc.x).max() <= 1e-14


def test_plume_flow_divergence_free():
    prob = plume_problem(k_f=2)
    sim = Simulation(build_structured_mesh(8), prob, TimeScheme("BDF3", 0.01, 0.03), check_conservation=True)
    res = sim.run()
    for _, rep in res.reports:
        assert rep.max_div_stokes <= 1e-9
        assert rep.max_jump <= 1e-18 * max(rep.scale, 1.0)
    # the inlet drives a nonzero flow
    assert np.abs(res.flow.u).max() > 1e-3
