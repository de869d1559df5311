import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgsdt.checks import constant_preservation
from hdgsdt.config import build_problem, load_config
from hdgsdt.examples import plume_initial_concentration, plume_permeability, plume_problem
from hdgsdt.mesh import DARCY, STOKES, build_structured_mesh
from hdgsdt.problem import BearDispersion, ConfigurationError, QuarterPowerViscosity
from hdgsdt.timeloop import Simulation, TimeScheme, element_means
from hdgsdt.transport import TransportDiscretization


def test_constant_concentration_preserved():
    assert constant_preservation(n=4).passed


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 1.0))
@settings(max_examples=50, deadline=None)
def test_bear_dispersion_spd(u1, u2, phi):
    d = BearDispersion(1e-6, 1e-5, 2e-5, 1e-5)
    u = np.array([[u1, u2]])
    D = d.tensor(u, None, np.array([DARCY]), porosity=np.array([phi]))[0]
    assert np.allclose(D, D.T)
    speed = np.hypot(u1, u2)
    eig = np.linalg.eigvalsh(D)
    # eigenvalues phi d_m + d_t |u| (across) and phi d_m + d_l |u| (along)
    assert np.allclose(eig, sorted([phi * 1e-5 + 1e-5 * speed, phi * 1e-5 + 2e-5 * speed]), rtol=1e-10)


def test_bear_dispersion_limits():
    d = BearDispersion(1e-6, 1e-5, 1e-5, 1e-5)
    D = d.tensor(np.zeros((2, 2)), None, np.array([DARCY, STOKES]), porosity=np.array([0.4, 1.0]))
    assert np.allclose(D[0], 0.4e-5 * np.eye(2))
    assert np.allclose(D[1], 1e-6 * np.eye(2))
    with pytest.raises(ConfigurationError):
        BearDispersion(1e-6, 1e-5, 1e-6, 1e-5)
    with pytest.raises(ConfigurationError):
        BearDispersion(0.0, 1e-5, 1e-5, 1e-5)


def test_quarter_power_viscosity():
    mu = QuarterPowerViscosity(0.9, 1.3)
    assert mu(0.0) == pytest.approx(0.9)
    assert mu(1.0) == pytest.approx(1.3)
    c = np.linspace(0, 1, 7)
    fd = (mu(c + 1e-7) - mu(c - 1e-7)) / 2e-7
    assert np.allclose(mu.derivative(c), fd, rtol=1e-6)


def test_plume_data_ranges():
    x = np.random.default_rng(0).uniform(0, 1, (1000, 2)) * [1.0, 1.5]
    k = plume_permeability(x)
    assert k.min() >= 100.0 and k.max() <= 1500.0
    c0 = plume_initial_concentration(np.array([[0.2, 0.7], [0.9, 0.1]]))
    assert list(c0) == [0.95, 0.05]


def test_projected_plume_means_within_data_bounds():
    prob = plume_problem(k_f=3)
    tr = TransportDiscretization(build_structured_mesh(8), prob)
    means = element_means(tr.initial_state())
    assert means.min() >= 0.05 - 1e-12 and means.max() <= 0.95 + 1e-12


def test_mass_conserved_without_flow():
    cfg = load_config(None, {"example": "custom", "n": "4", "dt": "0.01", "T": "0.05"})
    prob, _ = build_problem(cfg)
    prob = dataclasses.replace(prob, initial_concentration=lambda x, sub: np.sin(3 * x[..., 0]) + x[..., 1])
    sim = Simulation(build_structured_mesh(4), prob, TimeScheme("BDF3", 0.01, 0.05))
    m0 = sim.transport.total_mass(sim.transport.initial_state())
    res = sim.run()
    assert sim.transport.total_mass(res.conc) == pytest.approx(m0, rel=1e-12)
    # diffusion smooths: the spread shrinks
    assert np.ptp(element_means(res.conc)) < np.ptp(element_means(sim.transport.initial_state()))


def test_transport_form_coercive():
    from hdgsdt.checks import coercivity
    assert all(r.passed for r in coercivity(n=4, k_f=2))
