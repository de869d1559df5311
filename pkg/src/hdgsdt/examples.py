"""The contaminant-plume scenario: free flow over a heterogeneous porous bed."""

from __future__ import annotations

import numpy as np

from hdgsdt.mesh import DARCY, GAMMA_D1, GAMMA_D2, GAMMA_S1, GAMMA_S2, GAMMA_S3
from hdgsdt.problem import (BearDispersion, FlowBoundary, Problem, QuarterPowerViscosity,
                            TransportBoundary)

PLUME_CENTER = (0.2, 0.7)
PLUME_RADIUS = 0.1
PLUME_HIGH = 0.95
PLUME_LOW = 0.05
OUTLET_PRESSURE = -0.05


def plume_permeability(x):
    """Scalar permeability field of the porous bed, within [100, 1500]."""
    x1, x2 = x[..., 0], x[..., 1]
    osc = np.sin(10 * np.pi * x1) * np.cos(20 * np.pi * x2 ** 2) \
        + np.cos(6.4 * np.pi * x1) ** 2 * np.sin(9.2 * np.pi * x2)
    return 700.0 * (1.0 + 0.5 * osc) + 100.0


def plume_initial_concentration(x, sub=None):
    r = np.hypot(x[..., 0] - PLUME_CENTER[0], x[..., 1] - PLUME_CENTER[1])
    return np.where(r < PLUME_RADIUS, PLUME_HIGH, PLUME_LOW)


def inlet_velocity(x, t):
    out = np.zeros(np.shape(x))
    out[..., 0] = x[..., 1] * (1.5 - x[..., 1]) / 5.0
    return out


def plume_problem(k_f: int = 3, k_c: int | None = None, alpha: float = 0.5, porosity: float = 0.4,
                  viscosity=None, dispersion=None, inflow_concentration: float = PLUME_LOW,
                  beta_s: float | None = None, beta_tr: float | None = None) -> Problem:
    """Parabolic inlet on the left of the channel, traction-free outlet on the
    right, slip lid, no-flow porous sides and a fixed pressure at the bottom.

    No wells and no body forces. Fluid entering through the inlet carries
    ``inflow_concentration``.
    """
    flow_bc = FlowBoundary(
        velocity={GAMMA_S1: inlet_velocity},
        traction=(GAMMA_S2,),
        slip=(GAMMA_S3,),
        normal_flux={GAMMA_D1: lambda x, t: np.zeros(np.shape(x))},
        pressure={GAMMA_D2: lambda x, t: np.full(np.shape(x)[:-1], OUTLET_PRESSURE)},
    )
    return Problem(
        k_f=k_f,
        k_c=k_c,
        beta_s=beta_s,
        beta_tr=beta_tr,
        viscosity=viscosity or QuarterPowerViscosity(0.9, 1.3),
        permeability=plume_permeability,
        alpha=alpha,
        porosity=lambda x, sub: np.where(np.asarray(sub) == DARCY, porosity, 1.0),
        dispersion=dispersion or BearDispersion(),
        flow_boundary=flow_bc,
        transport_boundary=TransportBoundary(inflow_value=inflow_concentration),
        mean_constraint=False,
        initial_velocity=None,
        initial_concentration=plume_initial_concentration,
        # non-polynomial permeability, viscosity and dispersion
        quad_degree_flow=2 * k_f + 4,
        quad_degree_transport=2 * k_f + 4,
    )


__all__ = ["plume_problem", "plume_permeability", "plume_initial_concentration", "inlet_velocity",
           "OUTLET_PRESSURE", "PLUME_HIGH", "PLUME_LOW"]
