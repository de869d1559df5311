"""Sequential time stepping: one flow solve with the concentration lagged by a
step, then one transport solve with the new velocity."""

from __future__ import annotations

import logging
import math
import time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from hdgsdt.flow import FlowDiscretization, FlowState
from hdgsdt.linalg import SolverError
from hdgsdt.mesh import DARCY, Mesh
from hdgsdt.problem import ConfigurationError, Problem
from hdgsdt.transport import ConcentrationState, TransportDiscretization

log = logging.getLogger(__name__)

BDF_COEFFICIENTS = {
    1: (1.0, -1.0),
    2: (1.5, -2.0, 0.5),
    3: (11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0),
}


@dataclass(frozen=True)
class TimeScheme:
    """Uniform steps of size ``dt`` up to ``T``; ``kind`` is ``"BE"`` or ``"BDF3"``.

    If ``T/dt`` is not an integer the step count is rounded up and ``dt``
    shrunk to ``T/N`` (with a warning).
    """

    kind: str
    dt: float
    T: float

    def __post_init__(self):
        if self.kind not in ("BE", "BDF3"):
            raise ConfigurationError(f"unknown time scheme {self.kind!r} (expected BE or BDF3)")
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if self.T < 0:
            raise ConfigurationError("final time must be non-negative")
        ratio = self.T / self.dt
        n = round(ratio)
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            n = math.ceil(ratio)
            warnings.warn(f"T/dt = {ratio:.6g} is not an integer; using {n} steps of dt = {self.T / n:.6g}",
                          stacklevel=2)
            object.__setattr__(self, "dt", self.T / n)
        object.__setattr__(self, "_steps", int(n))

    @property
    def steps(self) -> int:
        return self._steps

    def order(self, step: int) -> int:
        """BDF order used at ``step`` (1-based); BDF3 starts with BDF1, BDF2."""
        return 1 if self.kind == "BE" else min(step, 3)

    def coefficients(self, step: int) -> tuple[float, ...]:
        return BDF_COEFFICIENTS[self.order(step)]


@dataclass
class SimulationHistory:
    """Most recent states, newest first, with buffer depth set by the scheme."""

    depth: int
    step: int = 0
    flow: deque = field(default_factory=deque)
    conc: deque = field(default_factory=deque)

    def push(self, flow: FlowState, conc: ConcentrationState):
        self.flow.appendleft(flow)
        self.conc.appendleft(conc)
        while len(self.flow) > self.depth:
            self.flow.pop()
            self.conc.pop()

    @property
    def current_flow(self) -> FlowState:
        return self.flow[0]

    @property
    def current_conc(self) -> ConcentrationState:
        return self.conc[0]


@dataclass
class RunResult:
    flow: FlowState
    conc: ConcentrationState
    steps: int
    snapshots: list = field(default_factory=list)        # (step, t, FlowState, ConcentrationState)
    reports: list = field(default_factory=list)          # (step, ConservationReport)
    wall_time: float = 0.0


class Simulation:
    """Drives the coupled scheme on one mesh."""

    def __init__(self, mesh: Mesh, problem: Problem, scheme: TimeScheme,
                 check_conservation: bool = False, reuse_factorization: bool = True,
                 condense: bool = True):
        self.mesh = mesh
        self.problem = problem
        self.scheme = scheme
        self.check_conservation = check_conservation
        self.flow = FlowDiscretization(mesh, problem, condense=condense)
        self.transport = TransportDiscretization(mesh, problem, condense=condense)
        self.flow.solver.reuse = reuse_factorization
        self.transport.solver.reuse = reuse_factorization

    def solvability_product(self, t: float) -> float:
        """dt * (1 + max|g_i - g_p|) / min(porosity) at time ``t``; the transport
        step is guaranteed uniquely solvable when this is below one (unit constant)."""
        tr = self.transport
        phi_min = float(tr.porosity_v.min())
        gi, gp, _ = self.problem.wells(tr.tab.x, t)
        g = np.where(tr.sub_v == DARCY, np.abs(gi - gp), 0.0)
        return self.scheme.dt * (1.0 + float(g.max(initial=0.0))) / phi_min

    def initialize(self) -> SimulationHistory:
        d = self.solvability_product(0.0)
        if d >= 1.0:
            log.warning("dt * d_n = %.3g >= 1: transport solvability is not guaranteed", d)
        hist = SimulationHistory(depth=3 if self.scheme.kind == "BDF3" else 1)
        hist.push(self.flow.initial_state(0.0), self.transport.initial_state(0.0))
        return hist

    def advance(self, hist: SimulationHistory) -> tuple[FlowState, ConcentrationState]:
        step = hist.step + 1
        dt = self.scheme.dt
        t = step * dt
        a = self.scheme.coefficients(step)
        if len(hist.flow) < len(a) - 1:
            raise RuntimeError(f"history holds {len(hist.flow)} states, scheme needs {len(a) - 1}")
        u_hist = [(-a[j] / dt, hist.flow[j - 1].u) for j in range(1, len(a))]
        c_hist = [(-a[j] / dt, hist.conc[j - 1].c) for j in range(1, len(a))]
        try:
            flow = self.flow.solve(t, hist.current_conc, u_hist, a[0] / dt)
            conc = self.transport.solve(t, flow.u, c_hist, a[0] / dt)
        except (SolverError, FloatingPointError) as exc:
            raise SolverError(f"step {step} (t={t:.6g}): {exc}") from exc
        hist.push(flow, conc)
        hist.step = step
        return flow, conc

    def run(self, snapshot_times=(), progress_every: int = 0, on_step=None, on_snapshot=None) -> RunResult:
        """Advance to ``T``.

        ``on_step(step, flow, conc, report)`` is called after every step
        (``report`` is None unless conservation checking is on);
        ``on_snapshot(step, t, flow, conc)`` at each requested snapshot time.
        Snapshots are also collected in the result unless ``on_snapshot`` is given.
        """
        scheme = self.scheme
        targets = {}
        for ts in snapshot_times:
            step = int(round(ts / scheme.dt))
            if abs(step * scheme.dt - ts) > 0.5 * scheme.dt or step > scheme.steps or step < 0:
                raise ConfigurationError(f"snapshot time {ts} does not match a time step")
            targets[step] = ts
        start = time.perf_counter()
        hist = self.initialize()
        result = RunResult(hist.current_flow, hist.current_conc, 0)

        def snapshot(step, t, flow, conc):
            if on_snapshot is not None:
                on_snapshot(step, t, flow, conc)
            else:
                result.snapshots.append((step, t, flow, conc))

        if 0 in targets:
            snapshot(0, 0.0, hist.current_flow, hist.current_conc)
        for _ in range(scheme.steps):
            flow, conc = self.advance(hist)
            n = hist.step
            rep = None
            if self.check_conservation:
                rep = self.flow.conservation_report(flow)
                result.reports.append((n, rep))
            if on_step is not None:
                on_step(n, flow, conc, rep)
            if progress_every and (n % progress_every == 0 or n == scheme.steps):
                msg = f"step {n}/{scheme.steps} t={flow.t:.6g}"
                if self.check_conservation:
                    msg += (f" div_s={rep.max_div_stokes:.2e} mass_res={rep.max_mass_residual:.2e}"
                            f" jump={rep.max_jump:.2e}")
                lo, hi = concentration_range(self, conc)
                msg += f" c_range=[{lo:.4f}, {hi:.4f}]"
                log.info(msg)
            if n in targets:
                snapshot(n, flow.t, flow, conc)
        result.flow, result.conc, result.steps = hist.current_flow, hist.current_conc, hist.step
        result.wall_time = time.perf_counter() - start
        return result


def concentration_range(sim: Simulation, conc: ConcentrationState, samples: int = 4):
    """Min/max of c_h over a uniform sub-triangle lattice in every element."""
    pts = [(i / samples, j / samples) for i in range(samples + 1) for j in range(samples + 1 - i)]
    vals = conc.c @ sim.transport.basis.eval(np.array(pts)).T
    return float(vals.min()), float(vals.max())


def element_means(conc: ConcentrationState) -> np.ndarray:
    """Cell averages of c_h (only the constant mode of the orthonormal basis integrates to nonzero)."""
    return conc.c[:, 0] * np.sqrt(2.0)


__all__ = ["TimeScheme", "SimulationHistory", "Simulation", "RunResult", "BDF_COEFFICIENTS",
           "concentration_range", "element_means"]
