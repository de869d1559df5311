"""HDG discretization of one implicit step of the coupled free-flow/porous-flow
problem with concentration-dependent viscosity frozen at the previous level.

Unknown layout follows :class:`hdgsdt.fem.FlowDofMap`. The system matrix is

    [ A   B^T ]
    [ B   0   ]

with ``A`` over (u, ubar) and ``B`` over the pressure unknowns (p, pbar_s,
pbar_d and the mean multiplier). ``B`` is fixed for a mesh; ``A`` changes
with the viscosity and the leading time-stepping coefficient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from hdgsdt.fem import EdgeBasis, ElementTab, FacetTab, FlowDofMap, TriangleBasis, facet_points, \
    l2_project_facets
from hdgsdt.linalg import CondensedSolver, ReducedSystem, ReusableSolver, SolverError, block_indices
from hdgsdt.mesh import (DARCY, DARCY_BOUNDARY, INTERFACE, STOKES,
                         STOKES_BOUNDARY, Mesh)
from hdgsdt.problem import ConfigurationError, Problem

log = logging.getLogger(__name__)


@dataclass
class FlowState:
    """Flow unknowns at time ``t``; ``x`` is the full coefficient vector."""

    x: np.ndarray
    t: float
    dofs: FlowDofMap = field(repr=False)

    @property
    def u(self) -> np.ndarray:
        """Element velocity coefficients ``(ne, 2, nb)``."""
        return self.x[self.dofs.u].reshape(len(self.dofs.u), 2, self.dofs.nb)

    @property
    def ubar(self) -> np.ndarray:
        return self.x[self.dofs.ubar].reshape(len(self.dofs.ubar), 2, self.dofs.nbf)

    @property
    def p(self) -> np.ndarray:
        return self.x[self.dofs.p]

    @property
    def pbar_s(self) -> np.ndarray:
        return self.x[self.dofs.pbar_s]

    @property
    def pbar_d(self) -> np.ndarray:
        return self.x[self.dofs.pbar_d]

    @property
    def multiplier(self) -> float:
        return float(self.x[self.dofs.lam]) if self.dofs.lam is not None else 0.0


@dataclass
class ConservationReport:
    max_div_stokes: float            # max_K ||div u_h||_K on the free-flow part
    max_mass_residual: float         # max_K ||div u_h + Pi_Q(g_p - g_i)||_K on the porous part
    max_jump: float                  # max_F int_F [u_h . n]^2 off the interface
    max_interface_mismatch: float    # max_F int_F ((u_h^j - ubar) . n)^2 on the interface
    scale: float                     # ||u_h||^2 over the domain, for relative thresholds

    def ok(self, div_tol=1e-10, res_tol=1e-9, jump_tol=1e-18) -> bool:
        s = max(self.scale, 1.0)
        return (self.max_div_stokes <= div_tol * np.sqrt(s) and self.max_mass_residual <= res_tol * np.sqrt(s)
                and self.max_jump <= jump_tol * s and self.max_interface_mismatch <= jump_tol * s)


def _vector_basis(phi: np.ndarray) -> np.ndarray:
    """Component-major vector basis ``(..., 2nb, 2)`` from scalar values ``(..., nb)``."""
    nb = phi.shape[-1]
    out = np.zeros(phi.shape[:-1] + (2 * nb, 2))
    out[..., :nb, 0] = phi
    out[..., nb:, 1] = phi
    return out


def _strain_basis(dphi: np.ndarray) -> np.ndarray:
    """Symmetric gradients ``(..., 2nb, 2, 2)`` of the vector basis from ``dphi (..., nb, 2)``."""
    nb = dphi.shape[-2]
    out = np.zeros(dphi.shape[:-2] + (2 * nb, 2, 2))
    for c in range(2):
        blk = out[..., c * nb:(c + 1) * nb, :, :]
        blk[..., c, :] += 0.5 * dphi
        blk[..., :, c] += 0.5 * dphi
    return out


def weighted_gram(X: np.ndarray, w: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Batched ``X^T diag(w) Y`` for ``X (ne, P, a)``, ``w (ne, P)``, ``Y (ne, P, b)``."""
    return np.matmul(np.swapaxes(X, 1, 2) * w[:, None, :], Y)


def _divergence_basis(dphi: np.ndarray) -> np.ndarray:
    return np.concatenate([dphi[..., 0], dphi[..., 1]], axis=-1)


class FlowDiscretization:
    """Assembly and solution of the flow step on a fixed mesh."""

    def __init__(self, mesh: Mesh, problem: Problem, solver: ReusableSolver | None = None,
                 condense: bool = False):
        self.mesh = mesh
        self.problem = problem
        k = problem.k_f
        self.k = k
        self.dofs = FlowDofMap(mesh, k, problem.mean_constraint)
        self.basis = TriangleBasis(k)
        self.ebasis = EdgeBasis(k)
        q = problem.quad_degree_flow
        self.tab = ElementTab(mesh, self.basis, q)
        self.ftab = FacetTab(mesh, self.basis, q)
        self.psi = self.ebasis.eval(self.ftab.t)
        self.solver = solver or ReusableSolver()
        self._condense = condense
        self._inner_solver = solver
        self.stokes_el = np.flatnonzero(mesh.subdomain == STOKES)
        self.darcy_el = np.flatnonzero(mesh.subdomain == DARCY)
        self.interface = mesh.facets_of_kind(INTERFACE)
        self._ctab = None
        self._last = None
        self._check_boundary()
        self._precompute_geometry()
        self._build_constant_blocks()
        self._build_pattern()

    # -- setup --------------------------------------------------------------

    def _check_boundary(self):
        bc = self.problem.flow_boundary
        kinds = bc.kinds()
        if len(kinds) != len(set(kinds)):
            raise ConfigurationError("a boundary kind is assigned more than one flow condition")
        for kind in STOKES_BOUNDARY:
            if np.any(self.mesh.facet_kind == kind) and kind not in list(bc.velocity) + list(bc.slip) + list(bc.traction):
                raise ConfigurationError(f"no flow boundary condition for {kind}")
        for kind in DARCY_BOUNDARY:
            if np.any(self.mesh.facet_kind == kind) and kind not in list(bc.normal_flux) + list(bc.pressure):
                raise ConfigurationError(f"no flow boundary condition for {kind}")
        if bc.pressure or bc.traction:
            if self.problem.mean_constraint:
                raise ConfigurationError("mean-zero pressure constraint conflicts with pressure/traction data")

    def _precompute_geometry(self):
        tab, ftab = self.tab, self.ftab
        es = self.stokes_el
        nb, nbf = self.dofs.nb, self.dofs.nbf
        # Stokes local element layout: [u (2nb), ubar_f0, ubar_f1, ubar_f2 (2nbf each)]
        L = 2 * nb + 6 * nbf
        self.L = L
        self.E_vol = _strain_basis(tab.dphi[es])                          # (nes, nq, 2nb, 2, 2)
        n = ftab.normal[es]                                               # (nes, 3, 2)
        V = _vector_basis(ftab.phi[es])                                   # (nes, 3, nqf, 2nb, 2)
        Vbar = _vector_basis(self.psi)                                    # (nqf, 2nbf, 2)
        nes, nqf = len(es), len(ftab.t)
        J = np.zeros((nes, 3, nqf, L, 2))
        J[..., :2 * nb, :] = V
        for l in range(3):
            s = 2 * nb + l * 2 * nbf
            J[:, l, :, s:s + 2 * nbf, :] = -Vbar
        self.J = J
        Ef = _strain_basis(ftab.dphi[es])                                 # (nes, 3, nqf, 2nb, 2, 2)
        Sn = np.zeros((nes, 3, nqf, L, 2))
        Sn[..., :2 * nb, :] = np.einsum("elqbij,elj->elqbi", Ef, n)
        self.Sn = Sn
        # layouts for weighted_gram: (elements, points * components, local dofs)
        self._Ev = np.moveaxis(self.E_vol, 2, -1).reshape(nes, -1, 2 * nb)
        self._J = np.moveaxis(J, 3, -1).reshape(nes, -1, L)
        self._Sn = np.moveaxis(Sn, 3, -1).reshape(nes, -1, L)
        diag = np.arange(2 * nb) * (L + 1)
        self._time_diag = (np.arange(nes)[:, None] * L * L + diag[None, :]).ravel()
        self._time_det = np.repeat(self.mesh.det[es], 2 * nb)
        self._static_values = None
        self.h_stokes = self.mesh.diameter[es]
        self.local_stokes_dofs = np.concatenate(
            [self.dofs.u[es]] + [self.dofs.ubar_of_facet(self.mesh.element_facets[es, l]) for l in range(3)],
            axis=1)
        # Darcy mass structure
        ed = self.darcy_el
        self.kinv_darcy = np.linalg.inv(self.problem.kappa_tensor(tab.x[ed]))   # (ned, nq, 2, 2)
        if not np.all(np.isfinite(self.kinv_darcy)):
            raise ConfigurationError("permeability is singular at a quadrature point")
        Vd = _vector_basis(tab.phi)                                        # (nq, 2nb, 2)
        KVd = np.einsum("eqij,qbj->eqib", self.kinv_darcy, Vd)
        self._Vd = np.broadcast_to(np.moveaxis(Vd, 1, -1).reshape(1, -1, 2 * nb), (len(ed), Vd.shape[0] * 2, 2 * nb))
        self._KVd = KVd.reshape(len(ed), -1, 2 * nb)
        # interface tangential structure
        fi = self.interface
        xi, wi, _ = facet_points(self.mesh, fi, self.problem.quad_degree_flow)
        self.x_int, self.w_int = xi, wi
        tau = self.mesh.facet_tangent[fi]
        kap = self.problem.kappa_tensor(xi)
        ktt = np.einsum("fi,fqij,fj->fq", tau, kap, tau)
        self.gamma_int = self.problem.alpha / np.sqrt(ktt)
        self.Tbar_int = np.einsum("qa,fc->fqca", self.psi, tau).reshape(len(fi), nqf, 2 * nbf)

    def _build_constant_blocks(self):
        mesh, tab, ftab, dofs = self.mesh, self.tab, self.ftab, self.dofs
        ne = mesh.num_elements
        npr, nbf = dofs.np, dofs.nbf
        div = _divergence_basis(tab.dphi)                                   # (ne, nq, 2nb)
        Bp = -np.einsum("eq,qa,eqb->eab", tab.w, tab.phi[:, :npr], div)
        V = _vector_basis(ftab.phi)                                         # (ne, 3, nqf, 2nb, 2)
        Vn = np.einsum("elqbi,eli->elqb", V, ftab.normal)
        Bf = np.einsum("elq,qm,elqb->elmb", ftab.w, self.psi, Vn).reshape(ne, 3 * nbf, -1)
        self.B_elem = np.concatenate([Bp, Bf], axis=1)                      # (ne, np + 3nbf, 2nb)
        rows = [dofs.p]
        for l in range(3):
            f = mesh.element_facets[:, l]
            r = np.where((mesh.subdomain == STOKES)[:, None],
                         dofs.pbar_s[np.maximum(dofs.s_slot[f], 0)],
                         dofs.pbar_d[np.maximum(dofs.d_slot[f], 0)])
            rows.append(r)
        self.B_elem_rows = np.concatenate(rows, axis=1)
        self.B_elem_cols = dofs.u

        # facet terms coupling pressure traces with ubar: interface and traction kinds
        bc = self.problem.flow_boundary
        blocks, brow, bcol = [], [], []
        facet_sets = [(self.interface, STOKES, -1.0), (self.interface, DARCY, 1.0)]
        if bc.traction:
            facet_sets.append((mesh.facets_of_kind(*bc.traction), STOKES, -1.0))
        for facets, side, sign in facet_sets:
            if len(facets) == 0:
                continue
            x, w, t = facet_points(mesh, facets, self.problem.quad_degree_flow)
            n = mesh.facet_normal[facets]
            psi = self.ebasis.eval(t)
            vbar_n = np.einsum("qa,fc->fqca", psi, n).reshape(len(facets), len(t), -1)
            blk = sign * np.einsum("fq,qm,fqa->fma", w, psi, vbar_n)
            blocks.append(blk)
            brow.append(dofs.pbar_of_facet(facets, side))
            bcol.append(dofs.ubar_of_facet(facets))
        self.B_facet = blocks
        self.B_facet_rows = brow
        self.B_facet_cols = bcol

        # mean constraint row
        if dofs.lam is not None:
            self.mean_row = np.einsum("eq,qa->ea", tab.w, tab.phi[:, :npr])
        # Stokes/Darcy velocity mass diagonal: int_K phi_a phi_b = det * delta_ab
        self.mass_det = mesh.det

    def _build_pattern(self):
        dofs = self.dofs
        rows, cols = [], []
        # A: Stokes local blocks, Darcy blocks, interface blocks
        r, c = block_indices(self.local_stokes_dofs, self.local_stokes_dofs)
        rows.append(r); cols.append(c)
        ud = dofs.u[self.darcy_el]
        r, c = block_indices(ud, ud)
        rows.append(r); cols.append(c)
        ui = dofs.ubar_of_facet(self.interface)
        r, c = block_indices(ui, ui)
        rows.append(r); cols.append(c)
        self._n_A = sum(len(a) for a in rows)
        # B and B^T
        brs, bcs = [], []
        r, c = block_indices(self.B_elem_rows, self.B_elem_cols)
        brs.append(r); bcs.append(c)
        for br, bc in zip(self.B_facet_rows, self.B_facet_cols):
            r, c = block_indices(br, bc)
            brs.append(r); bcs.append(c)
        if dofs.lam is not None:
            brs.append(np.full(dofs.p.size, dofs.lam)); bcs.append(dofs.p.ravel())
        br, bc = np.concatenate(brs), np.concatenate(bcs)
        rows += [br, bc]
        cols += [bc, br]
        B_vals = [self.B_elem.ravel()] + [b.ravel() for b in self.B_facet]
        if dofs.lam is not None:
            B_vals.append(self.mean_row.ravel())
        self.B_vals = np.concatenate(B_vals)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self._rows, self._cols = rows, cols

        fixed = np.zeros(dofs.ndofs, dtype=bool)
        bc = self.problem.flow_boundary
        mesh = self.mesh
        for kind in bc.velocity:
            fixed[dofs.ubar_of_facet(mesh.facets_of_kind(kind)).ravel()] = True
        for kind in bc.slip:
            facets = mesh.facets_of_kind(kind)
            comp = self._slip_component(facets)
            ub = dofs.ubar_of_facet(facets).reshape(len(facets), 2, dofs.nbf)
            fixed[ub[np.arange(len(facets)), comp].ravel()] = True
        for kind in bc.pressure:
            fixed[dofs.pbar_of_facet(mesh.facets_of_kind(kind), DARCY).ravel()] = True
        self.system = ReducedSystem(rows, cols, fixed)
        self.full_pattern = self.system.full_pattern
        if self._condense:
            interior = np.concatenate([dofs.u, dofs.p], axis=1)
            self.solver = CondensedSolver(self.system, interior, self._inner_solver)

    def _slip_component(self, facets):
        n = self.mesh.facet_normal[facets]
        comp = np.argmax(np.abs(n), axis=1)
        if not np.allclose(np.abs(n[np.arange(len(facets)), comp]), 1.0):
            raise ConfigurationError("slip condition is only supported on axis-aligned boundaries")
        return comp

    # -- coefficient evaluation ----------------------------------------------

    def viscosity_at(self, conc) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Viscosity at volume points (ne, nq), element facet points (ne, 3, nqf)
        and interface points (ni, nqf), from a previous concentration state."""
        visc = self.problem.viscosity
        ne = self.mesh.num_elements
        nqf = len(self.ftab.t)
        if conc is None or not visc.depends_on_concentration:
            return (visc(np.zeros(self.tab.w.shape)), visc(np.zeros((ne, 3, nqf))),
                    visc(np.zeros((len(self.interface), nqf))))
        cv, cf, psi_c = self._concentration_tabulation(conc.dofs.k)
        c_v = conc.c @ cv.T
        c_f = np.einsum("elqb,eb->elq", cf, conc.c)
        cbar = conc.cbar[self.interface] @ psi_c.T
        return visc(c_v), visc(c_f), visc(cbar)

    def _concentration_tabulation(self, k_c: int):
        if self._ctab is None or self._ctab[0] != k_c:
            cb = TriangleBasis(k_c)
            self._ctab = (k_c, cb.eval(self.tab.ref), cb.eval(self.ftab.ref), EdgeBasis(k_c).eval(self.ftab.t))
        return self._ctab[1:]

    def _lagged_concentration(self, conc) -> np.ndarray:
        if conc is None:
            return np.zeros(self.tab.w.shape)
        cv, _, _ = self._concentration_tabulation(conc.dofs.k)
        return conc.c @ cv.T

    # -- assembly -------------------------------------------------------------

    def stokes_local(self, mu_v, mu_f, time_coef: float = 0.0) -> np.ndarray:
        """Local matrices of a_h^s (plus the Stokes velocity mass term times ``time_coef``)."""
        es = self.stokes_el
        nu = 2 * self.dofs.nb
        A = np.zeros((len(es), self.L, self.L))
        wv = np.repeat(self.tab.w[es] * mu_v[es], 4, axis=1)
        A[:, :nu, :nu] = 2.0 * weighted_gram(self._Ev, wv, self._Ev)
        wf = np.repeat((self.ftab.w[es] * mu_f[es]).reshape(len(es), -1), 2, axis=1)
        pen = (2.0 * self.problem.beta_s / self.h_stokes)[:, None]
        A += weighted_gram(self._J, wf * pen, self._J)
        C = 2.0 * weighted_gram(self._Sn, wf, self._J)
        A -= C + C.transpose(0, 2, 1)
        if time_coef:
            idx = np.arange(nu)
            A[:, idx, idx] += time_coef * self.mesh.det[es][:, None]
        return A

    def darcy_local(self, mu_v) -> np.ndarray:
        ed = self.darcy_el
        w = np.repeat(self.tab.w[ed] * mu_v[ed], 2, axis=1)
        return weighted_gram(self._Vd, w, self._KVd)

    def interface_local(self, mu_bar) -> np.ndarray:
        w = self.w_int * self.gamma_int * mu_bar
        return weighted_gram(self.Tbar_int, w, self.Tbar_int)

    def matrix_values(self, conc, time_coef: float) -> np.ndarray:
        if not self.problem.viscosity.depends_on_concentration:
            if self._static_values is None:
                mu_v, mu_f, mu_bar = self.viscosity_at(None)
                A_vals = np.concatenate([self.stokes_local(mu_v, mu_f).ravel(), self.darcy_local(mu_v).ravel(),
                                         self.interface_local(mu_bar).ravel()])
                self._static_values = np.concatenate([A_vals, self.B_vals, self.B_vals])
            vals = self._static_values.copy()
            vals[self._time_diag] += time_coef * self._time_det
            return vals
        mu_v, mu_f, mu_bar = self.viscosity_at(conc)
        A_vals = np.concatenate([self.stokes_local(mu_v, mu_f, time_coef).ravel(),
                                 self.darcy_local(mu_v).ravel(),
                                 self.interface_local(mu_bar).ravel()])
        return np.concatenate([A_vals, self.B_vals, self.B_vals])

    def full_matrix(self, conc=None, time_coef: float = 0.0):
        """Unreduced system matrix (all DOFs), for inspection and tests."""
        return self.full_pattern.assemble(self.matrix_values(conc, time_coef))

    def rhs(self, t: float, conc, history: list[tuple[float, np.ndarray]]) -> np.ndarray:
        """Load vector: sources, time history and boundary data on constraint rows.

        ``history`` lists ``(coefficient, u_coefs (ne, 2, nb))`` pairs whose
        weighted sum enters the Stokes mass term (already divided by dt).
        """
        p, mesh, tab, dofs = self.problem, self.mesh, self.tab, self.dofs
        F = np.zeros(dofs.ndofs)
        es, ed = self.stokes_el, self.darcy_el
        nb = dofs.nb
        c_v = self._lagged_concentration(conc)
        if p.stokes_force is not None:
            f = p.stokes_force(tab.x[es], t, c_v[es])
            F[dofs.u[es]] += np.einsum("eq,eqc,qb->ecb", tab.w[es], f, tab.phi).reshape(len(es), 2 * nb)
        for coef, u_old in history:
            F[dofs.u[es]] += coef * (self.mesh.det[es][:, None, None] * u_old[es]).reshape(len(es), 2 * nb)
        if p.darcy_force is not None:
            f = p.darcy_force(tab.x[ed], t, c_v[ed])
            mu = p.viscosity(c_v[ed])
            kf = np.einsum("eqij,eqj->eqi", self.kinv_darcy, f) * mu[..., None]
            F[dofs.u[ed]] += np.einsum("eq,eqc,qb->ecb", tab.w[ed], kf, tab.phi).reshape(len(ed), 2 * nb)
        # -div u = g_p - g_i in the porous part
        gi, gp, _ = p.wells(tab.x[ed], t)
        F[dofs.p[ed]] += np.einsum("eq,eq,qa->ea", tab.w[ed], gp - gi, tab.phi[:, :dofs.np])
        bc = p.flow_boundary
        flux_data = [(kind, g, STOKES) for kind, g in bc.velocity.items()]
        flux_data += [(kind, g, DARCY) for kind, g in bc.normal_flux.items()]
        for kind, g, side in flux_data:
            facets = mesh.facets_of_kind(kind)
            if len(facets) == 0:
                continue
            x, w, tq = facet_points(mesh, facets, p.quad_degree_flow)
            gn = np.einsum("fqc,fc->fq", g(x, t), mesh.facet_normal[facets])
            psi = self.ebasis.eval(tq)
            F[dofs.pbar_of_facet(facets, side)] += np.einsum("fq,fq,qm->fm", w, gn, psi)
        return F

    def boundary_values(self, t: float) -> np.ndarray:
        """Values of the fixed DOFs (zero elsewhere)."""
        mesh, dofs, bc = self.mesh, self.dofs, self.problem.flow_boundary
        x = np.zeros(dofs.ndofs)
        qd = self.problem.quad_degree_flow
        for kind, g in bc.velocity.items():
            facets = mesh.facets_of_kind(kind)
            if len(facets):
                vals = l2_project_facets(lambda y, s: g(y, t), mesh, facets, self.k, side=STOKES, quad_degree=qd)
                x[dofs.ubar_of_facet(facets)] = vals.reshape(len(facets), -1)
        for kind, pfun in bc.pressure.items():
            facets = mesh.facets_of_kind(kind)
            if len(facets):
                vals = l2_project_facets(lambda y, s: pfun(y, t), mesh, facets, self.k, side=DARCY, quad_degree=qd)
                x[dofs.pbar_of_facet(facets, DARCY)] = vals
        return x

    # -- solve ------------------------------------------------------------------

    def solve(self, t: float, conc, history, time_coef: float) -> FlowState:
        """Solve one step; ``time_coef`` is the leading BDF coefficient over dt
        (zero gives the steady problem)."""
        vals = self.matrix_values(conc, time_coef)
        K = self.system.matrix(vals)
        xfix = self.boundary_values(t)
        rhs = self.system.reduced_rhs(vals, self.rhs(t, conc, history), xfix)
        try:
            xf = self.solver.solve(K, rhs, self._last)
        except SolverError as exc:
            raise SolverError(f"{exc}; try a larger beta_s or check the mesh") from exc
        self._last = xf
        return FlowState(self.system.expand(xf, xfix), t, self.dofs)

    def initial_state(self, t0: float = 0.0) -> FlowState:
        """Velocity from the BDM interpolant of the initial field, traces from
        the trace interpolant; pressures zero."""
        from hdgsdt.fem import bdm_interpolate, interpolate_vbar
        x = np.zeros(self.dofs.ndofs)
        u0 = self.problem.initial_velocity
        if u0 is not None:
            qd = self.problem.quad_degree_flow + 2
            coef = bdm_interpolate(u0, self.mesh, self.k, qd)
            x[self.dofs.u] = coef.reshape(self.mesh.num_elements, -1)
            vbar = interpolate_vbar(u0, self.mesh, self.k, coef, qd)
            x[self.dofs.ubar] = vbar.reshape(len(vbar), -1)
        return FlowState(x, t0, self.dofs)

    # -- diagnostics -------------------------------------------------------------

    def conservation_report(self, state: FlowState) -> ConservationReport:
        mesh, tab, ftab, dofs, p = self.mesh, self.tab, self.ftab, self.dofs, self.problem
        u = state.u
        div = np.einsum("eqbc,ecb->eq", tab.dphi, u)
        phiq = tab.phi[:, :dofs.np]
        # project div u_h + chi_d (g_p - g_i) onto P_{k-1}; div u_h is already in it
        src = np.zeros(tab.w.shape)
        gi, gp, _ = p.wells(tab.x[self.darcy_el], state.t)
        src[self.darcy_el] = gp - gi
        coef = np.einsum("eq,eq,qa->ea", tab.w, div + src, phiq) / mesh.det[:, None]
        res = np.sqrt(mesh.det * np.sum(coef ** 2, axis=1))
        div_norm = np.sqrt(np.einsum("eq,eq->e", tab.w, div ** 2))
        # normal jumps
        un = np.einsum("elqb,ecb,elc->elq", ftab.phi, u, ftab.normal)
        nf = mesh.num_facets
        fe = mesh.facet_elements
        loc = np.full((nf, 2), -1)
        for l in range(3):
            f = mesh.element_facets[:, l]
            first = fe[f, 0] == np.arange(mesh.num_elements)
            loc[f[first], 0] = l
            loc[f[~first], 1] = l
        interior = (fe[:, 1] >= 0) & (mesh.facet_kind != INTERFACE)
        fi = np.flatnonzero(interior)
        jump = un[fe[fi, 0], loc[fi, 0]] + un[fe[fi, 1], loc[fi, 1]]
        wj = ftab.w[fe[fi, 0], loc[fi, 0]]
        jumps = np.sum(wj * jump ** 2, axis=1)
        # interface: element traces against the trace velocity
        fI = self.interface
        mism = np.zeros(0)
        if len(fI):
            ubar = state.x[dofs.ubar_of_facet(fI)].reshape(len(fI), 2, dofs.nbf)
            n = mesh.facet_normal[fI]
            ubn = np.einsum("qm,fcm,fc->fq", self.psi, ubar, n)
            us_n = un[fe[fI, 0], loc[fI, 0]]          # outward from Stokes = n
            ud_n = -un[fe[fI, 1], loc[fI, 1]]         # Darcy outward is -n
            wI = ftab.w[fe[fI, 0], loc[fI, 0]]
            mism = np.concatenate([np.sum(wI * (us_n - ubn) ** 2, axis=1), np.sum(wI * (ud_n - ubn) ** 2, axis=1)])
        scale = float(np.sum(mesh.det * np.sum(u ** 2, axis=(1, 2))))
        es, ed = self.stokes_el, self.darcy_el
        return ConservationReport(
            max_div_stokes=float(div_norm[es].max(initial=0.0)),
            max_mass_residual=float(res[ed].max(initial=0.0)),
            max_jump=float(jumps.max(initial=0.0)),
            max_interface_mismatch=float(mism.max(initial=0.0)),
            scale=scale,
        )


__all__ = ["FlowDiscretization", "FlowState", "ConservationReport"]
