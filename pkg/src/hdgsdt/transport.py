"""HDG discretization of one implicit concentration step: upwinded advection,
interior-penalty dispersion with velocity-dependent tensor, porosity-weighted
time term and well terms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from hdgsdt.fem import (EdgeBasis, ElementTab, FacetTab, TransportDofMap, TriangleBasis,
                        l2_project_elements, l2_project_facets)
from hdgsdt.flow import weighted_gram
from hdgsdt.linalg import CondensedSolver, ReducedSystem, ReusableSolver, SolverError, block_indices
from hdgsdt.mesh import BOUNDARY_KINDS, DARCY, Mesh
from hdgsdt.problem import ConfigurationError, Problem

log = logging.getLogger(__name__)


@dataclass
class ConcentrationState:
    """Element coefficients ``c (ne, nb)`` and facet coefficients ``cbar (nf, nbf)``."""

    x: np.ndarray
    t: float
    dofs: TransportDofMap = field(repr=False)

    @property
    def c(self) -> np.ndarray:
        return self.x[self.dofs.c]

    @property
    def cbar(self) -> np.ndarray:
        return self.x[self.dofs.cbar]


class TransportDiscretization:
    """Assembly and solution of the transport step on a fixed mesh."""

    def __init__(self, mesh: Mesh, problem: Problem, flow_degree: int | None = None,
                 solver: ReusableSolver | None = None, condense: bool = False):
        self.mesh = mesh
        self.problem = problem
        self.k = problem.k_c
        self.dofs = TransportDofMap(mesh, self.k)
        self.basis = TriangleBasis(self.k)
        self.ebasis = EdgeBasis(self.k)
        q = problem.quad_degree_transport
        self.tab = ElementTab(mesh, self.basis, q)
        self.ftab = FacetTab(mesh, self.basis, q)
        self.psi = self.ebasis.eval(self.ftab.t)
        self.solver = solver or ReusableSolver()
        self._condense = condense
        self._inner_solver = solver
        kf = problem.k_f if flow_degree is None else flow_degree
        self.flow_basis = TriangleBasis(kf)
        self.uphi = self.flow_basis.eval(self.tab.ref)                    # (nq, nbu)
        self.uphi_f = self.flow_basis.eval(self.ftab.ref)                 # (ne, 3, nqf, nbu)
        sub_v = np.broadcast_to(mesh.subdomain[:, None], self.tab.w.shape)
        sub_f = np.broadcast_to(mesh.subdomain[:, None, None], self.ftab.w.shape)
        self.sub_v, self.sub_f = sub_v, sub_f
        self.porosity_v = np.asarray(problem.porosity(self.tab.x, sub_v), dtype=float)
        self.porosity_f = np.asarray(problem.porosity(self.ftab.x, sub_f), dtype=float)
        if np.any(self.porosity_v <= 0):
            raise ConfigurationError("porosity must be positive")
        self.boundary = mesh.facets_of_kind(*BOUNDARY_KINDS)
        self._last = None
        self._build_layout()

    def _build_layout(self):
        mesh, dofs = self.mesh, self.dofs
        nb, nbf = dofs.nb, dofs.nbf
        ne = mesh.num_elements
        self.L = nb + 3 * nbf
        nqf = len(self.ftab.t)
        # test/trial jump (w - wbar) on each local facet: (ne, 3, nqf, L)
        J = np.zeros((ne, 3, nqf, self.L))
        J[..., :nb] = self.ftab.phi
        for l in range(3):
            J[:, l, :, nb + l * nbf:nb + (l + 1) * nbf] = -self.psi
        self.J = J
        self._J = J.reshape(ne, -1, self.L)
        self._phi_f = self.ftab.phi.reshape(ne, -1, nb)
        self._phi = np.broadcast_to(self.tab.phi, (ne,) + self.tab.phi.shape)
        self._dphi = np.moveaxis(self.tab.dphi, 2, -1).reshape(ne, -1, nb)
        self.local_dofs = np.concatenate([dofs.c] + [dofs.cbar[mesh.element_facets[:, l]] for l in range(3)],
                                         axis=1)
        # boundary facets: element-local position for u.n evaluation
        fb = self.boundary
        e = mesh.facet_elements[fb, 0]
        loc = np.argmax(mesh.element_facets[e] == fb[:, None], axis=1)
        self.bnd_elem, self.bnd_loc = e, loc
        bdofs = dofs.cbar[fb]
        rows, cols = [], []
        r, c = block_indices(self.local_dofs, self.local_dofs)
        rows.append(r); cols.append(c)
        r, c = block_indices(bdofs, bdofs)
        rows.append(r); cols.append(c)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        fixed = np.zeros(dofs.ndofs, dtype=bool)
        for kind in self.problem.transport_boundary.dirichlet:
            fixed[dofs.cbar[mesh.facets_of_kind(kind)].ravel()] = True
        self.system = ReducedSystem(rows, cols, fixed)
        if self._condense:
            self.solver = CondensedSolver(self.system, dofs.c, self._inner_solver)
        self.mass_ref = np.einsum("eq,eq,qa,qb->eab", self.tab.w, self.porosity_v, self.tab.phi, self.tab.phi)

    # -- velocity-dependent coefficients --------------------------------------

    def velocity_at(self, u_coef: np.ndarray):
        """Velocity at volume points (ne, nq, 2) and element facet points (ne, 3, nqf, 2)."""
        uv = np.einsum("qb,ecb->eqc", self.uphi, u_coef)
        uf = np.einsum("elqb,ecb->elqc", self.uphi_f, u_coef)
        return uv, uf

    def dispersion_at(self, uv, uf):
        model = self.problem.dispersion
        Dv = model.tensor(uv, self.tab.x, self.sub_v, self.porosity_v)
        Df = model.tensor(uf, self.ftab.x, self.sub_f, self.porosity_f)
        return Dv, Df

    # -- assembly ---------------------------------------------------------------

    def local_matrices(self, u_coef: np.ndarray, time_coef: float = 0.0, t: float = 0.0) -> np.ndarray:
        """Local matrices over [c_K, cbar_f0, cbar_f1, cbar_f2], rows are tests."""
        tab, ftab = self.tab, self.ftab
        nb = self.dofs.nb
        ne = self.mesh.num_elements
        L = self.L
        uv, uf = self.velocity_at(u_coef)
        Dv, Df = self.dispersion_at(uv, uf)
        n = ftab.normal
        A = np.zeros((ne, L, L))
        # volume: -int c u.grad w + int D grad c . grad w
        ugw = np.einsum("eqc,eqac->eqa", uv, tab.dphi)
        DG = np.einsum("eqcd,eqbd->eqcb", Dv, tab.dphi).reshape(ne, -1, nb)
        c_blk = weighted_gram(self._dphi, np.repeat(tab.w, 2, axis=1), DG)
        c_blk -= weighted_gram(ugw, tab.w, self._phi)
        if time_coef:
            c_blk += time_coef * self.mass_ref
        _, gp, _ = self.problem.wells(tab.x, t)
        gp = np.where(self.sub_v == DARCY, gp, 0.0)
        if np.any(gp):
            c_blk += weighted_gram(self._phi, tab.w * gp, self._phi)
        A[:, :nb, :nb] = c_blk
        # facets
        un = np.einsum("elqc,elc->elq", uf, n).reshape(ne, -1)
        w = ftab.w.reshape(ne, -1)
        Dn = np.einsum("elqij,elj->elqi", Df, n)
        if self.problem.penalty_weight == "normal":
            weight = np.einsum("elqi,eli->elq", Dn, n)
        else:
            weight = np.linalg.norm(Dn, axis=-1)
        pen = weight.reshape(ne, -1) * (self.problem.beta_tr / self.mesh.diameter)[:, None]
        # -int_in u.n (c - cbar)(w - wbar) + penalty
        A += weighted_gram(self._J, w * (pen - np.minimum(un, 0.0)), self._J)
        # +int c u.n (w - wbar) - int (D grad c . n)(w - wbar)
        dn = np.einsum("elqbc,elqc->elqb", ftab.dphi, Dn).reshape(ne, -1, nb)
        G = weighted_gram(self._J, w, dn)
        A[:, :, :nb] += weighted_gram(self._J, w * un, self._phi_f) - G
        # -int (D grad w . n)(c - cbar)
        A[:, :nb, :] -= G.transpose(0, 2, 1)
        return A

    def boundary_matrices(self, u_coef: np.ndarray) -> np.ndarray:
        """Outflow term int max(u.n, 0) cbar wbar on boundary facets (flux condition only)."""
        fb = self.boundary
        nbf = self.dofs.nbf
        if self.problem.transport_boundary.dirichlet or len(fb) == 0:
            return np.zeros((len(fb), nbf, nbf))
        e, l = self.bnd_elem, self.bnd_loc
        uf = np.einsum("fqb,fcb->fqc", self.uphi_f[e, l], u_coef[e])
        un = np.einsum("fqc,fc->fq", uf, self.ftab.normal[e, l])
        w = self.ftab.w[e, l] * np.maximum(un, 0.0)
        return np.einsum("fq,qa,qb->fab", w, self.psi, self.psi)

    def matrix_values(self, u_coef, time_coef, t=0.0) -> np.ndarray:
        return np.concatenate([self.local_matrices(u_coef, time_coef, t).ravel(),
                               self.boundary_matrices(u_coef).ravel()])

    def full_matrix(self, u_coef, time_coef: float = 0.0, t: float = 0.0):
        return self.system.full_pattern.assemble(self.matrix_values(u_coef, time_coef, t))

    def rhs(self, t: float, u_coef: np.ndarray, history: list[tuple[float, np.ndarray]]) -> np.ndarray:
        p, tab, dofs = self.problem, self.tab, self.dofs
        F = np.zeros(dofs.ndofs)
        for coef, c_old in history:
            F[dofs.c] += coef * np.einsum("eab,eb->ea", self.mass_ref, c_old)
        gi, _, ci = p.wells(tab.x, t)
        s = np.where(self.sub_v == DARCY, ci * gi, 0.0)
        if p.transport_source is not None:
            s = s + p.transport_source(tab.x, t)
        if np.any(s):
            F[dofs.c] += np.einsum("eq,eq,qa->ea", tab.w, s, tab.phi)
        tb = p.transport_boundary
        if not tb.dirichlet and tb.inflow_value and len(self.boundary):
            e, l = self.bnd_elem, self.bnd_loc
            uf = np.einsum("fqb,fcb->fqc", self.uphi_f[e, l], u_coef[e])
            un = np.einsum("fqc,fc->fq", uf, self.ftab.normal[e, l])
            w = self.ftab.w[e, l] * np.minimum(un, 0.0)
            F[dofs.cbar[self.boundary]] -= tb.inflow_value * np.einsum("fq,qa->fa", w, self.psi)
        return F

    def boundary_values(self, t: float) -> np.ndarray:
        x = np.zeros(self.dofs.ndofs)
        for kind, g in self.problem.transport_boundary.dirichlet.items():
            facets = self.mesh.facets_of_kind(kind)
            if len(facets):
                x[self.dofs.cbar[facets]] = l2_project_facets(
                    lambda y, s: g(y, t), self.mesh, facets, self.k,
                    quad_degree=self.problem.quad_degree_transport + 2)
        return x

    def solve(self, t: float, u_coef: np.ndarray, history, time_coef: float) -> ConcentrationState:
        vals = self.matrix_values(u_coef, time_coef, t)
        K = self.system.matrix(vals)
        xfix = self.boundary_values(t)
        rhs = self.system.reduced_rhs(vals, self.rhs(t, u_coef, history), xfix)
        try:
            xf = self.solver.solve(K, rhs, self._last)
        except SolverError as exc:
            raise SolverError(f"{exc}; try adjusting beta_tr or the time step") from exc
        self._last = xf
        return ConcentrationState(self.system.expand(xf, xfix), t, self.dofs)

    def initial_state(self, t0: float = 0.0) -> ConcentrationState:
        """L2 projections of the initial concentration onto elements and facets."""
        x = np.zeros(self.dofs.ndofs)
        c0 = self.problem.initial_concentration
        if c0 is not None:
            qd = max(self.problem.quad_degree_transport + 2, 2 * self.k + 4)
            x[self.dofs.c] = l2_project_elements(c0, self.mesh, self.k, qd)
            x[self.dofs.cbar] = l2_project_facets(c0, self.mesh, np.arange(self.mesh.num_facets), self.k,
                                                  quad_degree=qd)
        return ConcentrationState(x, t0, self.dofs)

    def total_mass(self, state: ConcentrationState) -> float:
        """int phi c_h over the domain."""
        vals = state.c @ self.tab.phi.T
        return float(np.sum(self.tab.w * self.porosity_v * vals))


__all__ = ["TransportDiscretization", "ConcentrationState"]
