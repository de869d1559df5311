"""Reference bases, quadrature, tabulation on meshes, DOF maps and the
projection/interpolation operators used to initialize and measure fields.

Element bases are orthonormal on the reference triangle
``{xi, eta >= 0, xi + eta <= 1}`` and hierarchical: the first
``dim P_{k-1}`` functions of the degree-``k`` basis span ``P_{k-1}``.
Because maps are affine, the physical element mass matrix is ``det(J) * I``.
Facet bases are orthonormal Legendre polynomials in the facet parameter
``t in [0, 1]`` running from ``facet_vertices[f, 0]`` to ``facet_vertices[f, 1]``,
so the physical facet mass matrix is ``|F| * I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi, roots_legendre

from hdgsdt.mesh import DARCY_FACETS, STOKES, STOKES_FACETS, INTERFACE, Mesh

MAX_QUADRATURE_DEGREE = 60


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def triangle_quadrature(degree: int) -> QuadRule:
    """Collapsed Gauss rule on the reference triangle, exact up to ``degree``."""
    if degree < 0:
        raise QuadratureError("quadrature degree must be non-negative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise QuadratureError(f"triangle quadrature supports degree <= {MAX_QUADRATURE_DEGREE}, got {degree}")
    m = degree // 2 + 1
    s, ws = roots_legendre(m)
    a, wa = 0.5 * (s + 1.0), 0.5 * ws
    r, wr = roots_jacobi(m, 1.0, 0.0)
    b, wb = 0.5 * (r + 1.0), 0.25 * wr
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    points = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
    return QuadRule(points, W.ravel(), degree)


@lru_cache(maxsize=None)
def edge_quadrature(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1], exact up to ``degree``."""
    if degree < 0:
        raise QuadratureError("quadrature degree must be non-negative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise QuadratureError(f"edge quadrature supports degree <= {MAX_QUADRATURE_DEGREE}, got {degree}")
    m = degree // 2 + 1
    s, w = roots_legendre(m)
    return QuadRule(0.5 * (s + 1.0), 0.5 * w, degree)


def triangle_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


class TriangleBasis:
    """Hierarchical orthonormal basis of P_k on the reference triangle."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("polynomial degree must be non-negative")
        self.degree = degree
        self.dim = triangle_dim(degree)
        self.exponents = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
        rule = triangle_quadrature(2 * degree)
        raw = self._raw(rule.points)[0]
        mass = raw.T @ (rule.weights[:, None] * raw)
        L = np.linalg.cholesky(mass)
        # phi = raw @ C.T with C = L^{-1}; lower triangular keeps the hierarchy
        self._coef = np.linalg.solve(L, np.eye(self.dim)).T

    def _raw(self, pts):
        pts = np.asarray(pts, dtype=float)
        x = 2.0 * pts[..., 0] - 1.0
        y = 2.0 * pts[..., 1] - 1.0
        k = self.degree
        eye = np.eye(k + 1)
        Px = np.stack([legendre.legval(x, eye[i]) for i in range(k + 1)], axis=-1)
        Py = np.stack([legendre.legval(y, eye[i]) for i in range(k + 1)], axis=-1)
        dPx = np.stack([legendre.legval(x, legendre.legder(eye[i])) if i else np.zeros_like(x)
                        for i in range(k + 1)], axis=-1)
        dPy = np.stack([legendre.legval(y, legendre.legder(eye[i])) if i else np.zeros_like(y)
                        for i in range(k + 1)], axis=-1)
        a = [e[0] for e in self.exponents]
        b = [e[1] for e in self.exponents]
        val = Px[..., a] * Py[..., b]
        grad = np.stack([2.0 * dPx[..., a] * Py[..., b], 2.0 * Px[..., a] * dPy[..., b]], axis=-1)
        return val, grad

    def eval(self, pts) -> np.ndarray:
        """Values, shape ``pts.shape[:-1] + (dim,)``."""
        return self._raw(pts)[0] @ self._coef

    def grad(self, pts) -> np.ndarray:
        """Reference gradients, shape ``pts.shape[:-1] + (dim, 2)``."""
        g = self._raw(pts)[1]
        return np.einsum("...jr,jk->...kr", g, self._coef)


class EdgeBasis:
    """Orthonormal Legendre basis of P_k on [0, 1]."""

    def __init__(self, degree: int):
        self.degree = degree
        self.dim = degree + 1

    def eval(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        eye = np.eye(self.dim)
        s = 2.0 * t - 1.0
        return np.stack([np.sqrt(2 * j + 1) * legendre.legval(s, eye[j]) for j in range(self.dim)], axis=-1)


# ---------------------------------------------------------------------------
# tabulation of bases on a mesh


def physical_gradients(mesh: Mesh, ref_grad: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Map reference gradients ``(..., nb, 2)`` to physical ones on ``elements``.

    ``elements`` must broadcast against the leading axes of ``ref_grad``.
    """
    inv = np.linalg.inv(mesh.jacobians)[elements]
    return np.einsum("...br,...rs->...bs", ref_grad, inv)


class ElementTab:
    """Basis values and physical gradients at element quadrature points.

    Attributes: ``x (ne, nq, 2)``, ``w (ne, nq)`` physical weights,
    ``phi (nq, nb)``, ``dphi (ne, nq, nb, 2)``.
    """

    def __init__(self, mesh: Mesh, basis: TriangleBasis, degree: int):
        rule = triangle_quadrature(degree)
        ne = mesh.num_elements
        self.rule = rule
        self.ref = rule.points
        self.x = mesh.to_physical(rule.points[None, :, :], np.arange(ne)[:, None])
        self.w = rule.weights[None, :] * mesh.det[:, None]
        self.phi = basis.eval(rule.points)
        ginv = np.linalg.inv(mesh.jacobians)
        self.dphi = np.einsum("qbr,ers->eqbs", basis.grad(rule.points), ginv)


class FacetTab:
    """Element traces of a basis on each element's three facets.

    Facet quadrature points follow the global facet parametrization, so the
    two elements sharing a facet see identical physical points.

    Attributes: ``x (ne, 3, nqf, 2)``, ``w (ne, 3, nqf)`` physical weights,
    ``t (nqf,)`` facet parameters, ``phi (ne, 3, nqf, nb)``,
    ``dphi (ne, 3, nqf, nb, 2)``, ``normal (ne, 3, 2)`` outward.
    """

    def __init__(self, mesh: Mesh, basis: TriangleBasis, degree: int):
        rule = edge_quadrature(degree)
        ne = mesh.num_elements
        ef = mesh.element_facets
        xa = mesh.vertices[mesh.facet_vertices[ef, 0]]
        xb = mesh.vertices[mesh.facet_vertices[ef, 1]]
        t = rule.points
        self.t = t
        self.x = xa[:, :, None, :] + t[None, None, :, None] * (xb - xa)[:, :, None, :]
        self.w = rule.weights[None, None, :] * mesh.facet_length[ef][:, :, None]
        elems = np.broadcast_to(np.arange(ne)[:, None, None], self.x.shape[:-1])
        self.ref = mesh.to_reference(self.x, elems)
        self.phi = basis.eval(self.ref)
        ginv = np.linalg.inv(mesh.jacobians)
        self.dphi = np.einsum("elqbr,ers->elqbs", basis.grad(self.ref), ginv)
        self.normal = mesh.element_normals
        self.facets = ef


def facet_points(mesh: Mesh, facets: np.ndarray, degree: int):
    """Quadrature points ``(nf, nq, 2)``, physical weights and parameters on facets."""
    rule = edge_quadrature(degree)
    xa = mesh.vertices[mesh.facet_vertices[facets, 0]]
    xb = mesh.vertices[mesh.facet_vertices[facets, 1]]
    x = xa[:, None, :] + rule.points[None, :, None] * (xb - xa)[:, None, :]
    w = rule.weights[None, :] * mesh.facet_length[facets][:, None]
    return x, w, rule.points


# ---------------------------------------------------------------------------
# DOF maps


class FlowDofMap:
    """Global numbering for (u, ubar, p, pbar_s, pbar_d[, lambda]).

    Blocks are laid out contiguously in that order. ``ubar`` and ``pbar_s``
    live on Stokes facets, ``pbar_d`` on Darcy facets; interface facets carry
    both pressure traces.
    """

    def __init__(self, mesh: Mesh, k_f: int, mean_constraint: bool = True):
        if k_f < 1:
            raise ValueError("flow degree k_f must be >= 1")
        self.k = k_f
        ne = mesh.num_elements
        self.nb = triangle_dim(k_f)
        self.nv = 2 * self.nb
        self.np = triangle_dim(k_f - 1)
        self.nbf = k_f + 1
        self.nvf = 2 * self.nbf
        self.stokes_facets = mesh.facets_of_kind(*STOKES_FACETS)
        self.darcy_facets = mesh.facets_of_kind(*DARCY_FACETS)
        self.s_slot = np.full(mesh.num_facets, -1, dtype=np.int64)
        self.s_slot[self.stokes_facets] = np.arange(len(self.stokes_facets))
        self.d_slot = np.full(mesh.num_facets, -1, dtype=np.int64)
        self.d_slot[self.darcy_facets] = np.arange(len(self.darcy_facets))
        ns, nd = len(self.stokes_facets), len(self.darcy_facets)

        sizes = {
            "u": ne * self.nv,
            "ubar": ns * self.nvf,
            "p": ne * self.np,
            "pbar_s": ns * self.nbf,
            "pbar_d": nd * self.nbf,
            "lam": 1 if mean_constraint else 0,
        }
        self.offsets = {}
        off = 0
        for name, size in sizes.items():
            self.offsets[name] = off
            off += size
        self.sizes = sizes
        self.ndofs = off
        self.mean_constraint = mean_constraint

        self.u = self.offsets["u"] + np.arange(ne * self.nv).reshape(ne, self.nv)
        self.ubar = self.offsets["ubar"] + np.arange(ns * self.nvf).reshape(ns, self.nvf)
        self.p = self.offsets["p"] + np.arange(ne * self.np).reshape(ne, self.np)
        self.pbar_s = self.offsets["pbar_s"] + np.arange(ns * self.nbf).reshape(ns, self.nbf)
        self.pbar_d = self.offsets["pbar_d"] + np.arange(nd * self.nbf).reshape(nd, self.nbf)
        self.lam = self.offsets["lam"] if mean_constraint else None

    def ubar_of_facet(self, facets) -> np.ndarray:
        return self.ubar[self.s_slot[facets]]

    def pbar_of_facet(self, facets, side: int) -> np.ndarray:
        if side == STOKES:
            return self.pbar_s[self.s_slot[facets]]
        return self.pbar_d[self.d_slot[facets]]

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        off = self.offsets[name]
        return x[off:off + self.sizes[name]]


class TransportDofMap:
    """Global numbering for (c, cbar); ``cbar`` lives on every facet."""

    def __init__(self, mesh: Mesh, k_c: int):
        if k_c < 0:
            raise ValueError("transport degree must be non-negative")
        self.k = k_c
        ne, nf = mesh.num_elements, mesh.num_facets
        self.nb = triangle_dim(k_c)
        self.nbf = k_c + 1
        self.c = np.arange(ne * self.nb).reshape(ne, self.nb)
        self.cbar = ne * self.nb + np.arange(nf * self.nbf).reshape(nf, self.nbf)
        self.ndofs = ne * self.nb + nf * self.nbf
        self.n_elem_dofs = ne * self.nb


# ---------------------------------------------------------------------------
# projections and interpolation


def _subdomain_at(mesh: Mesh, elements, shape):
    return np.broadcast_to(mesh.subdomain[elements].reshape(np.shape(elements) + (1,) * (len(shape) - np.ndim(elements))), shape)


def l2_project_elements(f, mesh: Mesh, degree: int, quad_degree: int | None = None) -> np.ndarray:
    """L2 projection of ``f(x, sub)`` onto P_degree on every element, ``(ne, nb)``.

    ``f`` may return scalars ``(...)`` or vectors ``(..., m)``; vector output
    gives ``(ne, m, nb)`` (component-major).
    """
    basis = TriangleBasis(degree)
    rule = triangle_quadrature(quad_degree if quad_degree is not None else 2 * degree + 4)
    ne = mesh.num_elements
    x = mesh.to_physical(rule.points[None], np.arange(ne)[:, None])
    sub = np.broadcast_to(mesh.subdomain[:, None], x.shape[:-1])
    vals = np.asarray(f(x, sub), dtype=float)
    phi = basis.eval(rule.points)
    # element mass matrix is det * I, so coefficients are reference moments
    if vals.ndim == 2:
        return np.einsum("eq,q,qb->eb", vals, rule.weights, phi)
    return np.einsum("eqm,q,qb->emb", vals, rule.weights, phi)


def l2_project_element(f, mesh: Mesh, element: int, degree: int, quad_degree: int | None = None) -> np.ndarray:
    """L2 projection of ``f(x, sub)`` onto P_degree on a single element."""
    basis = TriangleBasis(degree)
    rule = triangle_quadrature(quad_degree if quad_degree is not None else 2 * degree + 4)
    x = mesh.to_physical(rule.points, np.full(len(rule.points), element))
    sub = np.full(len(rule.points), mesh.subdomain[element])
    vals = np.asarray(f(x, sub), dtype=float)
    phi = basis.eval(rule.points)
    mass = mesh.det[element] * phi.T @ (rule.weights[:, None] * phi)
    rhs = mesh.det[element] * phi.T @ (rule.weights * vals)
    return np.linalg.solve(mass, rhs)


def l2_project_facets(f, mesh: Mesh, facets: np.ndarray, degree: int, side: int | None = None,
                      quad_degree: int | None = None) -> np.ndarray:
    """L2 projection of ``f(x, sub)`` onto P_degree on each facet, ``(nf, nb)``.

    ``side`` selects the subdomain passed to ``f``; by default the subdomain
    of the facet's first element is used.
    """
    facets = np.asarray(facets, dtype=np.int64)
    x, w, t = facet_points(mesh, facets, quad_degree if quad_degree is not None else 2 * degree + 4)
    if side is None:
        sub = np.broadcast_to(mesh.subdomain[mesh.facet_elements[facets, 0]][:, None], x.shape[:-1])
    else:
        sub = np.full(x.shape[:-1], side)
    vals = np.asarray(f(x, sub), dtype=float)
    psi = EdgeBasis(degree).eval(t)
    wr = w / mesh.facet_length[facets][:, None]
    if vals.ndim == 2:
        return np.einsum("fq,fq,qb->fb", vals, wr, psi)
    return np.einsum("fqm,fq,qb->fmb", vals, wr, psi)


def evaluate_elements(coef: np.ndarray, basis: TriangleBasis, ref: np.ndarray) -> np.ndarray:
    """Evaluate element polynomials ``coef (ne, [m,] nb)`` at reference points ``ref (ne, ..., 2)``."""
    phi = basis.eval(ref)
    if coef.ndim == 2:
        extra = phi.ndim - 2
        return np.einsum("e...b,eb->e...", phi, coef) if extra else np.einsum("eb,eb->e", phi, coef)
    return np.einsum("e...b,emb->e...m", phi, coef)


def velocity_coefficients(x: np.ndarray, dofs: FlowDofMap, ne: int) -> np.ndarray:
    """Element velocity coefficients ``(ne, 2, nb)`` from a flow vector."""
    return x[dofs.u].reshape(ne, 2, dofs.nb)


def bdm_interpolate(u, mesh: Mesh, k: int, quad_degree: int | None = None) -> np.ndarray:
    """BDM interpolant of ``u(x, sub)`` into [P_k]^2, returns ``(ne, 2, nb)``.

    Per element the interpolant matches the normal moments against P_k on
    each facet, the moments against gradients of P_{k-1}, and the moments
    against curls of bubble * P_{k-2}.
    """
    if k < 1:
        raise ValueError("BDM interpolation needs k >= 1")
    qd = quad_degree if quad_degree is not None else 2 * k + 4
    basis = TriangleBasis(k)
    ne = mesh.num_elements
    nb = basis.dim
    tab = ElementTab(mesh, basis, qd)
    ftab = FacetTab(mesh, basis, qd)
    psi = EdgeBasis(k).eval(ftab.t)

    # vector basis values: component-major, (.., 2nb, 2)
    def vec(phi):
        out = np.zeros(phi.shape[:-1] + (2 * nb, 2))
        out[..., :nb, 0] = phi
        out[..., nb:, 1] = phi
        return out

    sub_v = np.broadcast_to(mesh.subdomain[:, None], tab.x.shape[:-1])
    sub_f = np.broadcast_to(mesh.subdomain[:, None, None], ftab.x.shape[:-1])
    uv = np.asarray(u(tab.x, sub_v), dtype=float)
    uf = np.asarray(u(ftab.x, sub_f), dtype=float)

    rows_M, rows_b = [], []
    # facet normal moments
    Vf = vec(ftab.phi)
    vn = np.einsum("elqir,elr->elqi", Vf, ftab.normal)
    un = np.einsum("elqr,elr->elq", uf, ftab.normal)
    rows_M.append(np.einsum("elq,qm,elqi->elmi", ftab.w, psi, vn).reshape(ne, -1, 2 * nb))
    rows_b.append(np.einsum("elq,qm,elq->elm", ftab.w, psi, un).reshape(ne, -1))
    Vv = vec(tab.phi)
    # gradients of P_{k-1} without constants
    ng = triangle_dim(k - 1)
    if ng > 1:
        gq = tab.dphi[:, :, 1:ng, :]
        rows_M.append(np.einsum("eq,eqmr,qir->emi", tab.w, gq, Vv))
        rows_b.append(np.einsum("eq,eqmr,eqr->em", tab.w, gq, uv))
    # curls of bubble * P_{k-2}
    if k >= 2:
        nc = triangle_dim(k - 2)
        xi, eta = tab.ref[:, 0], tab.ref[:, 1]
        lam = np.stack([1.0 - xi - eta, xi, eta])
        bub = lam[0] * lam[1] * lam[2]
        dbub_ref = np.stack([
            -lam[1] * lam[2] + lam[0] * lam[2],
            -lam[1] * lam[2] + lam[0] * lam[1],
        ], axis=-1)
        ginv = np.linalg.inv(mesh.jacobians)
        dbub = np.einsum("qr,ers->eqs", dbub_ref, ginv)
        q = tab.phi[:, :nc]
        dq = tab.dphi[:, :, :nc, :]
        grad = q[None, :, :, None] * dbub[:, :, None, :] + bub[None, :, None, None] * dq
        curl = np.stack([grad[..., 1], -grad[..., 0]], axis=-1)
        rows_M.append(np.einsum("eq,eqmr,qir->emi", tab.w, curl, Vv))
        rows_b.append(np.einsum("eq,eqmr,eqr->em", tab.w, curl, uv))
    M = np.concatenate(rows_M, axis=1)
    b = np.concatenate(rows_b, axis=1)
    if M.shape[1] != 2 * nb:
        raise RuntimeError("BDM moment count does not match the local dimension")
    cond = np.linalg.cond(M)
    if not np.all(np.isfinite(cond)) or np.max(cond) > 1e12:
        raise np.linalg.LinAlgError("rank-deficient BDM moment system (degenerate element?)")
    coef = np.linalg.solve(M, b[..., None])[..., 0]
    return coef.reshape(ne, 2, nb)


def interpolate_vbar(u, mesh: Mesh, k: int, bdm_coef: np.ndarray | None = None,
                     quad_degree: int | None = None) -> np.ndarray:
    """Trace interpolant on Stokes facets, ``(n_stokes_facets, 2, k+1)``.

    L2 projection of the Stokes-side ``u`` on facets off the interface, the
    trace of the Stokes-side BDM interpolant on interface facets.
    """
    facets = mesh.facets_of_kind(*STOKES_FACETS)
    out = l2_project_facets(u, mesh, facets, k, side=STOKES, quad_degree=quad_degree)
    if bdm_coef is None:
        bdm_coef = bdm_interpolate(u, mesh, k, quad_degree)
    on_gamma = mesh.facet_kind[facets] == INTERFACE
    fi = facets[on_gamma]
    if len(fi):
        x, w, t = facet_points(mesh, fi, 2 * k + 2)
        es = mesh.facet_elements[fi, 0]
        ref = mesh.to_reference(x, np.broadcast_to(es[:, None], x.shape[:-1]))
        basis = TriangleBasis(k)
        vals = np.einsum("fqb,fmb->fqm", basis.eval(ref), bdm_coef[es])
        psi = EdgeBasis(k).eval(t)
        wr = w / mesh.facet_length[fi][:, None]
        out[on_gamma] = np.einsum("fqm,fq,qb->fmb", vals, wr, psi)
    return out


__all__ = [
    "QuadRule", "triangle_quadrature", "edge_quadrature", "TriangleBasis", "EdgeBasis",
    "ElementTab", "FacetTab", "FlowDofMap", "TransportDofMap", "l2_project_elements",
    "l2_project_element", "l2_project_facets", "bdm_interpolate", "interpolate_vbar",
    "facet_points", "evaluate_elements", "DARCY_FACETS", "STOKES_FACETS",
]
