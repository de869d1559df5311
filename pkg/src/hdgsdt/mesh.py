"""Structured triangulations of the unit square split into a Stokes part
(x2 > 0.5) and a Darcy part (x2 < 0.5).

Local edge ``l`` of a triangle is the edge opposite local vertex ``l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STOKES = 0
DARCY = 1

INTERIOR_S = "interior_s"
INTERIOR_D = "interior_d"
INTERFACE = "interface"
GAMMA_S1 = "gamma_s1"  # x1 = 0, Stokes side
GAMMA_S2 = "gamma_s2"  # x1 = 1, Stokes side
GAMMA_S3 = "gamma_s3"  # x2 = 1
GAMMA_D1 = "gamma_d1"  # x1 = 0 or x1 = 1, Darcy side
GAMMA_D2 = "gamma_d2"  # x2 = 0

FACET_KINDS = (INTERIOR_S, INTERIOR_D, INTERFACE, GAMMA_S1, GAMMA_S2, GAMMA_S3, GAMMA_D1, GAMMA_D2)
STOKES_BOUNDARY = (GAMMA_S1, GAMMA_S2, GAMMA_S3)
DARCY_BOUNDARY = (GAMMA_D1, GAMMA_D2)
BOUNDARY_KINDS = STOKES_BOUNDARY + DARCY_BOUNDARY
# facets carrying Stokes traces (F^s) and Darcy traces (F^d)
STOKES_FACETS = (INTERIOR_S, INTERFACE) + STOKES_BOUNDARY
DARCY_FACETS = (INTERIOR_D, INTERFACE) + DARCY_BOUNDARY

INTERFACE_HEIGHT = 0.5
_COORD_TOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh parameters or broken mesh topology."""


@dataclass(frozen=True)
class Facet:
    vertices: tuple[int, int]
    elements: tuple[int, ...]
    kind: str
    normal: np.ndarray
    tangent: np.ndarray


@dataclass(frozen=True)
class ElementGeometry:
    jacobian: np.ndarray  # x = jacobian @ xi + origin
    origin: np.ndarray
    det: float
    diameter: float
    normals: np.ndarray  # (3, 2) outward normal of each local edge


class Mesh:
    """Immutable conforming triangulation with facet topology.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (ne, 3) int array, counter-clockwise
    subdomain : (ne,) int array, ``STOKES`` or ``DARCY``
    facet_vertices : (nf, 2) int array
    facet_elements : (nf, 2) int array, ``-1`` where absent. For interface
        facets the Stokes element comes first.
    facet_kind : (nf,) str array
    facet_normal : (nf, 2) unit normal, outward from ``facet_elements[:, 0]``
        (on the interface: pointing from the Stokes into the Darcy region)
    element_facets : (ne, 3) facet index of each local edge
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        v = self.vertices[self.triangles]
        self.jacobians = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        self.det = np.linalg.det(self.jacobians)
        if np.any(self.det <= 0.0):
            bad = int(np.argmin(self.det))
            raise MeshError(f"triangle {bad} is degenerate or clockwise (det={self.det[bad]:.3e})")
        self.area = 0.5 * self.det
        edges = np.stack([v[:, 2] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 0]], axis=1)
        edge_len = np.linalg.norm(edges, axis=2)
        self.diameter = edge_len.max(axis=1)
        self.h = float(self.diameter.max())

        centroid_y = v[:, :, 1].mean(axis=1)
        self.subdomain = np.where(centroid_y > INTERFACE_HEIGHT, STOKES, DARCY).astype(np.int64)
        straddle = (v[:, :, 1].max(axis=1) > INTERFACE_HEIGHT + _COORD_TOL) & (
            v[:, :, 1].min(axis=1) < INTERFACE_HEIGHT - _COORD_TOL
        )
        if np.any(straddle):
            raise MeshError("triangles straddle the interface x2 = 0.5")

        self._build_facets()
        self._build_element_normals()
        for name in ("vertices", "triangles", "jacobians", "det", "area", "diameter", "subdomain",
                     "facet_vertices", "facet_elements", "facet_kind", "facet_normal",
                     "facet_tangent", "facet_length", "element_facets", "element_normals",
                     "element_facet_sign"):
            getattr(self, name).setflags(write=False)

    # -- construction -------------------------------------------------------

    def _build_facets(self):
        tri = self.triangles
        ne = len(tri)
        local = np.array([[1, 2], [2, 0], [0, 1]])
        pairs = np.sort(tri[:, local], axis=2).reshape(-1, 2)
        keys, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        nf = len(keys)
        owners = np.full((nf, 2), -1, dtype=np.int64)
        elem_of = np.repeat(np.arange(ne), 3)
        for f, e in zip(inverse, elem_of):
            owners[f, 0 if owners[f, 0] < 0 else 1] = e
        self.element_facets = inverse.reshape(ne, 3)

        xy = self.vertices[keys]
        mid = xy.mean(axis=1)
        length = np.linalg.norm(xy[:, 1] - xy[:, 0], axis=1)
        sub = self.subdomain
        kind = np.empty(nf, dtype="<U10")
        normal = np.zeros((nf, 2))
        on_interface = np.all(np.abs(xy[:, :, 1] - INTERFACE_HEIGHT) < _COORD_TOL, axis=1)
        boundary = owners[:, 1] < 0
        for f in range(nf):
            e0, e1 = owners[f]
            if boundary[f]:
                x, y = mid[f]
                if abs(y) < _COORD_TOL:
                    kind[f] = GAMMA_D2
                elif abs(y - 1.0) < _COORD_TOL:
                    kind[f] = GAMMA_S3
                elif sub[e0] == STOKES:
                    kind[f] = GAMMA_S1 if abs(x) < _COORD_TOL else GAMMA_S2
                else:
                    kind[f] = GAMMA_D1
            elif on_interface[f]:
                kind[f] = INTERFACE
                if sub[e0] != STOKES:
                    owners[f] = owners[f, ::-1]
            else:
                if sub[e0] != sub[e1]:
                    raise MeshError(f"facet {f} separates subdomains but is off the interface")
                kind[f] = INTERIOR_S if sub[e0] == STOKES else INTERIOR_D
            # outward normal of the first owner
            t = (xy[f, 1] - xy[f, 0]) / length[f]
            n = np.array([t[1], -t[0]])
            centroid = self.vertices[tri[owners[f, 0]]].mean(axis=0)
            if np.dot(n, mid[f] - centroid) < 0:
                n = -n
            normal[f] = n
        self.facet_vertices = keys.astype(np.int64)
        self.facet_elements = owners
        self.facet_kind = kind
        self.facet_normal = normal
        self.facet_tangent = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
        self.facet_length = length

    def _build_element_normals(self):
        ef = self.element_facets
        first = self.facet_elements[ef, 0] == np.arange(len(ef))[:, None]
        self.element_facet_sign = np.where(first, 1.0, -1.0)
        self.element_normals = self.facet_normal[ef] * self.element_facet_sign[:, :, None]

    # -- queries ------------------------------------------------------------

    @property
    def num_elements(self) -> int:
        return len(self.triangles)

    @property
    def num_facets(self) -> int:
        return len(self.facet_vertices)

    @property
    def facets(self) -> list[Facet]:
        out = []
        for f in range(self.num_facets):
            els = tuple(int(e) for e in self.facet_elements[f] if e >= 0)
            out.append(Facet(tuple(int(v) for v in self.facet_vertices[f]), els,
                             str(self.facet_kind[f]), self.facet_normal[f].copy(),
                             self.facet_tangent[f].copy()))
        return out

    def facets_of_kind(self, *kinds: str) -> np.ndarray:
        return np.flatnonzero(np.isin(self.facet_kind, kinds))

    def element_geometry(self, k: int) -> ElementGeometry:
        if not 0 <= k < self.num_elements:
            raise IndexError(f"element index {k} out of range")
        return ElementGeometry(self.jacobians[k].copy(), self.vertices[self.triangles[k, 0]].copy(),
                               float(self.det[k]), float(self.diameter[k]),
                               self.element_normals[k].copy())

    def to_reference(self, points: np.ndarray, elements: np.ndarray) -> np.ndarray:
        """Map physical ``points[..., 2]`` in ``elements[...]`` to reference coordinates."""
        origin = self.vertices[self.triangles[elements, 0]]
        inv = np.linalg.inv(self.jacobians[elements])
        return np.einsum("...ij,...j->...i", inv, points - origin)

    def to_physical(self, ref: np.ndarray, elements: np.ndarray) -> np.ndarray:
        origin = self.vertices[self.triangles[elements, 0]]
        return np.einsum("...ij,...j->...i", self.jacobians[elements], ref) + origin

    def summary(self) -> dict:
        counts = {kind: int(np.sum(self.facet_kind == kind)) for kind in FACET_KINDS}
        return {
            "vertices": len(self.vertices),
            "triangles": self.num_elements,
            "stokes_triangles": int(np.sum(self.subdomain == STOKES)),
            "darcy_triangles": int(np.sum(self.subdomain == DARCY)),
            "facets": self.num_facets,
            "h": self.h,
            **counts,
        }


def build_structured_mesh(n: int) -> Mesh:
    """Uniform ``n x n`` grid of squares, each cut along its SW-NE diagonal.

    ``n`` must be even so that x2 = 0.5 is a mesh line.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 2:
        raise MeshError(f"subdivision count must be an integer >= 2, got {n!r}")
    if n % 2:
        raise MeshError(f"subdivision count must be even so the interface x2=0.5 is a mesh line, got {n}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles)
