"""Legacy ASCII VTK output.

High-order fields are resampled on a lattice of ``s x s`` linear
sub-triangles per element, with points duplicated per element so
discontinuities between elements are kept. The resampling is lossy: values
between lattice points are linear interpolants.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from hdgsdt.fem import TriangleBasis
from hdgsdt.mesh import DARCY, Mesh

VTK_TRIANGLE = 5


def reference_lattice(s: int):
    """Lattice points and sub-triangles of the reference triangle split ``s`` times per edge."""
    if s < 1:
        raise ValueError("lattice subdivision must be >= 1")
    index = {}
    pts = []
    for j in range(s + 1):
        for i in range(s + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / s, j / s))
    tris = []
    for j in range(s):
        for i in range(s - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j + 1 < s:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)


def _fmt(a: np.ndarray) -> str:
    a = np.atleast_2d(a)
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in a)


class LatticeWriter:
    """Writes per-element lattice samples of one mesh to legacy VTK files."""

    def __init__(self, mesh: Mesh, samples: int):
        self.mesh = mesh
        self.samples = samples
        self.ref, tris = reference_lattice(samples)
        ne, npl = mesh.num_elements, len(self.ref)
        self.points = mesh.to_physical(np.broadcast_to(self.ref, (ne, npl, 2)),
                                       np.repeat(np.arange(ne), npl).reshape(ne, npl))
        self.cells = (tris[None, :, :] + npl * np.arange(ne)[:, None, None]).reshape(-1, 3)
        self.cell_element = np.repeat(np.arange(ne), len(tris))

    def write(self, path, title: str, point_scalars=None, point_vectors=None, cell_scalars=None):
        """Fields are given as ``{name: array}``; point arrays have shape
        ``(ne, lattice points[, 2])``, cell arrays one value per element."""
        path = Path(path)
        pts = self.points.reshape(-1, 2)
        lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
                 "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double",
                 _fmt(np.column_stack([pts, np.zeros(len(pts))])),
                 f"CELLS {len(self.cells)} {4 * len(self.cells)}",
                 "\n".join(f"3 {a} {b} {c}" for a, b, c in self.cells),
                 f"CELL_TYPES {len(self.cells)}",
                 "\n".join([str(VTK_TRIANGLE)] * len(self.cells))]
        if cell_scalars:
            lines.append(f"CELL_DATA {len(self.cells)}")
            for name, vals in cell_scalars.items():
                vals = np.asarray(vals)
                kind = "int" if np.issubdtype(vals.dtype, np.integer) else "double"
                lines += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
                per_cell = vals[self.cell_element]
                lines.append("\n".join(str(int(v)) if kind == "int" else repr(float(v)) for v in per_cell))
        if point_scalars or point_vectors:
            lines.append(f"POINT_DATA {len(pts)}")
            for name, vals in (point_scalars or {}).items():
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default",
                          "\n".join(repr(float(v)) for v in np.asarray(vals).ravel())]
            for name, vals in (point_vectors or {}).items():
                v = np.asarray(vals).reshape(-1, 2)
                lines += [f"VECTORS {name} double", _fmt(np.column_stack([v, np.zeros(len(v))]))]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        return path


def _darcy_kappa(mesh, problem, points):
    # the permeability only has meaning in the porous region; written as 0 elsewhere
    kappa = problem.kappa_tensor(points)[..., 0, 0]
    return np.where((mesh.subdomain == DARCY)[:, None], kappa, 0.0)


def write_snapshot(path, sim, flow, conc, samples: int | None = None, title: str | None = None) -> Path:
    """c_h, u_h, p_h and permeability at lattice points; pressure mean and
    subdomain tag per cell."""
    mesh = sim.mesh
    s = samples or max(sim.flow.k, sim.transport.k, 1)
    w = LatticeWriter(mesh, s)
    ub = TriangleBasis(sim.flow.k).eval(w.ref)
    cb = TriangleBasis(sim.transport.k).eval(w.ref)
    npb = flow.p.shape[1]
    c = conc.c @ cb.T
    u = np.einsum("qb,ecb->eqc", ub, flow.u)
    p = flow.p @ ub[:, :npb].T
    kappa = _darcy_kappa(mesh, sim.problem, w.points)
    p_mean = flow.p[:, 0] * np.sqrt(2.0)
    return w.write(path, title or f"t={flow.t!r}",
                   point_scalars={"c_h": c, "p_h": p, "kappa": kappa},
                   point_vectors={"u_h": u},
                   cell_scalars={"p_mean": p_mean, "subdomain": mesh.subdomain.astype(np.int64)})


def write_permeability(path, mesh: Mesh, problem, samples: int = 4) -> Path:
    w = LatticeWriter(mesh, samples)
    kappa = _darcy_kappa(mesh, problem, w.points)
    return w.write(path, "permeability", point_scalars={"kappa": kappa},
                   cell_scalars={"subdomain": mesh.subdomain.astype(np.int64)})


def read_legacy_points(path) -> dict:
    """Minimal reader for files written here (used by tests and tooling)."""
    tokens = Path(path).read_text().split("\n")
    out = {"scalars": {}, "vectors": {}}
    i = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        if line[0] == "POINTS":
            n = int(line[1])
            out["points"] = np.loadtxt(tokens[i + 1:i + 1 + n], ndmin=2)
            i += n
        elif line[0] == "CELLS":
            out["cells"] = int(line[1])
        elif line[0] in ("POINT_DATA", "CELL_DATA"):
            section, size = line[0], int(line[1])
        elif line[0] == "SCALARS":
            vals = np.array(tokens[i + 2:i + 2 + size], dtype=float)
            out["scalars"][(section, line[1])] = vals
            i += 1 + size
        elif line[0] == "VECTORS":
            out["vectors"][line[1]] = np.loadtxt(tokens[i + 1:i + 1 + size], ndmin=2)
            i += size
        i += 1
    return out


__all__ = ["LatticeWriter", "reference_lattice", "write_snapshot", "write_permeability", "read_legacy_points"]
