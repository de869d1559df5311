"""HDG discretization of the coupled Stokes/Darcy flow and transport problem."""

from hdgsdt.mesh import Mesh, build_structured_mesh

__version__ = "0.1.0"

__all__ = ["Mesh", "build_structured_mesh", "__version__"]
