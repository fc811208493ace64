"""Non-conforming FE domain decomposition with spectral interface multipliers.

Subdomain discretizations are coupled weakly: trace continuity across
each interface is enforced by a small set of Lagrange multipliers spanned
by low-frequency Fourier functions of the interface arc length, assembled
into a global saddle-point system.
"""

from .fem import (DirichletSet, FunctionSpace, apply_dirichlet,
                  assemble_load, assemble_mass, assemble_ns_blocks,
                  assemble_stiffness, reference_basis_eval)
from .infsup import InfSupProblem, beta_estimate, build_surrogate
from .mesh import (Mesh, MeshFamilySpec, interface_edge_partition,
                   ns_mesh_family, poisson_mesh_pair, structured_rect_mesh)
from .multiplier import (CouplingMatrix, FourierBasis, OrthoMap, apply_ortho,
                         assemble_coupling, build_ortho_map, fourier_eval)
from .saddle import (InterfaceSpec, PartitionGraph, SaddleSystem,
                     SolutionField, Subdomain, build_saddle,
                     condition_estimate, solve)

__version__ = "0.1.0"
