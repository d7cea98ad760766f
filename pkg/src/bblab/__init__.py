"""BDM1/P0 discretization, block preconditioners and experiments for the
generalized Biot-Brinkman system on the unit square."""

from .assembly import FeSystem, assemble_rhs, assemble_system
from .mesh import MeshHierarchy, TriMesh, unit_square_mesh
from .parameters import PhysicalParams, derive, single_network, two_network
from .precond import BlockPreconditioner, MgCycleSpec
from .solvers import SolverReport, cg, condition_number, minres
from .spaces import BDM1Space, P0Space, bc_preset

__all__ = [
    "BDM1Space", "BlockPreconditioner", "FeSystem", "MeshHierarchy", "MgCycleSpec", "P0Space",
    "PhysicalParams", "SolverReport", "TriMesh", "assemble_rhs", "assemble_system", "bc_preset",
    "cg", "condition_number", "derive", "minres", "single_network", "two_network",
    "unit_square_mesh",
]
