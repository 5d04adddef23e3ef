"""Layered optimal-surface segmentation with learned costs, longitudinal
coupling, warm-started interactive editing, and sub-plate morphometry."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .graph import ConstraintSpec, CostTable, GraphLayout, LogismosGraph, \
    SurfaceSolution, brute_force_solve, build_graph, check_solution, \
    solution_to_meshes
from .mesh import TriMesh, icosphere, read_mesh, write_mesh
from .phantom import PhantomCase, PhantomSpec, generate_longitudinal, \
    generate_mean_meshes, generate_phantom
from .registration import RigidTransform, apply_transform, icp_rigid, \
    two_step_register
from .volume import Volume3D, read_volume, sample_trilinear, write_volume

__all__ = [
    "ConstraintSpec", "CostTable", "GraphLayout", "LogismosGraph",
    "PhantomCase", "PhantomSpec", "PipelineConfig", "RigidTransform",
    "SurfaceSolution", "TriMesh", "Volume3D", "apply_transform",
    "brute_force_solve", "build_graph", "check_solution",
    "generate_longitudinal", "generate_mean_meshes", "generate_phantom",
    "icosphere", "icp_rigid", "read_mesh", "read_volume", "sample_trilinear",
    "solution_to_meshes", "two_step_register", "write_mesh", "write_volume",
]
