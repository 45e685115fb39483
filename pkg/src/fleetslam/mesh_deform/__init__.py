from .trimesh import TriMesh, load_ply, save_ply, simplify_mesh
from .deformation import (
    DeformationGraph,
    DeformationResult,
    LmoConfig,
    build_deformation_graph,
    lmo_gradient,
    lmo_objective,
    lmo_optimize,
)
from .interpolate import interpolate_vertices, interpolation_weights
from .accuracy import icp_align, mesh_accuracy, sample_mesh

__all__ = [
    "TriMesh",
    "load_ply",
    "save_ply",
    "simplify_mesh",
    "DeformationGraph",
    "DeformationResult",
    "LmoConfig",
    "build_deformation_graph",
    "lmo_gradient",
    "lmo_objective",
    "lmo_optimize",
    "interpolate_vertices",
    "interpolation_weights",
    "icp_align",
    "mesh_accuracy",
    "sample_mesh",
]
