from .core import (
    Anchor,
    LandmarkGraph,
    LandmarkSpec,
    Mesh,
    default_landmark_graph,
    extract_from_vertices,
    extract_landmarks,
    landmark_graph_for,
)
from .io import load_mesh, save_mesh
from .operators import (
    SurfaceOperators,
    build_operators,
    cached_operators,
    compute_vertex_normals,
    heat_diffuse,
    mean_edge_length,
    subdivide,
)

__all__ = [
    "Anchor", "LandmarkGraph", "LandmarkSpec", "Mesh", "SurfaceOperators",
    "build_operators", "cached_operators", "compute_vertex_normals", "default_landmark_graph",
    "extract_from_vertices", "extract_landmarks", "heat_diffuse", "landmark_graph_for",
    "load_mesh", "mean_edge_length", "save_mesh", "subdivide",
]
