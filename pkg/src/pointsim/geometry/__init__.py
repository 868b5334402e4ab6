from .types import (
    InteractionPointSet,
    Neighborhood,
    PointCloudFrame,
    TriMesh,
    VoxelSchedule,
    concat_meshes,
)
from .search import (
    grid_downsample,
    knn_cross_object,
    knn_points,
    knn_same_object,
)
from .mesh import (
    faces_incident_to_vertex,
    find_interaction_points,
    mesh_vertex_neighborhood,
    sample_face_points,
    simplify_vertex_clustering,
)

__all__ = [
    "InteractionPointSet",
    "Neighborhood",
    "PointCloudFrame",
    "TriMesh",
    "VoxelSchedule",
    "concat_meshes",
    "grid_downsample",
    "knn_cross_object",
    "knn_points",
    "knn_same_object",
    "faces_incident_to_vertex",
    "find_interaction_points",
    "mesh_vertex_neighborhood",
    "sample_face_points",
    "simplify_vertex_clustering",
]
