"""Triangle-mesh machinery: face sampling, interaction-point detection,
adjacency maps and vertex-clustering simplification."""
from __future__ import annotations

import numpy as np

from .types import InteractionPointSet, Neighborhood, TriMesh, concat_meshes


def sample_face_points(mesh: TriMesh, samples_per_face: int, seed: int,
                       mode: str = "uniform"):
    """Sample points on every triangle, face-major order.

    mode "uniform" draws seeded uniform barycentric samples; "centroid"
    (samples_per_face must be 1) places the sample at the triangle centroid.
    Returns (points, face_ids).
    """
    if samples_per_face < 1:
        raise ValueError("samples_per_face must be >= 1")
    if (mesh.face_areas() <= 0.0).any():
        raise ValueError("zero-area face")
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    f = mesh.num_faces
    if mode == "centroid":
        if samples_per_face != 1:
            raise ValueError("centroid mode samples exactly one point per face")
        pts = (a + b + c) / 3.0
        return pts, np.arange(f, dtype=np.int64)
    if mode != "uniform":
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(seed)
    u = rng.random((f, samples_per_face))
    v = rng.random((f, samples_per_face))
    flip = u + v > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    pts = (a[:, None, :] + u[..., None] * (b - a)[:, None, :]
           + v[..., None] * (c - a)[:, None, :])
    face_ids = np.repeat(np.arange(f, dtype=np.int64), samples_per_face)
    return pts.reshape(-1, 3), face_ids


def find_interaction_points(meshes, samples_per_face: int, threshold: float,
                            seed: int, mode: str = "uniform") -> InteractionPointSet:
    """Detect cross-object proximity between mesh faces via sampled points.

    All sample pairs on faces of different objects with distance <= threshold
    become interaction-point pairs, recorded in both directions. Accepts a
    single multi-object TriMesh or a sequence of meshes.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    mesh = meshes if isinstance(meshes, TriMesh) else concat_meshes(meshes)
    samples, face_ids = sample_face_points(mesh, samples_per_face, seed, mode=mode)
    sample_obj = mesh.face_object_ids()[face_ids]

    t2 = float(threshold) ** 2
    pair_rows = []
    obj_ids = np.unique(sample_obj)
    for ia, oa in enumerate(obj_ids):
        rows_a = np.flatnonzero(sample_obj == oa)
        for ob in obj_ids[ia + 1:]:
            rows_b = np.flatnonzero(sample_obj == ob)
            diff = samples[rows_a][:, None, :] - samples[rows_b][None, :, :]
            d2 = np.einsum("abd,abd->ab", diff, diff)
            ai, bi = np.nonzero(d2 <= t2)
            if len(ai):
                pair_rows.append(np.stack([rows_a[ai], rows_b[bi]], axis=1))

    if not pair_rows:
        empty = np.empty((0, 3))
        zero = np.empty(0, dtype=np.int64)
        return InteractionPointSet(empty, zero, zero, np.empty((0, 2), dtype=np.int64))

    undirected = np.concatenate(pair_rows)
    participating = np.unique(undirected)
    row_of = np.full(len(samples), -1, dtype=np.int64)
    row_of[participating] = np.arange(len(participating))
    directed = np.concatenate([row_of[undirected], row_of[undirected[:, ::-1]]])
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    return InteractionPointSet(
        samples[participating],
        face_ids[participating],
        sample_obj[participating],
        directed[order],
    )


def mesh_vertex_neighborhood(mesh: TriMesh) -> Neighborhood:
    """Vertices sharing an edge with each vertex, ascending, self excluded."""
    t = mesh.triangles
    src = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    dst = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0) if len(t) else np.empty((0, 2), np.int64)
    counts = np.bincount(pairs[:, 0], minlength=mesh.num_vertices) if len(pairs) else \
        np.zeros(mesh.num_vertices, dtype=np.int64)
    offsets = np.zeros(mesh.num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Neighborhood(offsets, pairs[:, 1] if len(pairs) else np.empty(0, np.int64),
                        mesh.num_vertices)


def faces_incident_to_vertex(mesh: TriMesh) -> Neighborhood:
    """Per-vertex list of face indices using that vertex, ascending."""
    t = mesh.triangles
    verts = t.reshape(-1)
    faces = np.repeat(np.arange(mesh.num_faces, dtype=np.int64), 3)
    order = np.lexsort((faces, verts))
    counts = np.bincount(verts, minlength=mesh.num_vertices)
    offsets = np.zeros(mesh.num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Neighborhood(offsets, faces[order], mesh.num_faces)


def simplify_vertex_clustering(mesh: TriMesh, voxel: float) -> TriMesh:
    """Merge vertices sharing a voxel cell (never across objects) to their
    centroid; triangles left without three distinct corners are dropped.

    Raises if any object that had faces ends up with none.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    cells = np.floor(mesh.vertices / voxel).astype(np.int64)
    key = np.concatenate([cells, mesh.object_ids[:, None]], axis=1)
    _, cluster_of, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    n_clusters = len(counts)

    new_verts = np.zeros((n_clusters, 3))
    np.add.at(new_verts, cluster_of, mesh.vertices)
    new_verts /= counts[:, None]
    new_ids = np.zeros(n_clusters, dtype=np.int64)
    new_ids[cluster_of] = mesh.object_ids

    tri = cluster_of[mesh.triangles]
    distinct = ((tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2])
                & (tri[:, 0] != tri[:, 2]))
    tri = tri[distinct]
    if len(tri):
        a, b, c = new_verts[tri[:, 0]], new_verts[tri[:, 1]], new_verts[tri[:, 2]]
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
        tri = tri[area2 > 1e-12]
    if len(tri):
        # drop duplicated faces regardless of winding
        canon = np.sort(tri, axis=1)
        _, keep = np.unique(canon, axis=0, return_index=True)
        tri = tri[np.sort(keep)]

    had_faces = np.unique(mesh.face_object_ids())
    have_faces = np.unique(new_ids[tri[:, 0]]) if len(tri) else np.empty(0, np.int64)
    lost = np.setdiff1d(had_faces, have_faces)
    if len(lost):
        raise ValueError(f"object collapsed: {lost.tolist()}")
    return TriMesh(new_verts, tri, new_ids)
