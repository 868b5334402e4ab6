"""Core spatial data containers shared across the package."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_f64(a, shape_tail=None) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if shape_tail is not None and out.shape[1:] != shape_tail:
        raise ValueError(f"expected trailing shape {shape_tail}, got {out.shape}")
    return out


@dataclass
class PointCloudFrame:
    """One observation: point positions with a short velocity history.

    velocities[:, 0] is the most recent per-frame displacement v(t) =
    p(t) - p(t-1); velocities[:, j] goes j frames further back.
    """

    positions: np.ndarray       # (n, 3)
    velocities: np.ndarray      # (n, h, 3), most recent first
    object_ids: np.ndarray      # (n,) int
    frame_index: int = 0

    def __post_init__(self):
        self.positions = _as_f64(self.positions, (3,))
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.velocities.ndim == 2:
            self.velocities = self.velocities[:, None, :]
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64)
        n = len(self.positions)
        if len(self.velocities) != n or len(self.object_ids) != n:
            raise ValueError("positions, velocities and object_ids must have equal length")
        if self.velocities.shape[2] != 3:
            raise ValueError("velocities must be (n, h, 3)")
        if n and self.object_ids.min() < 0:
            raise ValueError("object_ids must be non-negative")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.velocities).all()):
            raise ValueError("non-finite coordinates in frame")

    @property
    def num_points(self) -> int:
        return len(self.positions)

    @property
    def history(self) -> int:
        return self.velocities.shape[1]

    @property
    def num_objects(self) -> int:
        return int(self.object_ids.max()) + 1 if len(self.object_ids) else 0


@dataclass
class TriMesh:
    """Triangle mesh whose vertices carry per-object labels.

    All three corners of a triangle must belong to one object, and no
    triangle may have zero area.
    """

    vertices: np.ndarray    # (v, 3)
    triangles: np.ndarray   # (f, 3) int
    object_ids: np.ndarray  # (v,) int

    def __post_init__(self):
        self.vertices = _as_f64(self.vertices, (3,))
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64)
        v = len(self.vertices)
        if len(self.object_ids) != v:
            raise ValueError("object_ids must be per-vertex")
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= v:
                raise ValueError("triangle index out of range")
            corner_ids = self.object_ids[self.triangles]
            if not (corner_ids == corner_ids[:, :1]).all():
                raise ValueError("triangle spans multiple objects")
            if (self.face_areas() <= 0.0).any():
                raise ValueError("degenerate (zero-area) triangle")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.triangles)

    def face_object_ids(self) -> np.ndarray:
        return self.object_ids[self.triangles[:, 0]]

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, rotation: np.ndarray | None, translation: np.ndarray) -> "TriMesh":
        verts = self.vertices if rotation is None else self.vertices @ np.asarray(rotation).T
        return TriMesh(verts + np.asarray(translation, dtype=np.float64),
                       self.triangles, self.object_ids)


def concat_meshes(meshes) -> TriMesh:
    """Stack meshes into one, offsetting vertex indices (object ids kept as-is)."""
    verts, tris, ids, base = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        ids.append(m.object_ids)
        base += m.num_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(ids))


@dataclass
class Neighborhood:
    """Variable-size query->neighbor lists in CSR layout.

    offsets has query_count + 1 entries; neighbors of query q are
    neighbor_indices[offsets[q]:offsets[q + 1]].
    """

    offsets: np.ndarray           # (q + 1,) int
    neighbor_indices: np.ndarray  # (m_total,) int
    source_count: int

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.neighbor_indices = np.asarray(self.neighbor_indices, dtype=np.int64)
        if len(self.offsets) == 0 or self.offsets[0] != 0 or (np.diff(self.offsets) < 0).any():
            raise ValueError("offsets must start at 0 and be monotone non-decreasing")
        if self.offsets[-1] != len(self.neighbor_indices):
            raise ValueError("offsets inconsistent with flat index list")
        if len(self.neighbor_indices) and (
            self.neighbor_indices.min() < 0 or self.neighbor_indices.max() >= self.source_count
        ):
            raise ValueError("neighbor index out of range")

    @property
    def query_count(self) -> int:
        return len(self.offsets) - 1

    @property
    def total(self) -> int:
        return len(self.neighbor_indices)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def segment_ids(self) -> np.ndarray:
        """Query id of each flat entry, shape (m_total,)."""
        return np.repeat(np.arange(self.query_count), self.counts)

    def entry(self, q: int) -> np.ndarray:
        return self.neighbor_indices[self.offsets[q]:self.offsets[q + 1]]

    @staticmethod
    def from_lists(lists, source_count: int) -> "Neighborhood":
        offsets = np.zeros(len(lists) + 1, dtype=np.int64)
        np.cumsum([len(l) for l in lists], out=offsets[1:])
        flat = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists]) if lists else np.empty(0, np.int64)
        if not len(flat):
            flat = np.empty(0, dtype=np.int64)
        return Neighborhood(offsets, flat, source_count)


@dataclass
class InteractionPointSet:
    """Face-sampled points where two objects come close, with directed pair links.

    points holds each participating sample once; pairs[i] = (s, r) links
    the sender row s to the receiver row r. Every qualifying sample pair
    is recorded in both directions.
    """

    points: np.ndarray        # (q, 3)
    face: np.ndarray          # (q,) face index into the source mesh
    point_object: np.ndarray  # (q,) object id of the face
    pairs: np.ndarray         # (p, 2) int rows into points

    def __post_init__(self):
        self.points = _as_f64(self.points, (3,))
        self.face = np.asarray(self.face, dtype=np.int64)
        self.point_object = np.asarray(self.point_object, dtype=np.int64)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def sender_points(self) -> np.ndarray:
        return self.points[self.pairs[:, 0]]

    @property
    def receiver_points(self) -> np.ndarray:
        return self.points[self.pairs[:, 1]]

    @property
    def sender_face(self) -> np.ndarray:
        return self.face[self.pairs[:, 0]]

    @property
    def receiver_face(self) -> np.ndarray:
        return self.face[self.pairs[:, 1]]

    def sender_rows(self) -> np.ndarray:
        """Rows of points that act as a sender in at least one pair."""
        return np.unique(self.pairs[:, 0])

    def receiver_rows(self) -> np.ndarray:
        return np.unique(self.pairs[:, 1])


@dataclass(frozen=True)
class VoxelSchedule:
    """Voxel sizes and relational-search radii for the resolution ladder.

    level_voxels has one entry per downsampling step; level_radii has one
    entry per level including the full-resolution one (len(level_voxels)+1).
    """

    base_voxel: float = 0.05
    level_voxels: tuple = (0.075, 0.1125, 0.16875)
    level_radii: tuple = (0.1, 0.15, 0.225, 0.3375)

    def __post_init__(self):
        object.__setattr__(self, "level_voxels", tuple(float(v) for v in self.level_voxels))
        object.__setattr__(self, "level_radii", tuple(float(r) for r in self.level_radii))
        if self.base_voxel <= 0 or any(v <= 0 for v in self.level_voxels):
            raise ValueError("voxel sizes must be positive")
        if any(b >= a for a, b in zip(self.level_voxels[1:], self.level_voxels)):
            raise ValueError("level_voxels must be strictly increasing")
        if any(r <= 0 for r in self.level_radii):
            raise ValueError("level_radii must be positive")
        if len(self.level_radii) != len(self.level_voxels) + 1:
            raise ValueError("need one radius per level (downsampling levels + 1)")

    def truncated(self, num_levels: int) -> "VoxelSchedule":
        """Schedule restricted to the first num_levels downsampling steps."""
        if num_levels > len(self.level_voxels):
            raise ValueError("schedule has too few levels")
        return VoxelSchedule(self.base_voxel,
                             self.level_voxels[:num_levels],
                             self.level_radii[:num_levels + 1])

    def scaled(self, factor: float) -> "VoxelSchedule":
        return VoxelSchedule(self.base_voxel * factor,
                             tuple(v * factor for v in self.level_voxels),
                             tuple(r * factor for r in self.level_radii))
