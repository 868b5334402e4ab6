"""Continuous point convolutions for collision dynamics.

The core operator is the factorized convolution
    y0 = W_l vec(sum_{i in N(p0)} h(p_i - p0) x_i^T)
with h a small MLP on relative offsets. Object convolutions restrict the
neighborhood to same-object points and concatenate a positional embedding
e(p_i - p0) into the features; relational convolutions use radius-filtered
cross-object neighborhoods with mean normalization. Mesh inputs get a
three-stage relational path through face interaction points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, gather_rows, gather_segments, segment_outer_sum
from .geometry import (
    InteractionPointSet,
    Neighborhood,
    TriMesh,
    faces_incident_to_vertex,
    knn_points,
)
from .nn import MLP, Linear


def _offsets_for(queries: np.ndarray, sources: np.ndarray, nbhd: Neighborhood,
                 dtype) -> np.ndarray:
    """Relative positions p_i - p0 for every flat neighborhood entry."""
    q = np.asarray(queries)[nbhd.segment_ids]
    s = np.asarray(sources)[nbhd.neighbor_indices]
    return (s - q).astype(dtype)


def _query_mask(nbhd: Neighborhood, width: int, dtype) -> Tensor:
    """Column mask zeroing rows whose neighborhood is empty."""
    m = (nbhd.counts > 0).astype(dtype)[:, None]
    return Tensor(np.broadcast_to(m, (nbhd.query_count, width)).copy())


class PointConvLayer:
    """One convolution, optionally wrapped with 1x1 projections + residual.

    Core fields follow the factorized operator: weight MLP h (3 -> c_mid),
    linear map wl (c_mid * c_feat -> c_out, no bias), optional positional
    embedding MLP e (3 -> embed_dim) concatenated into the features.
    in_width/out_width, when given, add channel-reducing/restoring 1x1
    projections (each followed by a rectifier) and a residual connection;
    rows with empty neighborhoods are zeroed before the residual is added.
    """

    def __init__(self, c_in: int, c_mid: int, c_out: int, rng: np.random.Generator,
                 name: str, with_embed: bool = False, embed_dim: int = 8,
                 hidden: int = 16, in_width: int | None = None,
                 out_width: int | None = None, residual: bool = True,
                 dtype=np.float64):
        self.c_in, self.c_mid, self.c_out = c_in, c_mid, c_out
        self.embed_dim = embed_dim if with_embed else 0
        self.dtype = dtype
        self.residual = residual
        self.h = MLP([3, hidden, c_mid], rng, f"{name}.h", dtype=dtype)
        self.e = MLP([3, hidden, embed_dim], rng, f"{name}.e", dtype=dtype) if with_embed else None
        self.wl = Linear(c_mid * (c_in + self.embed_dim), c_out, rng, f"{name}.wl",
                         bias=False, dtype=dtype)
        self.in_width = in_width
        self.out_width = out_width
        self.pre = Linear(in_width, c_in, rng, f"{name}.pre", dtype=dtype) if in_width else None
        self.post = Linear(c_out, out_width, rng, f"{name}.post", dtype=dtype) if out_width else None
        need_res_proj = residual and in_width is not None and out_width is not None \
            and in_width != out_width
        self.res_proj = Linear(in_width, out_width, rng, f"{name}.res", dtype=dtype) \
            if need_res_proj else None

    # -- core operator ------------------------------------------------------

    def conv(self, queries: np.ndarray, sources: np.ndarray, features: Tensor,
             nbhd: Neighborhood, normalize: bool = False) -> Tensor:
        """Eq.-level forward; features rows must match sources and width c_in."""
        if features.shape[1] != self.c_in:
            raise ValueError(f"feature width {features.shape[1]} != c_in {self.c_in}")
        if features.shape[0] != len(sources):
            raise ValueError("feature rows must match source count")
        offs = _offsets_for(queries, sources, nbhd, self.dtype)
        x = gather_segments(features, nbhd)
        if self.e is not None:
            x = concat([x, self.e(Tensor(offs))], axis=1)
        h = self.h(Tensor(offs))
        return self.wl(segment_outer_sum(h, x, nbhd, mean=normalize))

    # -- wrapped forward ----------------------------------------------------

    def forward(self, queries: np.ndarray, sources: np.ndarray, features: Tensor,
                nbhd: Neighborhood, normalize: bool = False,
                residual_index: np.ndarray | None = None) -> Tensor:
        """Projection-wrapped convolution with residual.

        residual_index maps each query to the source row whose (projected)
        feature feeds the residual; None means queries == sources.
        """
        u = self.pre(features).relu() if self.pre is not None else features
        y = self.conv(queries, sources, u, nbhd, normalize)
        if self.post is not None:
            y = self.post(y).relu()
        y = y * _query_mask(nbhd, y.shape[1], self.dtype)
        if not self.residual:
            return y
        res = features if residual_index is None else gather_rows(features, residual_index)
        if self.res_proj is not None:
            res = self.res_proj(res)
        return y + res

    def params(self) -> list:
        out = self.h.params() + self.wl.params()
        if self.e is not None:
            out += self.e.params()
        for lin in (self.pre, self.post, self.res_proj):
            if lin is not None:
                out += lin.params()
        return out


def pointconv_forward(layer: PointConvLayer, queries, sources, features: Tensor,
                      nbhd: Neighborhood, normalize: bool = False) -> Tensor:
    """Core factorized convolution (no projections, no residual)."""
    return layer.conv(queries, sources, features, nbhd, normalize)


def object_pointconv(layer: PointConvLayer, positions: np.ndarray,
                     object_ids: np.ndarray, features: Tensor,
                     queries: np.ndarray | None = None,
                     query_object_ids: np.ndarray | None = None,
                     k: int = 16) -> Tensor:
    """Same-object kNN convolution with positional embeddings (sum mode)."""
    if queries is None:
        queries, query_object_ids = positions, object_ids
    nbhd = knn_points(positions, object_ids, queries, query_object_ids, k,
                      same_object=True)
    return layer.conv(queries, positions, features, nbhd, normalize=False)


def relational_pointconv_pc(layer: PointConvLayer, positions: np.ndarray,
                            object_ids: np.ndarray, features: Tensor,
                            queries: np.ndarray | None = None,
                            query_object_ids: np.ndarray | None = None,
                            k: int = 16, r: float = 0.1) -> Tensor:
    """Cross-object radius-filtered kNN convolution, mean-normalized."""
    if queries is None:
        queries, query_object_ids = positions, object_ids
    nbhd = knn_points(positions, object_ids, queries, query_object_ids, k,
                      r=r, same_object=False)
    return layer.conv(queries, positions, features, nbhd, normalize=True)


# -- mesh relational path (face interaction points) --------------------------


def face_vertex_neighborhood(mesh: TriMesh, faces: np.ndarray) -> Neighborhood:
    """Fixed-size neighborhood: the 3 corners of each listed face."""
    indices = mesh.triangles[np.asarray(faces, dtype=np.int64)].reshape(-1)
    offsets = np.arange(len(faces) + 1, dtype=np.int64) * 3
    return Neighborhood(offsets, indices, mesh.num_vertices)


def mesh_sender_features(layer: PointConvLayer, mesh: TriMesh, features: Tensor,
                         ips: InteractionPointSet) -> Tensor:
    """Features of interaction points interpolated from their face's vertices."""
    nbhd = face_vertex_neighborhood(mesh, ips.face)
    return layer.conv(ips.points, mesh.vertices, features, nbhd, normalize=False)


def interaction_point_neighborhood(ips: InteractionPointSet, k: int,
                                   threshold: float) -> Neighborhood:
    """Cross-object interaction points within threshold, up to k per query."""
    return knn_points(ips.points, ips.point_object, ips.points, ips.point_object,
                      k, r=threshold, same_object=False)


def mesh_receiver_features(layer: PointConvLayer, ips: InteractionPointSet,
                           sender_features: Tensor, k: int, threshold: float,
                           nbhd: Neighborhood | None = None) -> Tensor:
    """Receiver-point features from nearby sender interaction points (mean)."""
    if nbhd is None:
        nbhd = interaction_point_neighborhood(ips, k, threshold)
    return layer.conv(ips.points, ips.points, sender_features, nbhd, normalize=True)


def incident_interaction_neighborhood(mesh: TriMesh,
                                      ips: InteractionPointSet) -> Neighborhood:
    """Per-vertex list of interaction points on faces incident to the vertex."""
    incident = faces_incident_to_vertex(mesh)
    order = np.argsort(ips.face, kind="stable")
    faces_sorted = ips.face[order]
    lists = []
    for v in range(mesh.num_vertices):
        rows = []
        for f in incident.entry(v):
            lo = np.searchsorted(faces_sorted, f, side="left")
            hi = np.searchsorted(faces_sorted, f, side="right")
            rows.append(order[lo:hi])
        lists.append(np.concatenate(rows) if rows else np.empty(0, np.int64))
    return Neighborhood.from_lists(lists, ips.num_points)


def mesh_vertex_update(layer: PointConvLayer, mesh: TriMesh,
                       ips: InteractionPointSet, receiver_features: Tensor,
                       nbhd: Neighborhood | None = None) -> Tensor:
    """Average-pooled convolution of incident interaction points onto vertices."""
    if nbhd is None:
        nbhd = incident_interaction_neighborhood(mesh, ips)
    return layer.conv(mesh.vertices, ips.points, receiver_features, nbhd,
                      normalize=True)


class MeshRelationalLayer:
    """Three-stage face-to-face relational convolution, projection-wrapped.

    Stage 1 lifts vertex features onto sender interaction points, stage 2
    exchanges them across objects, stage 3 pools back onto vertices. Stages
    1 and 3 carry positional embeddings. Vertices with no incident
    interaction points pass through on the residual only.
    """

    def __init__(self, width: int, inner: int, rng: np.random.Generator, name: str,
                 k: int = 16, c_mid: int = 4, embed_dim: int = 8, dtype=np.float64):
        self.width, self.inner, self.k = width, inner, k
        self.dtype = dtype
        self.pre = Linear(width, inner, rng, f"{name}.pre", dtype=dtype)
        self.sender = PointConvLayer(inner, c_mid, inner, rng, f"{name}.sender",
                                     with_embed=True, embed_dim=embed_dim, dtype=dtype)
        self.receiver = PointConvLayer(inner, c_mid, inner, rng, f"{name}.receiver",
                                       with_embed=False, dtype=dtype)
        self.vertex = PointConvLayer(inner, c_mid, inner, rng, f"{name}.vertex",
                                     with_embed=True, embed_dim=embed_dim, dtype=dtype)
        self.post = Linear(inner, width, rng, f"{name}.post", dtype=dtype)

    def forward(self, mesh: TriMesh, features: Tensor, ips: InteractionPointSet,
                threshold: float, int_nbhd: Neighborhood | None = None,
                vert_nbhd: Neighborhood | None = None) -> Tensor:
        if ips.num_points == 0:
            return features
        if vert_nbhd is None:
            vert_nbhd = incident_interaction_neighborhood(mesh, ips)
        u = self.pre(features).relu()
        s = mesh_sender_features(self.sender, mesh, u, ips)
        r = mesh_receiver_features(self.receiver, ips, s, self.k, threshold,
                                   nbhd=int_nbhd)
        y = mesh_vertex_update(self.vertex, mesh, ips, r, nbhd=vert_nbhd)
        y = self.post(y).relu()
        y = y * _query_mask(vert_nbhd, y.shape[1], self.dtype)
        return y + features

    def params(self) -> list:
        return (self.pre.params() + self.sender.params() + self.receiver.params()
                + self.vertex.params() + self.post.params())


# -- interaction block --------------------------------------------------------


@dataclass
class BlockGeometry:
    """Spatial structure one interaction block operates on.

    queries/sources are the output/input point sets of the object layer
    (identical unless the block changes resolution). The relational layer
    always runs on the query set.
    """

    queries: np.ndarray
    sources: np.ndarray
    query_object_ids: np.ndarray
    obj_nbhd: Neighborhood
    residual_index: np.ndarray | None = None
    rel_nbhd: Neighborhood | None = None
    mesh: TriMesh | None = None
    ips: InteractionPointSet | None = None
    rel_threshold: float | None = None


class InteractionBlock:
    """Object convolution followed by a relational convolution.

    Resolution changes (down- or upsampling via sparser/denser query
    points) happen in the object layer only.
    """

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator,
                 name: str, relational: str | None = "pc", k: int = 16,
                 c_mid: int = 4, embed_dim: int = 8, dtype=np.float64):
        inner = max(4, out_width // 2)
        self.in_width, self.out_width = in_width, out_width
        self.relational = relational
        self.object_unit = PointConvLayer(
            inner, c_mid, inner, rng, f"{name}.obj", with_embed=True,
            embed_dim=embed_dim, in_width=in_width, out_width=out_width, dtype=dtype)
        if relational == "pc":
            self.rel_unit = PointConvLayer(
                inner, c_mid, inner, rng, f"{name}.rel", with_embed=False,
                in_width=out_width, out_width=out_width, dtype=dtype)
        elif relational == "mesh":
            self.rel_unit = MeshRelationalLayer(out_width, inner, rng, f"{name}.rel",
                                                k=k, c_mid=c_mid, embed_dim=embed_dim,
                                                dtype=dtype)
        elif relational is None:
            self.rel_unit = None
        else:
            raise ValueError(f"unknown relational kind {relational!r}")

    def forward(self, features: Tensor, geom: BlockGeometry) -> Tensor:
        x = self.object_unit.forward(geom.queries, geom.sources, features,
                                     geom.obj_nbhd, normalize=False,
                                     residual_index=geom.residual_index)
        if self.rel_unit is None:
            return x
        if self.relational == "pc":
            return self.rel_unit.forward(geom.queries, geom.queries, x,
                                         geom.rel_nbhd, normalize=True)
        return self.rel_unit.forward(geom.mesh, x, geom.ips, geom.rel_threshold)

    def params(self) -> list:
        out = self.object_unit.params()
        if self.rel_unit is not None:
            out += self.rel_unit.params()
        return out


def interaction_block_forward(block: InteractionBlock, features: Tensor,
                              geom: BlockGeometry) -> Tensor:
    return block.forward(features, geom)


def upsample_interpolate(layer: PointConvLayer, coarse_pos: np.ndarray,
                         coarse_ids: np.ndarray, coarse_features: Tensor,
                         fine_pos: np.ndarray, fine_ids: np.ndarray,
                         k: int = 16) -> Tensor:
    """Interpolate coarse features at fine query points (same-object kNN)."""
    nbhd = knn_points(coarse_pos, coarse_ids, fine_pos, fine_ids, k, same_object=True)
    return layer.conv(fine_pos, coarse_pos, coarse_features, nbhd, normalize=False)
