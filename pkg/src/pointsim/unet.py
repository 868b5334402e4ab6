"""Hierarchical encoder-bottleneck-decoder over point clouds or meshes.

Encoder blocks downsample via grid sampling (point clouds) or vertex
clustering (meshes) while storing point locations; decoder blocks
interpolate features back onto the stored locations and merge highway
connections from the encoder at the same resolution. The mesh variant
keeps relational convolutions only at full resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .geometry import (
    InteractionPointSet,
    PointCloudFrame,
    TriMesh,
    VoxelSchedule,
    find_interaction_points,
    grid_downsample,
    knn_points,
    mesh_vertex_neighborhood,
    simplify_vertex_clustering,
)
from .nn import MLP, Linear
from .pointconv import BlockGeometry, InteractionBlock


@dataclass
class ModelConfig:
    base_channels: int = 32
    encoder_blocks: int = 3
    bottleneck_blocks: int = 3
    decoder_blocks: int = 3
    base_voxel: float = 0.05
    level_voxels: tuple = (0.075, 0.1125, 0.16875)
    level_radii: tuple = (0.1, 0.15, 0.225, 0.3375)
    k: int = 16
    prediction: str = "acceleration"  # "velocity" | "acceleration"
    input_mode: str = "pointcloud"    # "pointcloud" | "mesh"
    faces: bool = True                # mesh mode: face interaction-point path
    history: int = 2
    samples_per_face: int = 8
    interaction_threshold: float | None = None
    c_mid: int = 4
    embed_dim: int = 8
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.encoder_blocks != self.decoder_blocks:
            raise ValueError("encoder and decoder block counts must match")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        if self.prediction not in ("velocity", "acceleration"):
            raise ValueError(f"unknown prediction mode {self.prediction!r}")
        if self.input_mode not in ("pointcloud", "mesh"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if len(self.level_voxels) < self.encoder_blocks:
            raise ValueError("schedule has fewer levels than encoder blocks")
        if len(self.level_radii) != len(self.level_voxels) + 1:
            raise ValueError("need one radius per level")

    @property
    def levels(self) -> int:
        return self.encoder_blocks

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def schedule(self) -> VoxelSchedule:
        return VoxelSchedule(self.base_voxel, tuple(self.level_voxels),
                             tuple(self.level_radii)).truncated(self.levels)

    def threshold(self) -> float:
        return self.interaction_threshold if self.interaction_threshold is not None \
            else self.level_radii[0]

    def width(self, level: int) -> int:
        return self.base_channels * (2 ** level)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "encoder_blocks": self.encoder_blocks,
            "bottleneck_blocks": self.bottleneck_blocks,
            "decoder_blocks": self.decoder_blocks,
            "base_voxel": self.base_voxel,
            "level_voxels": list(self.level_voxels),
            "level_radii": list(self.level_radii),
            "k": self.k,
            "prediction": self.prediction,
            "input_mode": self.input_mode,
            "faces": self.faces,
            "history": self.history,
            "samples_per_face": self.samples_per_face,
            "interaction_threshold": self.interaction_threshold,
            "c_mid": self.c_mid,
            "embed_dim": self.embed_dim,
            "dtype": self.dtype,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("level_voxels", "level_radii"):
            if key in d:
                d[key] = tuple(d[key])
        return ModelConfig(**d)


@dataclass
class SceneSample:
    """Model input at one timestep: a frame, plus its mesh in mesh mode."""

    frame: PointCloudFrame
    mesh: TriMesh | None = None


@dataclass
class LevelPlan:
    """Per-forward spatial structure: point sets per level, block
    geometries, and instrumentation about relational machinery."""

    positions: list = field(default_factory=list)
    object_ids: list = field(default_factory=list)
    down_geoms: list = field(default_factory=list)
    bottleneck_geom: BlockGeometry | None = None
    up_geoms: list = field(default_factory=list)     # deepest-first
    entry_geom: BlockGeometry | None = None          # mesh variant, level 0
    relational_levels: list = field(default_factory=list)
    interaction_pairs: int | None = None


def encode_input_features(frame: PointCloudFrame, history: int) -> np.ndarray:
    """Raw per-point input [v(t); ...; v(t-h+1); z(t)], width 3h + 1."""
    if frame.history < history:
        raise ValueError(f"missing history: frame has {frame.history}, need {history}")
    parts = [frame.velocities[:, j, :] for j in range(history)]
    parts.append(frame.positions[:, 2:3])
    return np.concatenate(parts, axis=1)


def _per_object_downsample(positions: np.ndarray, object_ids: np.ndarray,
                           voxel: float) -> np.ndarray:
    """Grid-downsample each object separately so no object vanishes."""
    kept = []
    for oid in np.unique(object_ids):
        rows = np.flatnonzero(object_ids == oid)
        kept.append(rows[grid_downsample(positions[rows], voxel)])
    kept = np.concatenate(kept)
    kept.sort()
    return kept


def _nearest_same_object(sources: np.ndarray, source_ids: np.ndarray,
                         queries: np.ndarray, query_ids: np.ndarray) -> np.ndarray:
    nbhd = knn_points(sources, source_ids, queries, query_ids, k=1, same_object=True)
    if (nbhd.counts == 0).any():
        raise ValueError("query object missing from source level")
    return nbhd.neighbor_indices


def build_level_plan(sample: SceneSample, config: ModelConfig) -> LevelPlan:
    """Spatial search for one forward pass (independent of parameters)."""
    if config.input_mode == "mesh":
        return _build_mesh_plan(sample, config)
    return _build_pointcloud_plan(sample.frame, config)


def _build_pointcloud_plan(frame: PointCloudFrame, config: ModelConfig) -> LevelPlan:
    plan = LevelPlan()
    sched = config.schedule()
    k = config.k
    pts = [frame.positions]
    ids = [frame.object_ids]
    for level in range(1, config.levels + 1):
        keep = _per_object_downsample(pts[-1], ids[-1], sched.level_voxels[level - 1])
        pts.append(pts[-1][keep])
        ids.append(ids[-1][keep])
        plan.down_geoms.append(BlockGeometry(
            queries=pts[level], sources=pts[level - 1], query_object_ids=ids[level],
            obj_nbhd=knn_points(pts[level - 1], ids[level - 1], pts[level], ids[level],
                                k, same_object=True),
            residual_index=keep,
            rel_nbhd=knn_points(pts[level], ids[level], pts[level], ids[level], k,
                                r=sched.level_radii[level], same_object=False),
        ))
        plan.relational_levels.append(level)
    plan.positions, plan.object_ids = pts, ids

    deep = config.levels
    plan.bottleneck_geom = BlockGeometry(
        queries=pts[deep], sources=pts[deep], query_object_ids=ids[deep],
        obj_nbhd=knn_points(pts[deep], ids[deep], pts[deep], ids[deep], k,
                            same_object=True),
        rel_nbhd=knn_points(pts[deep], ids[deep], pts[deep], ids[deep], k,
                            r=sched.level_radii[deep], same_object=False),
    )
    plan.relational_levels.append(deep)

    for level in range(config.levels - 1, -1, -1):
        plan.up_geoms.append(BlockGeometry(
            queries=pts[level], sources=pts[level + 1], query_object_ids=ids[level],
            obj_nbhd=knn_points(pts[level + 1], ids[level + 1], pts[level], ids[level],
                                k, same_object=True),
            residual_index=_nearest_same_object(pts[level + 1], ids[level + 1],
                                                pts[level], ids[level]),
            rel_nbhd=knn_points(pts[level], ids[level], pts[level], ids[level], k,
                                r=sched.level_radii[level], same_object=False),
        ))
        plan.relational_levels.append(level)
    return plan


def _build_mesh_plan(sample: SceneSample, config: ModelConfig) -> LevelPlan:
    if sample.mesh is None:
        raise ValueError("mesh input mode requires a mesh")
    mesh = sample.mesh
    plan = LevelPlan()
    sched = config.schedule()
    k = config.k

    meshes = [mesh]
    for level in range(1, config.levels + 1):
        meshes.append(simplify_vertex_clustering(mesh, sched.level_voxels[level - 1]))
    pts = [m.vertices for m in meshes]
    ids = [m.object_ids for m in meshes]
    plan.positions, plan.object_ids = pts, ids

    # relational machinery only at full resolution
    if config.faces:
        ips = find_interaction_points(mesh, config.samples_per_face,
                                      config.threshold(), seed=config.seed)
        plan.interaction_pairs = ips.num_pairs
        rel_kwargs = dict(mesh=mesh, ips=ips, rel_threshold=config.threshold())
    else:
        rel_kwargs = dict(rel_nbhd=knn_points(pts[0], ids[0], pts[0], ids[0], k,
                                              r=sched.level_radii[0],
                                              same_object=False))
    plan.entry_geom = BlockGeometry(
        queries=pts[0], sources=pts[0], query_object_ids=ids[0],
        obj_nbhd=mesh_vertex_neighborhood(mesh), **rel_kwargs)
    plan.relational_levels.append(0)

    for level in range(1, config.levels + 1):
        plan.down_geoms.append(BlockGeometry(
            queries=pts[level], sources=pts[level - 1], query_object_ids=ids[level],
            obj_nbhd=knn_points(pts[level - 1], ids[level - 1], pts[level], ids[level],
                                k, same_object=True),
            residual_index=_nearest_same_object(pts[level - 1], ids[level - 1],
                                                pts[level], ids[level]),
        ))

    deep = config.levels
    plan.bottleneck_geom = BlockGeometry(
        queries=pts[deep], sources=pts[deep], query_object_ids=ids[deep],
        obj_nbhd=mesh_vertex_neighborhood(meshes[deep]))

    for level in range(config.levels - 1, -1, -1):
        plan.up_geoms.append(BlockGeometry(
            queries=pts[level], sources=pts[level + 1], query_object_ids=ids[level],
            obj_nbhd=knn_points(pts[level + 1], ids[level + 1], pts[level], ids[level],
                                k, same_object=True),
            residual_index=_nearest_same_object(pts[level + 1], ids[level + 1],
                                                pts[level], ids[level]),
        ))
    return plan


class DynamicsUNet:
    """Point-convolution U-Net predicting per-point velocity or acceleration."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = config.np_dtype
        C, L = config.base_channels, config.levels
        kw = dict(k=config.k, c_mid=config.c_mid, embed_dim=config.embed_dim,
                  dtype=dtype)
        mesh_mode = config.input_mode == "mesh"
        rel_kind = None if mesh_mode else "pc"
        level0_rel = ("mesh" if config.faces else "pc") if mesh_mode else None

        raw_width = 3 * config.history + 1
        self.encode_mlp = MLP([raw_width, C, C], rng, "encode", dtype=dtype)

        self.entry_block = InteractionBlock(C, C, rng, "entry", relational=level0_rel,
                                            **kw) if mesh_mode else None
        self.enc_blocks = [
            InteractionBlock(config.width(l - 1), config.width(l), rng, f"enc{l}",
                             relational=rel_kind, **kw)
            for l in range(1, L + 1)
        ]
        self.bn_blocks = [
            InteractionBlock(config.width(L), config.width(L), rng, f"bn{i}",
                             relational=rel_kind, **kw)
            for i in range(config.bottleneck_blocks)
        ]
        self.dec_blocks = []
        self.skip_projs = []
        for l in range(L - 1, -1, -1):
            self.dec_blocks.append(
                InteractionBlock(config.width(l + 1), config.width(l), rng, f"dec{l}",
                                 relational=rel_kind, **kw))
            self.skip_projs.append(
                Linear(2 * config.width(l), config.width(l), rng, f"skip{l}",
                       dtype=dtype))
        self.exit_block = InteractionBlock(C, C, rng, "exit", relational=level0_rel,
                                           **kw) if mesh_mode else None
        self.head = Linear(C, 3, rng, "head", dtype=dtype)

    # -- parameters ----------------------------------------------------------

    def params(self) -> list:
        blocks = [self.entry_block] + self.enc_blocks + self.bn_blocks \
            + self.dec_blocks + [self.exit_block]
        out = list(self.encode_mlp.params())
        for b in blocks:
            if b is not None:
                out += b.params()
        for p in self.skip_projs:
            out += p.params()
        out += self.head.params()
        return out

    def named_params(self) -> dict:
        out = {}
        for p in self.params():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def load_state(self, arrays: dict):
        params = self.named_params()
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
        for name, p in params.items():
            a = np.asarray(arrays[name], dtype=p.data.dtype)
            if a.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = a.copy()

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    # -- forward ---------------------------------------------------------------

    def forward(self, sample: SceneSample, plan: LevelPlan | None = None) -> Tensor:
        """Per-point prediction (n, 3): velocity or acceleration."""
        config = self.config
        if plan is None:
            plan = build_level_plan(sample, config)
        raw = encode_input_features(sample.frame, config.history)
        x = self.encode_mlp(Tensor(raw.astype(config.np_dtype)))

        if self.entry_block is not None:
            x = self.entry_block.forward(x, plan.entry_geom)
        skips = [x]
        for block, geom in zip(self.enc_blocks, plan.down_geoms):
            x = block.forward(x, geom)
            skips.append(x)
        skips.pop()  # deepest output goes through the bottleneck, not a skip
        for block in self.bn_blocks:
            x = block.forward(x, plan.bottleneck_geom)
        for block, proj, geom in zip(self.dec_blocks, self.skip_projs, plan.up_geoms):
            x = block.object_unit.forward(geom.queries, geom.sources, x,
                                          geom.obj_nbhd, normalize=False,
                                          residual_index=geom.residual_index)
            x = proj(concat([x, skips.pop()], axis=1)).relu()
            if block.rel_unit is not None:
                if block.relational == "pc":
                    x = block.rel_unit.forward(geom.queries, geom.queries, x,
                                               geom.rel_nbhd, normalize=True)
                else:
                    x = block.rel_unit.forward(geom.mesh, x, geom.ips,
                                               geom.rel_threshold)
        if self.exit_block is not None:
            x = self.exit_block.forward(x, plan.entry_geom)
        return self.head(x)


def build_unet(config: ModelConfig) -> DynamicsUNet:
    return DynamicsUNet(config)


def predict_next(model: DynamicsUNet, sample: SceneSample,
                 plan: LevelPlan | None = None) -> np.ndarray:
    """Next positions p(t) + v_hat(t+1); in acceleration mode
    v_hat(t+1) = v(t) + a_hat."""
    out = model.forward(sample, plan).data.astype(np.float64)
    if model.config.prediction == "acceleration":
        v_next = sample.frame.velocities[:, 0, :] + out
    else:
        v_next = out
    return sample.frame.positions + v_next
