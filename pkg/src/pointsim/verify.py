"""Built-in numeric verification: downsized gradient checks and a fast
self-test battery, both exposed through the CLI."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, huber_loss
from .geometry import PointCloudFrame, TriMesh, concat_meshes, find_interaction_points, \
    grid_downsample, knn_points
from .nn import Adam, GradCheckReport, Parameter, gradient_check
from .pointconv import PointConvLayer
from .rollout import kabsch_fit
from .scenes import RigidBody, body_to_mesh
from .unet import ModelConfig, SceneSample, build_level_plan, build_unet


def _two_blob_frame(rng, n_per_obj: int = 12, gap: float = 0.15):
    p0 = rng.normal(scale=0.08, size=(n_per_obj, 3)) + [0.0, 0.0, 0.5]
    p1 = rng.normal(scale=0.08, size=(n_per_obj, 3)) + [gap, 0.0, 0.5]
    pos = np.concatenate([p0, p1])
    ids = np.repeat([0, 1], n_per_obj)
    vel = rng.normal(scale=0.05, size=(2 * n_per_obj, 2, 3))
    return PointCloudFrame(pos, vel, ids)


def _two_sphere_mesh(rng, radius: float = 0.2, gap: float = 0.02):
    body = RigidBody("sphere", [0, 0, 0], [0, 0, 0], radius=radius)
    a = body_to_mesh(body, 1).transformed(None, [0.0, 0.0, 0.5])
    b = body_to_mesh(body, 1).transformed(None, [2 * radius + gap, 0.0, 0.5])
    b = TriMesh(b.vertices, b.triangles, np.ones(b.num_vertices, dtype=np.int64))
    return concat_meshes([a, b])


def tiny_config(mesh: bool = False, faces: bool = True) -> ModelConfig:
    return ModelConfig(
        base_channels=6, encoder_blocks=1, bottleneck_blocks=1, decoder_blocks=1,
        level_voxels=(0.075,), level_radii=(0.1, 0.15), k=4,
        input_mode="mesh" if mesh else "pointcloud", faces=faces,
        samples_per_face=4, dtype="float64", seed=0)


def unet_gradcheck_builder(mesh: bool = False, faces: bool = True,
                           scene_seed: int = 0):
    """builder(rng) for gradient_check covering a small full U-Net forward."""
    rng = np.random.default_rng(scene_seed)
    config = tiny_config(mesh=mesh, faces=faces)
    model = build_unet(config)
    if mesh:
        m = _two_sphere_mesh(rng)
        vel = rng.normal(scale=0.05, size=(m.num_vertices, 2, 3))
        sample = SceneSample(PointCloudFrame(m.vertices, vel, m.object_ids), m)
    else:
        sample = SceneSample(_two_blob_frame(rng))
    plan = build_level_plan(sample, config)
    target = rng.normal(scale=0.3, size=(sample.frame.num_points, 3))

    def builder(brng):
        params = model.params()
        for p in params:  # nudge off zero-init biases so relu kinks are generic
            p.data = p.data + brng.normal(scale=0.01, size=p.data.shape)
        def loss_fn():
            return huber_loss(model.forward(sample, plan), Tensor(target))
        return params, loss_fn
    return builder


def unet_gradcheck(seed: int = 0, mesh: bool = False, faces: bool = True,
                   max_coords: int | None = 20) -> GradCheckReport:
    return gradient_check(unet_gradcheck_builder(mesh=mesh, faces=faces,
                                                 scene_seed=seed),
                          seed=seed + 1, max_coords=max_coords)


# -- self-test battery --------------------------------------------------------


def _naive_pointconv(layer: PointConvLayer, queries, sources, feats, nbhd):
    """Eq.-(1)-style loop: build W(d) per neighbor and sum W(d)^T x_i."""
    wl = layer.wl.weight.data  # (c_mid * c_feat, c_out)
    c_mid = layer.c_mid
    c_feat = layer.c_in + layer.embed_dim
    w3 = wl.reshape(c_mid, c_feat, -1)
    out = np.zeros((len(queries), w3.shape[2]))
    for q in range(nbhd.query_count):
        for i in nbhd.entry(q):
            d = sources[i] - queries[q]
            h = layer.h(Tensor(d[None, :])).data[0]
            x = feats[i]
            if layer.e is not None:
                x = np.concatenate([x, layer.e(Tensor(d[None, :])).data[0]])
            w_d = np.einsum("afo,a->fo", w3, h)  # (c_feat, c_out)
            out[q] += w_d.T @ x
    return out


def selftest(seed: int = 0):
    """Fast internal verifications; returns [(name, ok, detail), ...]."""
    rng = np.random.default_rng(seed)
    checks = []

    # kNN vs brute force
    pts = rng.normal(size=(60, 3))
    ids = rng.integers(0, 3, size=60)
    nbhd = knn_points(pts, ids, pts, ids, k=5, same_object=True)
    ok = True
    for q in range(60):
        cand = [(np.linalg.norm(pts[q] - pts[i]), i) for i in range(60) if ids[i] == ids[q]]
        cand.sort()
        ok &= list(nbhd.entry(q)) == [i for _, i in cand[:5]]
    checks.append(("knn_same_object vs brute force", ok, "60 pts, k=5"))

    # grid downsample exactness
    kept = grid_downsample(pts, 0.5)
    cells = np.floor(pts[kept] / 0.5).astype(np.int64)
    occupied = np.unique(np.floor(pts / 0.5).astype(np.int64), axis=0)
    ok = len(np.unique(cells, axis=0)) == len(kept) == len(occupied)
    checks.append(("grid_downsample one point per voxel", ok, f"{len(kept)} voxels"))

    # naive vs efficient pointconv
    layer = PointConvLayer(5, 4, 7, rng, "t", with_embed=True, dtype=np.float64)
    src = rng.normal(size=(20, 3))
    q = rng.normal(size=(6, 3))
    feats = rng.normal(size=(20, 5))
    lists = [rng.choice(20, size=rng.integers(1, 6), replace=False) for _ in range(6)]
    from .geometry import Neighborhood
    nb = Neighborhood.from_lists(lists, 20)
    eff = layer.conv(q, src, Tensor(feats), nb).data
    naive = _naive_pointconv(layer, q, src, feats, nb)
    err = np.abs(eff - naive).max()
    checks.append(("naive vs efficient pointconv", err < 1e-10, f"max abs err {err:.2e}"))

    # kabsch round trip
    src = rng.normal(size=(30, 3))
    angle = rng.uniform(0, np.pi)
    axis = rng.normal(size=3); axis /= np.linalg.norm(axis)
    kmat = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                     [-axis[1], axis[0], 0]])
    r_true = np.eye(3) + np.sin(angle) * kmat + (1 - np.cos(angle)) * kmat @ kmat
    dst = src @ r_true.T + [0.3, -0.2, 0.9]
    r, t = kabsch_fit(src, dst)
    rmsd = np.sqrt(((src @ r.T + t - dst) ** 2).sum(axis=1).mean())
    checks.append(("kabsch round trip", rmsd < 1e-10, f"rmsd {rmsd:.2e}"))

    # huber closed forms
    h1 = float(huber_loss(Tensor(np.array([2.0])), Tensor(np.array([0.0])), 1.0).data)
    h2 = float(huber_loss(Tensor(np.array([0.5])), Tensor(np.array([0.0])), 1.0).data)
    ok = abs(h1 - 1.5) < 1e-12 and abs(h2 - 0.125) < 1e-12
    checks.append(("huber closed-form values", ok, f"{h1:.4f}, {h2:.4f}"))

    # adam first step moves by ~lr against the gradient sign
    p = Parameter(np.array([1.0, -2.0]), "p")
    opt = Adam([p], lr=1e-3)
    p.grad = np.array([0.5, -0.25])
    before = p.data.copy()
    opt.step()
    delta = p.data - before
    ok = np.abs(delta + 1e-3 * np.sign(p.grad)).max() < 1e-6
    checks.append(("adam first-step magnitude", ok, f"delta {delta}"))

    # interaction points vs exhaustive scan
    mesh = _two_sphere_mesh(rng, radius=0.15, gap=0.01)
    ips = find_interaction_points(mesh, samples_per_face=3, threshold=0.1, seed=seed)
    from .geometry.mesh import sample_face_points
    smp, fids = sample_face_points(mesh, 3, seed)
    obj = mesh.face_object_ids()[fids]
    want = set()
    for i in range(len(smp)):
        for j in range(len(smp)):
            if obj[i] != obj[j] and np.linalg.norm(smp[i] - smp[j]) <= 0.1:
                want.add((i, j))
    got = set()
    # map unique rows back to sample indices by exact position match
    pos_to_idx = {}
    for i, p in enumerate(smp):
        pos_to_idx.setdefault(p.tobytes(), i)
    rows = [pos_to_idx[p.tobytes()] for p in ips.points]
    for s, r in ips.pairs:
        got.add((rows[s], rows[r]))
    checks.append(("interaction points vs O(S^2) scan", got == want,
                   f"{len(got)} pairs"))
    return checks
