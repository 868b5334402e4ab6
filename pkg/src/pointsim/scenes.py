"""Analytic rigid-body oracle and dataset factory.

Symplectic-Euler integration with impulse-based contacts for sphere-sphere,
sphere-plane and box-plane pairs (boxes stay axis-aligned and never rotate).
Surface point clouds are sampled once in the body frame and ride rigidly on
the body pose, so per-object pairwise distances are constant by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloudFrame, TriMesh, grid_downsample


@dataclass
class RigidBody:
    """Axis-aligned body; rotation is identity throughout the oracle."""

    shape: str                      # "sphere" | "box"
    position: np.ndarray            # (3,)
    velocity: np.ndarray            # (3,)
    mass: float = 1.0
    restitution: float = 0.5
    radius: float = 0.0             # sphere
    half_extents: np.ndarray | None = None  # box
    rigid: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.velocity = np.asarray(self.velocity, dtype=np.float64).copy()
        if self.shape == "sphere":
            if self.radius <= 0:
                raise ValueError("sphere radius must be positive")
        elif self.shape == "box":
            self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
            if (self.half_extents <= 0).any():
                raise ValueError("box half-extents must be positive")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    def bottom_gap(self) -> float:
        """Distance from center to the lowest point of the body."""
        return self.radius if self.shape == "sphere" else float(self.half_extents[2])

    def to_manifest(self) -> dict:
        d = {"shape": self.shape, "mass": self.mass, "restitution": self.restitution,
             "rigid": self.rigid, "position": self.position.tolist(),
             "velocity": self.velocity.tolist()}
        if self.shape == "sphere":
            d["radius"] = self.radius
        else:
            d["half_extents"] = self.half_extents.tolist()
        return d

    @staticmethod
    def from_manifest(d: dict) -> "RigidBody":
        return RigidBody(shape=d["shape"], position=d["position"], velocity=d["velocity"],
                         mass=d["mass"], restitution=d["restitution"],
                         radius=d.get("radius", 0.0),
                         half_extents=d.get("half_extents"), rigid=d.get("rigid", True))


@dataclass
class CollisionEvent:
    """Diagnostics for one impulse application."""

    kind: str            # "sphere-sphere" | "sphere-plane" | "box-plane"
    bodies: tuple
    normal_speed: float
    kinetic_before: float
    kinetic_after: float
    clamped: bool


@dataclass
class Trajectory:
    """Ground-truth rollout: point cloud frames plus per-body translations."""

    frames: list                    # PointCloudFrame per step
    poses: np.ndarray               # (F, B, 3) body translations
    dt: float
    gravity: np.ndarray
    body_points: list = field(default_factory=list)  # body-frame samples per body
    events: list = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def positions(self) -> np.ndarray:
        return np.stack([f.positions for f in self.frames])


def _history_frames(positions: np.ndarray, object_ids: np.ndarray,
                    history: int = 2) -> list:
    """PointCloudFrames with velocity history (zero-padded before t=history)."""
    f_count = len(positions)
    frames = []
    for t in range(f_count):
        vel = np.zeros((positions.shape[1], history, 3))
        for j in range(history):
            if t - j - 1 >= 0:
                vel[:, j, :] = positions[t - j] - positions[t - j - 1]
        frames.append(PointCloudFrame(positions[t], vel, object_ids, frame_index=t))
    return frames


def sample_surface(body: RigidBody, density: float, seed: int) -> np.ndarray:
    """Area-weighted uniform samples on the body surface, body frame."""
    if density <= 0:
        raise ValueError("density must be positive")
    rng = np.random.default_rng(seed)
    if body.shape == "sphere":
        area = 4.0 * math.pi * body.radius ** 2
        n = max(8, int(round(density * area)))
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * body.radius
    hx, hy, hz = body.half_extents
    face_areas = np.array([4 * hy * hz, 4 * hy * hz, 4 * hx * hz,
                           4 * hx * hz, 4 * hx * hy, 4 * hx * hy])
    n = max(12, int(round(density * face_areas.sum())))
    face = rng.choice(6, size=n, p=face_areas / face_areas.sum())
    u = rng.uniform(-1, 1, size=(n, 2))
    pts = np.zeros((n, 3))
    half = np.array([hx, hy, hz])
    for axis in range(3):
        for side, f in ((1.0, 2 * axis), (-1.0, 2 * axis + 1)):
            rows = face == f
            others = [a for a in range(3) if a != axis]
            pts[rows, axis] = side * half[axis]
            pts[rows, others[0]] = u[rows, 0] * half[others[0]]
            pts[rows, others[1]] = u[rows, 1] * half[others[1]]
    return pts


_BOX_FACES = np.array([
    [0, 1, 2], [0, 2, 3], [5, 4, 7], [5, 7, 6],
    [4, 0, 3], [4, 3, 7], [1, 5, 6], [1, 6, 2],
    [3, 2, 6], [3, 6, 7], [4, 5, 1], [4, 1, 0],
])

_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
], dtype=np.float64)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def _icosphere(radius: float, subdivisions: int):
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS[0])
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        cache = {}
        new_faces = []
        verts_list = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                cache[key] = len(verts_list)
                verts_list.append(m)
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces)
    return verts * radius, faces


def body_to_mesh(body: RigidBody, resolution: int = 1) -> TriMesh:
    """Body-frame mesh: box -> 12 triangles, sphere -> icosphere at the
    given subdivision level."""
    if body.shape == "box":
        hx, hy, hz = body.half_extents
        corners = np.array([[sx, sy, sz] for sz in (-hz, hz)
                            for sy, sx in ((-hy, -hx), (-hy, hx), (hy, hx), (hy, -hx))])
        verts, faces = corners, _BOX_FACES
    else:
        verts, faces = _icosphere(body.radius, resolution)
    return TriMesh(verts, faces, np.zeros(len(verts), dtype=np.int64))


# -- integration ---------------------------------------------------------------


def _pair_penetration(bodies, pos, i, j):
    if bodies[i].shape == "sphere" and bodies[j].shape == "sphere":
        d = pos[j] - pos[i]
        dist = np.linalg.norm(d)
        return bodies[i].radius + bodies[j].radius - dist, d, dist
    return -1.0, None, None  # box-box / sphere-box contacts are out of scope


def _kinetic(bodies, vel) -> float:
    return float(sum(0.5 * b.mass * (v @ v) for b, v in zip(bodies, vel)))


def simulate(bodies, dt: float, steps: int, seed: int = 0,
             gravity=(0.0, 0.0, -9.81), ground: bool = True,
             density: float = 3000.0, base_voxel: float = 0.05,
             body_points=None, history: int = 2,
             record_events: bool = False) -> Trajectory:
    """Integrate the scene and attach surface point clouds rigidly.

    Returns `steps` frames including the initial state. Surface points are
    sampled per body (seeded by seed + body index) then grid-subsampled at
    base_voxel; pass body_points to supply your own body-frame samples.
    """
    bodies = list(bodies)
    gravity = np.asarray(gravity, dtype=np.float64)
    pos = np.stack([b.position for b in bodies]).astype(np.float64)
    vel = np.stack([b.velocity for b in bodies]).astype(np.float64)
    n_bodies = len(bodies)

    for i in range(n_bodies):
        if ground and pos[i][2] - bodies[i].bottom_gap() < -1e-12:
            raise ValueError("initial interpenetration with ground")
        for j in range(i + 1, n_bodies):
            pen, _, _ = _pair_penetration(bodies, pos, i, j)
            if pen > 1e-12:
                raise ValueError(f"initial interpenetration between bodies {i} and {j}")

    if body_points is None:
        body_points = []
        for i, b in enumerate(bodies):
            pts = sample_surface(b, density, seed + i)
            if base_voxel and base_voxel > 0:
                pts = pts[grid_downsample(pts, base_voxel)]
            body_points.append(pts)

    object_ids = np.concatenate([np.full(len(p), i, dtype=np.int64)
                                 for i, p in enumerate(body_points)])
    clamp = 2.0 * np.linalg.norm(gravity) * dt
    events: list = []
    poses = np.zeros((steps, n_bodies, 3))
    all_pos = np.zeros((steps, len(object_ids), 3))

    def world_points():
        return np.concatenate([bp + pos[i] for i, bp in enumerate(body_points)])

    poses[0] = pos
    all_pos[0] = world_points()

    for t in range(1, steps):
        vel += gravity * dt
        pos += vel * dt
        for _ in range(4):
            touched = False
            if ground:
                for i, b in enumerate(bodies):
                    pen = b.bottom_gap() - pos[i][2]
                    if pen > 0 and vel[i][2] < 0:
                        clamped = -vel[i][2] <= clamp
                        e = 0.0 if clamped else b.restitution
                        ke0 = _kinetic(bodies, vel)
                        vel[i][2] = -e * vel[i][2]
                        if record_events:
                            kind = "sphere-plane" if b.shape == "sphere" else "box-plane"
                            events.append(CollisionEvent(kind, (i,), vel[i][2],
                                                         ke0, _kinetic(bodies, vel),
                                                         clamped))
                        if clamped:
                            pos[i][2] = b.bottom_gap()
                        touched = True
            for i in range(n_bodies):
                for j in range(i + 1, n_bodies):
                    pen, d, dist = _pair_penetration(bodies, pos, i, j)
                    if pen <= 0 or dist < 1e-12:
                        continue
                    n = d / dist
                    v_rel_n = float((vel[j] - vel[i]) @ n)
                    if v_rel_n >= 0:
                        continue
                    clamped = -v_rel_n <= clamp
                    e = 0.0 if clamped else min(bodies[i].restitution,
                                                bodies[j].restitution)
                    inv_mass = 1.0 / bodies[i].mass + 1.0 / bodies[j].mass
                    imp = -(1.0 + e) * v_rel_n / inv_mass
                    ke0 = _kinetic(bodies, vel)
                    vel[i] -= (imp / bodies[i].mass) * n
                    vel[j] += (imp / bodies[j].mass) * n
                    if record_events:
                        events.append(CollisionEvent("sphere-sphere", (i, j), v_rel_n,
                                                     ke0, _kinetic(bodies, vel),
                                                     clamped))
                    if clamped:
                        wi = (1.0 / bodies[i].mass) / inv_mass
                        pos[i] -= n * pen * wi
                        pos[j] += n * pen * (1.0 - wi)
                    touched = True
            if not touched:
                break
        poses[t] = pos
        all_pos[t] = world_points()

    frames = _history_frames(all_pos, object_ids, history=history)
    return Trajectory(frames, poses, dt, gravity, body_points=body_points,
                      events=events)


def min_interobject_distance(positions: np.ndarray, object_ids: np.ndarray) -> float:
    """Smallest distance between points of different objects (inf if < 2 objects)."""
    best = np.inf
    ids = np.unique(object_ids)
    for a_i, oa in enumerate(ids):
        pa = positions[object_ids == oa]
        for ob in ids[a_i + 1:]:
            pb = positions[object_ids == ob]
            diff = pa[:, None, :] - pb[None, :, :]
            d2 = np.einsum("abd,abd->ab", diff, diff)
            best = min(best, float(np.sqrt(d2.min())))
    return best


def trajectory_min_distance(traj_positions: np.ndarray, object_ids: np.ndarray) -> float:
    return min(min_interobject_distance(p, object_ids) for p in traj_positions)
