"""Scene files: JSON manifest + per-frame binary payload, magic "PFD1".

Per frame the payload holds positions (n x 3 float32 LE), object ids
(n int32 LE) and, when the manifest says has_mesh, a mesh block:
u32 vertex count, u32 triangle count, vertices (float32), triangle
indices (int32), per-vertex object ids (int32).
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloudFrame, TriMesh
from .unet import SceneSample

MAGIC = b"PFD1"


def save_scene(path, manifest: dict, positions: np.ndarray,
               object_ids: np.ndarray, meshes=None):
    """Write one scene atomically. positions is (frames, n, 3)."""
    positions = np.asarray(positions, dtype=np.float32)
    object_ids = np.asarray(object_ids, dtype=np.int32)
    frames, n, _ = positions.shape
    manifest = dict(manifest)
    manifest.setdefault("format", "PFD1")
    manifest["frames"] = frames
    manifest["points"] = int(n)
    manifest["has_mesh"] = meshes is not None
    blob = json.dumps(manifest, sort_keys=True).encode()

    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            for t in range(frames):
                f.write(positions[t].astype("<f4").tobytes())
                f.write(object_ids.astype("<i4").tobytes())
                if meshes is not None:
                    m = meshes[t]
                    f.write(np.uint32(m.num_vertices).tobytes())
                    f.write(np.uint32(m.num_faces).tobytes())
                    f.write(m.vertices.astype("<f4").tobytes())
                    f.write(m.triangles.astype("<i4").tobytes())
                    f.write(m.object_ids.astype("<i4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_array(buf, offset, dtype, count, shape):
    itemsize = np.dtype(dtype).itemsize
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr, offset + count * itemsize


@dataclass
class Scene:
    """A loaded scene: ground-truth positions plus optional per-frame meshes."""

    manifest: dict
    positions: np.ndarray          # (frames, n, 3) float64
    object_ids: np.ndarray         # (n,)
    meshes: list | None = None     # TriMesh per frame
    path: str | None = None

    @property
    def num_frames(self) -> int:
        return len(self.positions)

    @property
    def dt(self) -> float:
        return float(self.manifest["dt"])

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.manifest["gravity"], dtype=np.float64)

    @property
    def contact_label(self) -> bool:
        return bool(self.manifest.get("contact_label", False))

    @property
    def rigid_flags(self) -> list:
        return [b.get("rigid", True) for b in self.manifest.get("bodies", [])]

    def frame(self, t: int, history: int = 2) -> PointCloudFrame:
        if t < 0 or t >= self.num_frames:
            raise IndexError("frame out of range")
        n = self.positions.shape[1]
        vel = np.zeros((n, history, 3))
        for j in range(history):
            if t - j - 1 >= 0:
                vel[:, j, :] = self.positions[t - j] - self.positions[t - j - 1]
        return PointCloudFrame(self.positions[t], vel, self.object_ids, frame_index=t)

    def sample(self, t: int, history: int = 2) -> SceneSample:
        mesh = self.meshes[t] if self.meshes is not None else None
        return SceneSample(self.frame(t, history), mesh)


def load_scene(path) -> Scene:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a PFD1 scene file")
        size = int.from_bytes(f.read(8), "little")
        manifest = json.loads(f.read(size).decode())
        body = f.read()

    frames, n = manifest["frames"], manifest["points"]
    has_mesh = manifest.get("has_mesh", False)
    positions = np.zeros((frames, n, 3))
    object_ids = None
    meshes = [] if has_mesh else None
    off = 0
    for t in range(frames):
        pos, off = _read_array(body, off, "<f4", n * 3, (n, 3))
        positions[t] = pos
        ids, off = _read_array(body, off, "<i4", n, (n,))
        if object_ids is None:
            object_ids = ids.astype(np.int64)
        elif (object_ids != ids).any():
            raise ValueError("object ids must be constant across frames")
        if has_mesh:
            v = int(np.frombuffer(body, "<u4", 1, off)[0]); off += 4
            fcount = int(np.frombuffer(body, "<u4", 1, off)[0]); off += 4
            verts, off = _read_array(body, off, "<f4", v * 3, (v, 3))
            tris, off = _read_array(body, off, "<i4", fcount * 3, (fcount, 3))
            vids, off = _read_array(body, off, "<i4", v, (v,))
            meshes.append(TriMesh(verts.astype(np.float64), tris.astype(np.int64),
                                  vids.astype(np.int64)))
    return Scene(manifest, positions, object_ids, meshes, path=os.fspath(path))


def load_dataset(directory) -> list:
    """All .pfd scenes in a directory, sorted by filename."""
    names = sorted(fn for fn in os.listdir(directory) if fn.endswith(".pfd"))
    if not names:
        raise ValueError(f"no .pfd scenes found in {directory}")
    return [load_scene(os.path.join(directory, fn)) for fn in names]
