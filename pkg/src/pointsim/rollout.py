"""Autoregressive prediction with rigid pose fitting, plus evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloudFrame, TriMesh
from .scenes import min_interobject_distance
from .sceneio import Scene
from .unet import DynamicsUNet, SceneSample, build_level_plan, predict_next


def kabsch_fit(src: np.ndarray, dst: np.ndarray):
    """Least-squares proper rigid transform: dst ~= src @ R.T + t.

    Uses the cross-covariance SVD with determinant sign correction, so the
    returned rotation never reflects. Raises on fewer than 3 points or a
    collinear source set.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("point sets must both be (n, 3)")
    if len(src) < 3:
        raise ValueError("rank deficient: need at least 3 points")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    src_s = np.linalg.svd(src - c_src, compute_uv=False)
    if src_s[1] <= 1e-9 * max(src_s[0], 1e-300):
        raise ValueError("rank deficient: collinear points")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - r @ c_src
    return r, t


@dataclass
class RolloutResult:
    predicted: np.ndarray          # (steps, n, 3) positions
    fitted_poses: list             # per step: list of (R, t) or None per object
    min_distances: np.ndarray      # (steps,) min inter-object distance
    final_error: float | None      # mean per-point error vs ground truth
    start_frame: int
    interaction_pairs: list | None = None  # per step, mesh faces mode

    @property
    def min_distance(self) -> float:
        return float(self.min_distances.min()) if len(self.min_distances) else np.inf

    def predicts_contact(self, threshold: float) -> bool:
        return self.min_distance < threshold


def _frame_from_window(window, object_ids, history: int, frame_index: int) -> PointCloudFrame:
    n = window[-1].shape[0]
    vel = np.zeros((n, history, 3))
    for j in range(history):
        vel[:, j, :] = window[-1 - j] - window[-2 - j]
    return PointCloudFrame(window[-1], vel, object_ids, frame_index=frame_index)


def rollout(model: DynamicsUNet, scene: Scene, steps: int,
            start: int | None = None) -> RolloutResult:
    """Roll the model forward, refitting one rigid transform per object.

    Rigid objects move by the Kabsch fit from current to predicted points
    (shape preserved exactly); deformable objects take the raw pointwise
    predictions. Each predicted frame feeds the next step's history.
    """
    history = model.config.history
    t0 = history if start is None else start
    if t0 < history:
        raise ValueError("rollout start needs full velocity history")
    if t0 >= scene.num_frames:
        raise ValueError("rollout start beyond scene length")
    object_ids = scene.object_ids
    rigid = scene.rigid_flags or [True] * (int(object_ids.max()) + 1)
    mesh0 = scene.meshes[0] if scene.meshes is not None else None
    mesh_mode = model.config.input_mode == "mesh"
    if mesh_mode and mesh0 is None:
        raise ValueError("mesh-mode rollout requires a mesh scene")

    window = [scene.positions[max(t0 - j, 0)] for j in range(history, -1, -1)]
    predicted = np.zeros((steps, len(object_ids), 3))
    min_d = np.zeros(steps)
    poses: list = []
    pair_counts: list | None = [] if (mesh_mode and model.config.faces) else None

    for step in range(steps):
        frame = _frame_from_window(window, object_ids, history, t0 + step)
        mesh = None
        if mesh_mode:
            mesh = TriMesh(window[-1], mesh0.triangles, mesh0.object_ids)
        sample = SceneSample(frame, mesh)
        plan = build_level_plan(sample, model.config)
        raw_pred = predict_next(model, sample, plan)
        if pair_counts is not None:
            pair_counts.append(plan.interaction_pairs)

        new_pos = np.empty_like(raw_pred)
        step_poses = []
        for oid in range(int(object_ids.max()) + 1):
            rows = object_ids == oid
            if rigid[oid] if oid < len(rigid) else True:
                r, t = kabsch_fit(window[-1][rows], raw_pred[rows])
                new_pos[rows] = window[-1][rows] @ r.T + t
                step_poses.append((r, t))
            else:
                new_pos[rows] = raw_pred[rows]
                step_poses.append(None)
        poses.append(step_poses)
        predicted[step] = new_pos
        min_d[step] = min_interobject_distance(new_pos, object_ids)
        window.append(new_pos)
        window = window[-(history + 1):]

    final_error = None
    gt_index = t0 + steps
    if gt_index < scene.num_frames:
        diff = predicted[-1] - scene.positions[gt_index]
        final_error = float(np.linalg.norm(diff, axis=1).mean())
    return RolloutResult(predicted, poses, min_d, final_error, t0,
                         interaction_pairs=pair_counts)


@dataclass
class SceneMetrics:
    name: str
    final_error: float | None
    min_distance: float
    predicted_contact: bool
    true_contact: bool

    @property
    def correct(self) -> bool:
        return self.predicted_contact == self.true_contact


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    contact_threshold: float = 0.1

    @property
    def mean_final_error(self) -> float | None:
        errs = [r.final_error for r in self.rows if r.final_error is not None]
        return float(np.mean(errs)) if errs else None

    @property
    def contact_accuracy(self) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r.correct for r in self.rows]))

    def to_dict(self) -> dict:
        return {
            "contact_threshold": self.contact_threshold,
            "scenes": [{"name": r.name, "final_error": r.final_error,
                        "min_distance": r.min_distance,
                        "predicted_contact": r.predicted_contact,
                        "true_contact": r.true_contact} for r in self.rows],
            "mean_final_error": self.mean_final_error,
            "contact_accuracy": self.contact_accuracy,
        }

    def format_text(self) -> str:
        lines = [f"{'scene':<28} {'final_err':>10} {'min_dist':>9} {'pred':>5} {'true':>5} ok"]
        for r in self.rows:
            err = f"{r.final_error:.4f}" if r.final_error is not None else "-"
            lines.append(f"{r.name:<28} {err:>10} {r.min_distance:>9.4f} "
                         f"{str(r.predicted_contact):>5} {str(r.true_contact):>5} "
                         f"{'y' if r.correct else 'N'}")
        err = self.mean_final_error
        lines.append(f"aggregate: scenes={len(self.rows)} "
                     f"mean_final_error={err if err is None else round(err, 6)} "
                     f"contact_accuracy={self.contact_accuracy:.3f}")
        return "\n".join(lines)


def evaluate(results, scenes, contact_threshold: float = 0.1) -> EvalReport:
    """Final-frame error plus contact-label accuracy over matched scenes."""
    if len(results) != len(scenes):
        raise ValueError("mismatched scene sets")
    report = EvalReport(contact_threshold=contact_threshold)
    for res, scene in zip(results, scenes):
        name = scene.path.rsplit("/", 1)[-1] if scene.path else "scene"
        report.rows.append(SceneMetrics(
            name=name,
            final_error=res.final_error,
            min_distance=res.min_distance,
            predicted_contact=res.predicts_contact(contact_threshold),
            true_contact=scene.contact_label,
        ))
    return report
