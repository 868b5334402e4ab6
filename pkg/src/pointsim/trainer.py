"""Training loop: per-epoch frame sampling, per-point Huber loss on
predicted positions, Adam updates and best-checkpoint tracking."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import FiniteError, Tensor, concat, huber_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Adam
from .unet import DynamicsUNet, ModelConfig, build_level_plan, build_unet


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    samples_per_video: int = 8
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None
    normalize_targets: bool = True
    huber_delta: float = 1.0
    checkpoint_dir: str | None = None
    lr_decay_every: int | None = None
    lr_decay: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.samples_per_video < 1:
            raise ValueError("batch_size and samples_per_video must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr", "epochs", "samples_per_video", "batch_size", "seed", "max_steps",
            "normalize_targets", "huber_delta", "checkpoint_dir",
            "lr_decay_every", "lr_decay")}


def velocity_std(scenes) -> np.ndarray:
    """Per-axis std of one-step displacements, floored at 10% of the
    largest axis so a motionless axis cannot blow up the normalization."""
    deltas = [np.diff(s.positions, axis=0).reshape(-1, 3) for s in scenes]
    std = np.concatenate(deltas).std(axis=0)
    return np.maximum(std, max(0.1 * std.max(), 1e-9))


def training_loss(pred_positions, target_positions, sigma=None,
                  delta: float = 1.0) -> Tensor:
    """Huber over all points of all clouds in the batch (per-point mean).

    pred_positions: list of (n_i, 3) Tensors; targets: matching arrays.
    With sigma, residuals are scaled per axis before the Huber function.
    """
    if not pred_positions:
        raise ValueError("empty batch")
    pred = concat(list(pred_positions), axis=0)
    target = np.concatenate([np.asarray(t) for t in target_positions], axis=0)
    if sigma is not None:
        inv = (1.0 / np.asarray(sigma)).astype(pred.data.dtype)
        pred = pred * Tensor(inv[None, :])
        target = target * inv[None, :]
    return huber_loss(pred, Tensor(target.astype(pred.data.dtype)), delta)


class _SampleCache:
    """Per-(scene, frame) input bundle; geometry is reused across epochs."""

    def __init__(self, scenes, model_config: ModelConfig):
        self.scenes = scenes
        self.config = model_config
        self._cache = {}

    def get(self, scene_idx: int, t: int):
        key = (scene_idx, t)
        if key not in self._cache:
            scene = self.scenes[scene_idx]
            sample = scene.sample(t, history=self.config.history)
            plan = build_level_plan(sample, self.config)
            target = scene.positions[t + 1]
            self._cache[key] = (sample, plan, target)
        return self._cache[key]

    def valid_frames(self, scene_idx: int):
        h = self.config.history
        return h, self.scenes[scene_idx].num_frames - 1  # t in [h, F-2]


def _predicted_positions(model: DynamicsUNet, sample, plan) -> Tensor:
    out = model.forward(sample, plan)
    dtype = model.config.np_dtype
    pos = Tensor(sample.frame.positions.astype(dtype))
    if model.config.prediction == "acceleration":
        v_next = Tensor(sample.frame.velocities[:, 0, :].astype(dtype)) + out
    else:
        v_next = out
    return pos + v_next


def one_step_loss(model: DynamicsUNet, scenes, sigma=None, delta: float = 1.0,
                  stride: int = 1) -> float:
    """Deterministic one-step loss over every stride-th valid frame."""
    cache = _SampleCache(scenes, model.config)
    preds, targets = [], []
    for si in range(len(scenes)):
        lo, hi = cache.valid_frames(si)
        for t in range(lo, hi, stride):
            sample, plan, target = cache.get(si, t)
            preds.append(_predicted_positions(model, sample, plan))
            targets.append(target)
    return float(training_loss(preds, targets, sigma=sigma, delta=delta).data)


def baseline_loss(scenes, mode: str, sigma=None, delta: float = 1.0,
                  history: int = 2, stride: int = 1) -> float:
    """Zero-network reference: constant velocity (acceleration mode) or a
    frozen cloud (velocity mode)."""
    preds, targets = [], []
    for scene in scenes:
        for t in range(history, scene.num_frames - 1, stride):
            p_t = scene.positions[t]
            v_t = p_t - scene.positions[t - 1]
            pred = p_t + v_t if mode == "acceleration" else p_t
            preds.append(Tensor(pred))
            targets.append(scene.positions[t + 1])
    return float(training_loss(preds, targets, sigma=sigma, delta=delta).data)


@dataclass
class TrainResult:
    steps: int = 0
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_val: float | None = None
    best_path: str | None = None
    last_path: str | None = None
    sigma: np.ndarray | None = None
    aborted: bool = False

    @property
    def final_train_loss(self) -> float | None:
        return self.train_losses[-1] if self.train_losses else None


def _save(model: DynamicsUNet, path: str, train_config: TrainConfig, extra: dict):
    save_checkpoint(path, model.state_arrays(), model.config.to_dict(),
                    extra={"train": train_config.to_dict(), **extra})


def train(model: DynamicsUNet, scenes, config: TrainConfig,
          val_scenes=None) -> TrainResult:
    """Optimize the model; per epoch every scene is sampled
    samples_per_video times at uniformly random input frames.

    Saves best.ckpt (lowest held-out one-step loss; training loss when no
    val_scenes) and last.ckpt when checkpoint_dir is set. A non-finite
    loss or gradient aborts training, keeping the last good checkpoint.
    """
    if not scenes:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    sigma = velocity_std(scenes) if config.normalize_targets else None
    cache = _SampleCache(scenes, model.config)
    optimizer = Adam(model.params(), lr=config.lr)
    result = TrainResult(sigma=sigma)

    ckpt_dir = config.checkpoint_dir
    best_path = os.path.join(ckpt_dir, "best.ckpt") if ckpt_dir else None
    last_path = os.path.join(ckpt_dir, "last.ckpt") if ckpt_dir else None

    def current_val() -> float:
        target = val_scenes if val_scenes else scenes
        return one_step_loss(model, target, sigma=sigma, delta=config.huber_delta)

    def save_best(val: float):
        if result.best_val is None or val < result.best_val:
            result.best_val = val
            if best_path:
                _save(model, best_path, config, {"val_loss": val, "step": result.steps})
                result.best_path = best_path

    if config.epochs == 0 or config.max_steps == 0:
        save_best(current_val())
        if last_path:
            _save(model, last_path, config, {"step": 0})
            result.last_path = last_path
        return result

    stop = False
    for _epoch in range(config.epochs):
        batch_pool = []
        for si in range(len(scenes)):
            lo, hi = cache.valid_frames(si)
            if hi <= lo:
                raise ValueError(f"scene {si} too short to train on")
            for t in rng.integers(lo, hi, size=config.samples_per_video):
                batch_pool.append((si, int(t)))
        order = rng.permutation(len(batch_pool))
        for start in range(0, len(order), config.batch_size):
            picks = [batch_pool[i] for i in order[start:start + config.batch_size]]
            preds, targets = [], []
            try:
                for si, t in picks:
                    sample, plan, target = cache.get(si, t)
                    preds.append(_predicted_positions(model, sample, plan))
                    targets.append(target)
                loss = training_loss(preds, targets, sigma=sigma,
                                     delta=config.huber_delta)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            except FiniteError:
                result.aborted = True
                stop = True
                break
            result.steps += 1
            result.train_losses.append(float(loss.data))
            if config.lr_decay_every and result.steps % config.lr_decay_every == 0:
                optimizer.lr *= config.lr_decay
            if config.max_steps and result.steps >= config.max_steps:
                stop = True
                break
        if stop and result.aborted:
            break
        val = current_val()
        result.val_losses.append(val)
        save_best(val)
        if last_path:
            _save(model, last_path, config, {"step": result.steps})
            result.last_path = last_path
        if stop:
            break
    return result


def load_model(path) -> DynamicsUNet:
    """Rebuild a model from a checkpoint file."""
    config, params, _ = load_checkpoint(path)
    model = build_unet(ModelConfig.from_dict(config))
    model.load_state(params)
    return model
