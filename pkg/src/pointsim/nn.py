"""Linear maps, MLPs, the Adam optimizer and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import FiniteError, Parameter, Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Linear:
    """y = x @ W (+ b). W is stored (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 name: str, bias: bool = True, dtype=np.float64):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(glorot_uniform(rng, d_in, d_out, dtype), f"{name}.W")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    def params(self) -> list:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class MLP:
    """Fully-connected net, rectifier on hidden layers, identity output."""

    def __init__(self, widths, rng: np.random.Generator, name: str, dtype=np.float64):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = list(widths)
        self.layers = [Linear(a, b, rng, f"{name}.{i}", dtype=dtype)
                       for i, (a, b) in enumerate(zip(widths, widths[1:]))]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).relu()
        return self.layers[-1](x)

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]


class Adam:
    """Bias-corrected Adam. step() refuses to touch parameters if any
    gradient is non-finite."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise FiniteError(f"non-finite gradient for {getattr(p, 'name', 'param')}")
            grads.append(g)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)
    worst_param: str = ""

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradient_check(builder, seed: int = 0, step: float = 1e-6,
                   max_coords: int | None = None) -> GradCheckReport:
    """Central-difference check of reverse-mode gradients.

    builder(rng) must return (params, loss_fn) where loss_fn() re-runs the
    forward pass from the parameters' current values and returns a scalar
    Tensor. Relative error uses |a - n| / max(1, |a|, |n|) so tiny
    gradients are compared absolutely.
    """
    rng = np.random.default_rng(seed)
    params, loss_fn = builder(rng)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data))
                for p in params]

    report = GradCheckReport(0.0)
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = float(loss_fn().data)
            flat[c] = orig - step
            down = float(loss_fn().data)
            flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            ref = a.reshape(-1)[c]
            err = abs(ref - numeric) / max(1.0, abs(ref), abs(numeric))
            worst = max(worst, err)
        name = getattr(p, "name", f"param{id(p)}")
        report.per_param[name] = worst
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst_param = name
    return report
