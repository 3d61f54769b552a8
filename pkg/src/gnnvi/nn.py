"""Small explicit forward/backward building blocks in float64 numpy.

Layers act on the last axis, so any number of leading batch axes is allowed.
Backward passes accumulate into ``Param.grad`` and return the input gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class Param:
    """A named value/gradient pair."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(shape, rng: np.random.Generator, name: str = "") -> Param:
    """Glorot-uniform for matrices, zeros for vectors (biases)."""
    shape = tuple(shape)
    if len(shape) == 1:
        return Param(np.zeros(shape), name)
    return Param(glorot_uniform(shape, rng), name)


class Affine:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None, name: str = ""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = init_params((out_dim, in_dim), rng, f"{name}.weight")
        self.bias = init_params((out_dim,), rng, f"{name}.bias")

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.weight.name}: expected input dim {self.in_dim}, got {x.shape[-1]}")
        return x @ self.weight.value.T + self.bias.value

    def backward(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if g.shape[-1] != self.out_dim or x.shape[:-1] != g.shape[:-1]:
            raise ValueError(f"{self.weight.name}: gradient shape {g.shape} incompatible with input {x.shape}")
        g2 = g.reshape(-1, self.out_dim)
        self.weight.grad += g2.T @ x.reshape(-1, self.in_dim)
        self.bias.grad += g2.sum(axis=0)
        return g @ self.weight.value


def affine_forward(layer: Affine, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


def affine_backward(layer: Affine, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return layer.backward(x, g)


class TwoLayerMlp:
    """affine -> ReLU -> affine."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng=None, name: str = ""):
        self.first = Affine(in_dim, hidden_dim, rng, f"{name}.first")
        self.second = Affine(hidden_dim, out_dim, rng, f"{name}.second")
        self.in_dim, self.out_dim = in_dim, out_dim

    def params(self) -> list[Param]:
        return self.first.params() + self.second.params()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        pre = self.first.forward(x)
        hid = np.maximum(pre, 0.0)
        return self.second.forward(hid), (x, pre, hid)

    def backward(self, cache: tuple, g: np.ndarray) -> np.ndarray:
        x, pre, hid = cache
        g_hid = self.second.backward(hid, g)
        return self.first.backward(x, g_hid * (pre > 0))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Iterable[Param]) -> None:
        """Bias-corrected adaptive-moment update; zeroes gradients afterwards."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(params):
            if i not in self.m:
                self.m[i] = np.zeros_like(p.value)
                self.v[i] = np.zeros_like(p.value)
            m, v, g = self.m[i], self.v[i], p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def optimizer_step(params: Iterable[Param], state: Adam) -> None:
    state.step(params)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def failed(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list[str]:
        return [
            f"{'FAIL' if not e <= self.tol else 'ok  '} {name:<32} max_rel_err={e:.3e}"
            for name, e in self.errors.items()
        ]


def grad_check(
    loss_and_grad: Callable[[], float],
    params: list[Param],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, entry by entry.

    ``loss_and_grad`` must zero, then populate, every ``Param.grad`` and return
    the scalar loss. Relative error is ``|a - n| / max(|a|, |n|, floor * max(1, |L|))``;
    the floor keeps identically-zero gradients (roundoff ~ |L| eps / h) from
    reading as failures.
    """
    for p in params:
        p.zero_grad()
    base = loss_and_grad()
    floor = floor * max(1.0, abs(base))
    analytic = [p.grad.copy() for p in params]
    errors: dict[str, float] = {}
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        num = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = loss_and_grad()
            flat[k] = orig - h
            fm = loss_and_grad()
            flat[k] = orig
            num[k] = (fp - fm) / (2 * h)
        ga = ga.reshape(-1)
        rel = np.abs(ga - num) / np.maximum(np.maximum(np.abs(ga), np.abs(num)), floor)
        errors[p.name] = float(rel.max()) if rel.size else 0.0
    for p in params:
        p.zero_grad()
    return GradCheckReport(errors, tol)
