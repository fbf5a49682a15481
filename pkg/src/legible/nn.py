"""Small fully connected value network with hand-written backprop.

The network maps a goal-relative position ``r - g`` (3 numbers) through
ReLU hidden layers to one linear output. Weights are stored as
``(fan_in, fan_out)`` matrices so a batch ``x`` of shape ``(N, fan_in)``
goes through ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

INPUT_DIM = 3
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class ShapeMismatch(ValueError):
    pass


@dataclass
class MLP:
    """Parameters of a ``3 -> widths... -> 1`` ReLU network."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def precision(self) -> str:
        return np.dtype(self.dtype).name

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, precision: str) -> "MLP":
        dt = PRECISIONS[precision]
        return MLP(self.widths, [w.astype(dt) for w in self.weights], [b.astype(dt) for b in self.biases])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def layer_shapes(widths) -> list[tuple[int, int]]:
    dims = [INPUT_DIM, *widths, 1]
    return list(zip(dims[:-1], dims[1:]))


def init_mlp(widths, rng: np.random.Generator, precision: str = "float32") -> MLP:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    widths = tuple(int(w) for w in widths)
    if not widths or any(w <= 0 for w in widths):
        raise ValueError(f"hidden widths must be non-empty and positive, got {widths}")
    dt = PRECISIONS[precision]
    weights, biases = [], []
    for fan_in, fan_out in layer_shapes(widths):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)).astype(dt))
        biases.append(np.zeros(fan_out, dtype=dt))
    return MLP(widths, weights, biases)


def forward(params: MLP, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass.

    Args:
        params: network parameters.
        x: ``(N, 3)`` goal-relative inputs.

    Returns:
        ``(values, cache)`` where ``values`` has shape ``(N,)`` and
        ``cache`` holds the input to every layer.
    """
    h = np.asarray(x, dtype=params.dtype)
    cache = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w
        z += b
        if i < last:
            np.maximum(z, 0.0, out=z)
            cache.append(z)
        h = z
    return h[:, 0], cache


def backward(params: MLP, cache: list[np.ndarray], upstream) -> Gradients:
    """Gradients of ``sum(upstream * values)`` w.r.t. every weight and bias.

    ReLU's derivative at exactly 0 is taken as 0.
    """
    upstream = np.asarray(upstream, dtype=params.dtype).reshape(-1)
    if len(cache) != len(params.weights) or cache[0].shape[0] != upstream.shape[0]:
        raise ShapeMismatch("cache does not match the parameters or the upstream gradient")
    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = upstream[:, None]
    for i in range(n_layers - 1, -1, -1):
        a = cache[i]
        w = params.weights[i]
        # BLAS is slow for the 3-wide input layer; einsum is much faster there
        gw[i] = np.einsum("ni,nj->ij", a, delta) if a.shape[1] <= INPUT_DIM else a.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta * w[:, 0] if w.shape[1] == 1 else delta @ w.T
            np.multiply(delta, a > 0, out=delta)
    return Gradients(gw, gb)


def relative_inputs(points: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """The goal-relative first layer: ``r - g`` in float64.

    ``points`` and ``goals`` broadcast against each other; the result is
    flattened to ``(N, 3)``.
    """
    return (np.asarray(points, dtype=np.float64) - np.asarray(goals, dtype=np.float64)).reshape(-1, INPUT_DIM)


def value_forward(params: MLP, r, g) -> tuple[float, list[np.ndarray]]:
    out, cache = forward(params, relative_inputs(r, g))
    return float(out[0]), cache


def value_backward(params: MLP, cache: list[np.ndarray], upstream: float) -> Gradients:
    return backward(params, cache, np.array([upstream]))


def _check_shapes(params: MLP, grads: Gradients) -> None:
    p, g = params.arrays(), grads.arrays()
    if len(p) != len(g) or any(a.shape != b.shape for a, b in zip(p, g)):
        raise ShapeMismatch("gradient shapes do not match parameter shapes")


@dataclass
class RMSprop:
    """RMSprop with optional momentum.

    ``v <- rho v + (1 - rho) g^2``; ``m <- momentum m + lr g / sqrt(v + eps)``;
    ``p <- p - m``.
    """

    lr: float = 0.005
    rho: float = 0.9
    momentum: float = 0.0
    eps: float = 1e-7
    v: list[np.ndarray] = field(default_factory=list)
    m: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.rho < 1 or not 0 <= self.momentum < 1 or self.eps <= 0:
            raise ValueError("invalid RMSprop hyperparameters")

    def step(self, params: MLP, grads: Gradients) -> None:
        _check_shapes(params, grads)
        ps, gs = params.arrays(), grads.arrays()
        if not self.v:
            self.v = [np.zeros_like(p) for p in ps]
            self.m = [np.zeros_like(p) for p in ps]
        for p, g, v, m in zip(ps, gs, self.v, self.m):
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            upd = self.lr * g / np.sqrt(v + self.eps)
            if self.momentum:
                m *= self.momentum
                m += upd
                upd = m
            p -= upd.astype(p.dtype, copy=False)


@dataclass
class Adam:
    """Adam with the usual bias-corrected moment estimates."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")

    def step(self, params: MLP, grads: Gradients) -> None:
        _check_shapes(params, grads)
        ps, gs = params.arrays(), grads.arrays()
        if not self.m:
            self.m = [np.zeros_like(p) for p in ps]
            self.v = [np.zeros_like(p) for p in ps]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(ps, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= upd.astype(p.dtype, copy=False)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    widths,
    rng: np.random.Generator,
    n_trials: int = 20,
    h: float = 1e-5,
    backward_fn: Callable[[MLP, list, float], Gradients] = value_backward,
) -> float:
    """Worst relative error of ``backward_fn`` against central differences.

    Each trial draws a float64 network (with non-zero biases), a position
    and a goal, and perturbs every parameter in turn.
    """
    worst = 0.0
    for _ in range(n_trials):
        params = init_mlp(widths, rng, "float64")
        for b in params.biases:
            b[:] = rng.normal(0.0, 0.1, size=b.shape)
        r, g = rng.uniform(-1.0, 1.0, size=3), rng.uniform(-1.0, 1.0, size=3)
        upstream = float(rng.normal())
        _, cache = value_forward(params, r, g)
        analytic = backward_fn(params, cache, upstream).arrays()
        for p, a in zip(params.arrays(), analytic):
            numeric = np.empty_like(p)
            flat = p.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp, _ = value_forward(params, r, g)
                flat[j] = orig - h
                fm, _ = value_forward(params, r, g)
                flat[j] = orig
                numeric.reshape(-1)[j] = upstream * (fp - fm) / (2 * h)
            worst = max(worst, float(relative_error(a, numeric).max()))
    return worst


def mlp_to_dict(params: MLP) -> dict:
    return {
        "widths": list(params.widths),
        "precision": params.precision,
        "layers": [
            {"w": [float(x) for x in w.reshape(-1)], "b": [float(x) for x in b]}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def mlp_from_dict(d: dict) -> MLP:
    widths = tuple(int(w) for w in d["widths"])
    dt = PRECISIONS[d.get("precision", "float32")]
    shapes = layer_shapes(widths)
    if len(d["layers"]) != len(shapes):
        raise ShapeMismatch("layer count does not match widths")
    weights, biases = [], []
    for (fan_in, fan_out), layer in zip(shapes, d["layers"]):
        w = np.asarray(layer["w"], dtype=dt)
        b = np.asarray(layer["b"], dtype=dt)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise ShapeMismatch(f"layer expects {fan_in}x{fan_out} weights")
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(b)
    return MLP(widths, weights, biases)


def save_mlp(path: str | Path, params: MLP, header: dict | None = None) -> None:
    doc = dict(header or {})
    doc.update(mlp_to_dict(params))
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")
