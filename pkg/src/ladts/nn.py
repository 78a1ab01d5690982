"""Small dense-network numerics: forward/backward passes, Adam, target updates.

Everything works on float64 arrays. Inputs may be a single vector ``(in,)``
or a batch ``(K, in)``; outputs follow the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SNAPSHOT_VERSION = 1


class ShapeError(ValueError):
    """Raised when arrays do not chain through a network."""


@dataclass
class MlpParams:
    """Weights ``(out, in)`` and biases ``(out,)`` per layer, input to output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def zeros_like(self) -> MlpParams:
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])


@dataclass
class GradientBundle:
    params: MlpParams
    input: np.ndarray


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float, **kw) -> AdamState:
        arrays = params.arrays()
        return cls(lr=lr, m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays], **kw)


def init_mlp(sizes: list[int], rng: np.random.Generator) -> MlpParams:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    if len(sizes) < 2:
        raise ShapeError(f"need at least input and output sizes, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """ReLU hidden layers, linear output. Returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ShapeError(
            f"input width {x.shape[-1]} does not match first layer {params.weights[0].shape[1]}")
    cache = [x]
    h = x
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if k < last:
            h = np.maximum(z, 0.0)
        else:
            h = z
        cache.append(h)
    return h, cache


def mlp_backward(params: MlpParams, cache: list[np.ndarray], output_grad: np.ndarray) -> GradientBundle:
    """Reverse-mode gradients w.r.t. every parameter and the input.

    For batched input the parameter gradients are summed over the batch.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache[-1].shape:
        raise ShapeError(f"output grad shape {g.shape} != output shape {cache[-1].shape}")
    n = params.n_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        h_in = cache[k]
        if k < n - 1:
            # ReLU mask from the post-activation output of this layer
            g = g * (cache[k + 1] > 0.0)
        if g.ndim == 1:
            gw[k] = np.outer(g, h_in)
            gb[k] = g.copy()
        else:
            gw[k] = g.T @ h_in
            gb[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return GradientBundle(MlpParams(gw, gb), g)


def add_grads(a: MlpParams, b: MlpParams) -> MlpParams:
    return MlpParams([x + y for x, y in zip(a.weights, b.weights)],
                     [x + y for x, y in zip(a.biases, b.biases)])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> MlpParams:
    """Bias-corrected Adam. Returns new params; advances ``state`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new = []
    for i, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return MlpParams(new[0::2], new[1::2])


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.dims != online.dims:
        raise ShapeError(f"target dims {target.dims} != online dims {online.dims}")
    return MlpParams(
        [tau * o + (1.0 - tau) * t for t, o in zip(target.weights, online.weights)],
        [tau * o + (1.0 - tau) * t for t, o in zip(target.biases, online.biases)],
    )


def copy_params(src: MlpParams) -> MlpParams:
    return MlpParams([w.copy() for w in src.weights], [b.copy() for b in src.biases])


# Snapshot layout: float64 little-endian values
#   [version, n_layers, d_0, ..., d_n, W_1 (row-major), b_1, ..., W_n, b_n]

def params_to_bytes(params: MlpParams) -> bytes:
    header = [float(SNAPSHOT_VERSION), float(params.n_layers)] + [float(d) for d in params.dims]
    body = np.concatenate([np.asarray(header), params.flat()])
    return body.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> MlpParams:
    if len(data) % 8:
        raise ShapeError("snapshot length is not a multiple of 8 bytes")
    flat = np.frombuffer(data, dtype="<f8").astype(np.float64)
    if flat.size < 2:
        raise ShapeError("snapshot too short for header")
    version, n_layers = int(flat[0]), int(flat[1])
    if version != SNAPSHOT_VERSION:
        raise ShapeError(f"unsupported snapshot version {version}")
    dims = [int(d) for d in flat[2:3 + n_layers]]
    pos = 3 + n_layers
    need = pos + sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
    if len(dims) != n_layers + 1 or flat.size < need:
        raise ShapeError(f"snapshot truncated: {flat.size} values, header needs {need}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        weights.append(w.copy())
        biases.append(b.copy())
    if pos != flat.size:
        raise ShapeError(f"snapshot has {flat.size - pos} trailing values")
    return MlpParams(weights, biases)


def save_snapshot(params: MlpParams, path: str | Path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_snapshot(path: str | Path) -> MlpParams:
    return params_from_bytes(Path(path).read_bytes())


__all__ = [
    "AdamState", "GradientBundle", "MlpParams", "ShapeError", "adam_step", "add_grads",
    "copy_params", "init_mlp", "load_snapshot", "mlp_backward", "mlp_forward",
    "params_from_bytes", "params_to_bytes", "save_snapshot", "soft_update",
]
