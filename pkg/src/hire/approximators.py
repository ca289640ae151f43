"""Small numpy MLPs with hand-written reverse mode, orthogonal init and Adam.

Parameters are stored in the dtype they were created with (float32 for
training, float64 for gradient checks); matmuls run in that dtype.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, h, g):
    # g is dL/dh; returns dL/dz
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1 - h * h)
    return g


@dataclass
class Mlp:
    """Ordered (W[out, in], b[out]) layers with one activation per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != {self.weights[i - 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, in the order used by gradients and Adam."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))

    def astype(self, dtype) -> Mlp:
        return Mlp([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                   list(self.activations))

    def forward(self, x):
        return forward(self, x)

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class Cache:
    params_id: int
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activations
    post: list = field(default_factory=list)     # activations


def orthogonal(shape, gain, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Orthogonal matrix of `shape` scaled by `gain` (QR of a Gaussian, sign-fixed)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols], dtype=dtype)


def orthogonal_init(dims, rng: np.random.Generator, gain=np.sqrt(2), out_gain=1.0,
                    activation="relu", out_activation="identity", dtype=np.float32) -> Mlp:
    """Build an MLP over `dims` = [in, h1, ..., out] with orthogonal weights and zero biases.

    Hidden layers use `gain`, the last layer `out_gain`.
    """
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ValueError(f"invalid dims {dims}")
    weights, biases, acts = [], [], []
    n = len(dims) - 1
    for i in range(n):
        last = i == n - 1
        weights.append(orthogonal((dims[i + 1], dims[i]), out_gain if last else gain, rng, dtype))
        biases.append(np.zeros(dims[i + 1], dtype=dtype))
        acts.append(out_activation if last else activation)
    return Mlp(weights, biases, acts)


def forward(params: Mlp, x):
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} does not match layer width {params.in_dim}")
    cache = Cache(id(params))
    h = x
    for w, b, a in zip(params.weights, params.biases, params.activations):
        cache.inputs.append(h)
        z = h @ w.T + b
        h = _act(a, z)
        cache.pre.append(z)
        cache.post.append(h)
    return h, cache


def backward(params: Mlp, cache: Cache, grad_out, need_input_grad=False):
    """Reverse pass. Returns grads (same order as `params.arrays()`), plus dL/dx if asked."""
    if cache.params_id != id(params) or len(cache.inputs) != len(params.weights):
        raise ValueError("stale cache: it was produced by a different parameter set")
    g = np.asarray(grad_out, dtype=params.dtype)
    grads = [None] * (2 * len(params.weights))
    for i in reversed(range(len(params.weights))):
        g = _act_grad(params.activations[i], cache.pre[i], cache.post[i], g)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        if i or need_input_grad:
            g = g @ params.weights[i]
    if need_input_grad:
        return grads, g
    return grads


def global_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads)))


def clip_grad_norm(grads, max_norm: float):
    """Scale every gradient by max_norm/norm when the global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


class Adam:
    """Bias-corrected Adam over a fixed list of arrays, updated in place."""

    def __init__(self, arrays, lr=2.5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = list(arrays)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]
        self.t = 0

    def step(self, grads, lr=None) -> bool:
        """Apply one update. Non-finite gradients skip the update and return False."""
        if len(grads) != len(self.arrays):
            raise ValueError("gradient list does not match parameter list")
        if not all(np.all(np.isfinite(g)) for g in grads):
            logger.warning("non-finite gradient, Adam step skipped")
            return False
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.arrays, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return True

    def state_arrays(self):
        return self.m + self.v


def adam_step(params: Mlp, grads, state: Adam, lr=None) -> bool:
    """Functional-looking wrapper kept for symmetry with forward/backward."""
    return state.step(grads, lr)


# -- checkpoints: flat little-endian float32 blob + JSON manifest ----------------

def save_checkpoint(path, nets: dict[str, Mlp], extra: dict | None = None):
    """Write `<path>.bin` and `<path>.json`. Extra holds JSON-able metadata (e.g. normalizer stats)."""
    path = Path(path)
    manifest = {"format": "hire-mlp-v1", "dtype": "<f4", "nets": {}, "extra": extra or {}}
    chunks, offset = [], 0
    for name, net in nets.items():
        layers = []
        for w, b, a in zip(net.weights, net.biases, net.activations):
            wb = np.ascontiguousarray(w, dtype="<f4").tobytes()
            bb = np.ascontiguousarray(b, dtype="<f4").tobytes()
            layers.append({"out": int(w.shape[0]), "in": int(w.shape[1]), "activation": a,
                           "weight_offset": offset, "bias_offset": offset + len(wb)})
            chunks += [wb, bb]
            offset += len(wb) + len(bb)
        manifest["nets"][name] = layers
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".bin").read_bytes()
    nets = {}
    for name, layers in manifest["nets"].items():
        ws, bs, acts = [], [], []
        for layer in layers:
            o, i = layer["out"], layer["in"]
            ws.append(np.frombuffer(blob, "<f4", o * i, layer["weight_offset"]).reshape(o, i).astype(np.float32))
            bs.append(np.frombuffer(blob, "<f4", o, layer["bias_offset"]).astype(np.float32))
            acts.append(layer["activation"])
        nets[name] = Mlp(ws, bs, acts)
    return nets, manifest.get("extra", {})


def set_params(dst: Mlp, src: Mlp):
    """Copy values in place so optimizers bound to `dst` stay valid."""
    for a, b in zip(dst.arrays(), src.arrays()):
        a[...] = b
