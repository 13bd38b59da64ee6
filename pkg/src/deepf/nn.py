"""Small feed-forward network engine: dense layers, softmax, backprop and Adam.

Everything runs in float64. Weights are stored as ``[fan_out, fan_in]`` so a
layer computes ``z = x @ W.T + b`` on a row-major batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NonFiniteError, StateError

ACTIVATIONS = ("relu", "leaky_relu", "identity")
DEFAULT_LEAKY_SLOPE = 0.01
CHECKPOINT_FORMAT = "deepf-checkpoint"
CHECKPOINT_VERSION = 1


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(q: np.ndarray, grad_q: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the softmax: dL/dz from dL/dq."""
    inner = np.sum(grad_q * q, axis=1, keepdims=True)
    return q * (grad_q - inner)


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "identity"
    slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"bias shape {self.biases.shape} does not match fan_out {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not (np.isfinite(self.slope) and 0.0 < self.slope < 1.0):
            raise ConfigurationError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        if self.activation == "leaky_relu":
            return np.where(z > 0.0, z, self.slope * z)
        return z

    def activation_grad(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0.0).astype(np.float64)
        if self.activation == "leaky_relu":
            return np.where(z > 0.0, 1.0, self.slope)
        return np.ones_like(z)


class Network:
    """An ordered stack of dense layers followed by a softmax.

    ``forward`` caches the per-layer inputs and pre-activations so that a
    subsequent ``backward`` call can produce parameter gradients. The cache is
    the only mutable state besides the parameters themselves.
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if a.fan_out != b.fan_in:
                raise ConfigurationError(
                    f"layer {i} fan_out {a.fan_out} does not chain into layer {i + 1} fan_in {b.fan_in}"
                )
        if layers[-1].activation != "identity":
            raise ConfigurationError("the final layer must use the identity activation")
        self.layers = list(layers)
        self._cache: tuple[list[np.ndarray], list[np.ndarray], np.ndarray] | None = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in layer order: ``[W0, b0, W1, b1, ...]``.

        The arrays are the live storage, so in-place updates affect the network.
        """
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.biases])
        return params

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"batch of shape {x.shape} does not match network input dim {self.input_dim}"
            )
        inputs, pre = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weights.T + layer.biases
            pre.append(z)
            h = layer.activate(z)
        self._cache = (inputs, pre, h)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Softmax probabilities ``q`` of shape ``[B, K]``."""
        q = softmax(self.logits(x))
        inputs, pre, z = self._cache
        self._cache = (inputs, pre, q)
        return q

    def predict(self, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Argmax class decisions; ties resolve to the lowest class index."""
        out = [np.argmax(self.logits(x[i : i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
        self._cache = None
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def backward(self, grad_q: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given dL/dq for the cached forward batch."""
        if self._cache is None:
            raise StateError("backward called before forward")
        q = self._cache[2]
        grad_q = np.asarray(grad_q, dtype=np.float64)
        if grad_q.shape != q.shape:
            raise ConfigurationError(f"upstream gradient shape {grad_q.shape} != output shape {q.shape}")
        return self.backward_logits(softmax_backward(q, grad_q))

    def backward_logits(self, grad_z: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given dL/dz on the final (pre-softmax) layer."""
        if self._cache is None:
            raise StateError("backward called before forward")
        inputs, pre, _ = self._cache
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        delta = np.asarray(grad_z, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            delta = delta * layer.activation_grad(pre[i])
            grads[2 * i] = delta.T @ inputs[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ layer.weights
        return grads

    def copy(self) -> "Network":
        return Network(
            [DenseLayer(l.weights.copy(), l.biases.copy(), l.activation, l.slope) for l in self.layers]
        )

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise ConfigurationError(f"expected {offset} parameters, got {flat.size}")


def init_network(
    sizes: Sequence[int],
    activation: str = "relu",
    seed: int = 0,
    slope: float = DEFAULT_LEAKY_SLOPE,
) -> Network:
    """Build ``[D, h1, ..., K]`` with He-normal hidden weights and zero biases.

    Hidden layers draw from N(0, 2/fan_in); the identity output layer uses
    N(0, 1/fan_in).
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigurationError("need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ConfigurationError(f"all layer sizes must be >= 1, got {sizes}")
    if activation not in ("relu", "leaky_relu"):
        raise ConfigurationError(f"hidden activation must be relu or leaky_relu, got {activation!r}")
    rng = np.random.default_rng(seed)
    layers = []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n - 1
        scale = np.sqrt((1.0 if last else 2.0) / fan_in)
        w = rng.standard_normal((fan_out, fan_in)) * scale
        layers.append(DenseLayer(w, np.zeros(fan_out), "identity" if last else activation, slope))
    return Network(layers)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ConfigurationError("params, grads and moment lists differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape or state.m[i].shape != params[i].shape:
            raise ConfigurationError(f"shape mismatch for parameter {i}: {params[i].shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i} at Adam step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def save_checkpoint(net: Network, path: str | Path, seed: int | None = None, extra: dict | None = None) -> Path:
    """Write ``net`` as an ``.npz`` container (see README for the layout)."""
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sizes": net.sizes,
        "activations": [l.activation for l in net.layers],
        "slopes": [l.slope for l in net.layers],
        "seed": seed,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), params=net.get_flat().astype("<f8"))
    return path


def load_checkpoint(path: str | Path) -> tuple[Network, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        flat = data["params"].astype(np.float64)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    sizes = meta["sizes"]
    layers = [
        DenseLayer(np.zeros((o, i)), np.zeros(o), act, slope)
        for i, o, act, slope in zip(sizes[:-1], sizes[1:], meta["activations"], meta["slopes"])
    ]
    net = Network(layers)
    net.set_flat(flat)
    return net, meta
