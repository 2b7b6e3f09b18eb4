"""Small feedforward network with hand-written backpropagation.

Used for the constraint transform ``T(c) = h(g(c))`` and for the two-tower
embedding baselines.  Inputs are batched row-wise: ``x`` has shape
``(batch, input_dim)``; a 1-D input is treated as a batch of one.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "identity")


class NetStateError(RuntimeError):
    """Backward pass requested without a cached forward pass."""


class ConfigurationError(ValueError):
    pass


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ConfigurationError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


class FeedForwardNet:
    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ConfigurationError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigurationError(
                    f"layer dimensions do not chain: {prev.out_dim} -> {nxt.in_dim}")
        if layers[-1].activation != "identity":
            raise ConfigurationError("final layer must use the identity activation")
        self.layers = list(layers)
        self._cache: list[tuple[np.ndarray, np.ndarray]] | None = None

    @classmethod
    def build(cls, sizes: Sequence[int], rng: np.random.Generator,
              hidden_activation: str = "relu", output_bias: float | np.ndarray = 0.0
              ) -> FeedForwardNet:
        """Glorot-uniform initialised net with layer widths ``sizes``."""
        layers = []
        for idx, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            last = idx == len(sizes) - 2
            b = np.zeros(fan_out) + (output_bias if last else 0.0)
            layers.append(Layer(W, b, "identity" if last else hidden_activation))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.input_dim:
            raise ValueError(f"input has {h.shape[1]} features, net expects {self.input_dim}")
        cache = []
        for layer in self.layers:
            z = h @ layer.W.T + layer.b
            cache.append((h, z))
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        self._cache = cache
        return h[0] if single else h

    def backward(self, upstream: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Gradients of ``sum(upstream * output)`` for the last forward pass.

        Returns ``([(dW, db) per layer], d_input)``; the cache is consumed.
        """
        if self._cache is None:
            raise NetStateError("backward() called without a preceding forward()")
        g = np.asarray(upstream, dtype=np.float64)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        for layer, (h_in, z) in zip(reversed(self.layers), reversed(self._cache)):
            if layer.activation == "relu":
                g = g * (z > 0.0)
            grads.append((g.T @ h_in, g.sum(axis=0)))
            g = g @ layer.W
        grads.reverse()
        self._cache = None
        return grads, (g[0] if single else g)

    # parameter vector views, used by optimizers and gradient checks

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def set_params(self, flat: np.ndarray) -> None:
        pos = 0
        for layer in self.layers:
            size = layer.W.size
            layer.W = flat[pos:pos + size].reshape(layer.W.shape).copy()
            pos += size
            layer.b = flat[pos:pos + layer.b.size].copy()
            pos += layer.b.size
        if pos != flat.size:
            raise ValueError("parameter vector length does not match the network")

    @staticmethod
    def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])

    def copy(self) -> FeedForwardNet:
        return FeedForwardNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {"layers": [
            {"in": l.in_dim, "out": l.out_dim, "activation": l.activation,
             "W": l.W.tolist(), "b": l.b.tolist()} for l in self.layers]}

    @classmethod
    def from_dict(cls, doc: dict) -> FeedForwardNet:
        return cls([Layer(np.array(l["W"], dtype=np.float64).reshape(l["out"], l["in"]),
                          np.array(l["b"], dtype=np.float64), l["activation"])
                    for l in doc["layers"]])


def nc_transform(net: FeedForwardNet, g_c: np.ndarray, k: int, mode: str = "diagonal") -> np.ndarray:
    """Neural constraint transform.

    ``diagonal`` mode returns the length-``k`` diagonal (batched: ``(b, k)``);
    ``full`` mode returns a ``k x k`` matrix (batched: ``(b, k, k)``), row-major.
    """
    expected = {"diagonal": k, "full": k * k}.get(mode)
    if expected is None:
        raise ConfigurationError(f"unknown transform mode {mode!r}")
    if net.output_dim != expected:
        raise ConfigurationError(
            f"{mode} transform with k={k} needs {expected} net outputs, got {net.output_dim}")
    out = net.forward(g_c)
    if mode == "diagonal":
        return out
    return out.reshape(out.shape[:-1] + (k, k))


def tower_embed(net: FeedForwardNet, id_embedding: np.ndarray, side_features: np.ndarray) -> np.ndarray:
    """Embed an id vector plus side features through a tower network."""
    id_embedding = np.asarray(id_embedding, dtype=np.float64)
    side_features = np.asarray(side_features, dtype=np.float64)
    x = np.concatenate([id_embedding, side_features], axis=-1)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"tower input has {x.shape[-1]} features, net expects {net.input_dim}")
    return net.forward(x)


class ConstraintFeatureMapG:
    """Deterministic map from constraint bits to a real descriptor ``g(c)``.

    ``copy_bits`` lists bit indices copied verbatim (default: all bits).
    Each entry of ``continuous`` is ``(bit_indices, values)``: a one-hot
    discretized block whose active bit is decoded back to a real value
    (mean over active bits when several are set).
    """

    def __init__(self, d: int, copy_bits: Sequence[int] | None = None,
                 continuous: Sequence[tuple[Sequence[int], Sequence[float]]] = ()):
        self.d = d
        self.copy_bits = np.arange(d) if copy_bits is None else np.asarray(copy_bits, dtype=np.int64)
        self.continuous = [(np.asarray(ix, dtype=np.int64), np.asarray(vals, dtype=np.float64))
                           for ix, vals in continuous]
        for ix, vals in self.continuous:
            if ix.shape != vals.shape:
                raise ConfigurationError("each continuous block needs one value per bit")

    @property
    def p(self) -> int:
        return int(self.copy_bits.size + len(self.continuous))

    def __call__(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.float64)
        if bits.shape[-1] != self.d:
            raise ValueError(f"constraint length {bits.shape[-1]} != {self.d}")
        parts = [bits[..., self.copy_bits]]
        for ix, vals in self.continuous:
            block = bits[..., ix]
            count = np.maximum(block.sum(axis=-1, keepdims=True), 1.0)
            parts.append((block @ vals)[..., None] / count)
        return np.concatenate(parts, axis=-1)

    def to_dict(self) -> dict:
        return {"d": self.d, "copy_bits": self.copy_bits.tolist(),
                "continuous": [[ix.tolist(), vals.tolist()] for ix, vals in self.continuous]}

    @classmethod
    def from_dict(cls, doc: dict) -> ConstraintFeatureMapG:
        return cls(doc["d"], doc["copy_bits"], [tuple(x) for x in doc["continuous"]])
