"""Sequential network with a recording tape for reverse-mode differentiation.

The tape stores, per layer, the input, the layer context and the output, in
execution order. Besides plain gradients this is what the modified backward
walks (guided backprop, relevance propagation) consume.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, TapeConsumed
from .layers import Layer, build_layer


class TapeEntry:
    __slots__ = ("layer", "x", "ctx", "y")

    def __init__(self, layer, x, ctx, y):
        self.layer = layer
        self.x = x
        self.ctx = ctx
        self.y = y


class Tape:
    """Single-use record of one forward pass."""

    def __init__(self, entries: list[TapeEntry], output_shape):
        self.entries = entries
        self.output_shape = output_shape
        self._consumed = False

    def consume(self):
        if self._consumed:
            raise TapeConsumed("tape already used by a backward pass")
        self._consumed = True
        return self.entries


class Network:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def init(self, seed: int, dtype=np.float32) -> "Network":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, dtype)
        return self

    def forward(self, x: np.ndarray, record: bool = False):
        """Apply all layers; with record=True also return a single-use Tape."""
        entries = [] if record else None
        for layer in self.layers:
            y, ctx = layer.forward(x)
            if record:
                entries.append(TapeEntry(layer, x, ctx, y))
            x = y
        return (x, Tape(entries, x.shape)) if record else (x, None)

    def backward(self, tape: Tape, upstream: np.ndarray):
        """Exact reverse-mode derivatives of the recorded computation.

        Returns (param_grads, input_grad) where param_grads is a list of
        per-layer dicts aligned with self.layers.
        """
        if upstream.shape != tape.output_shape:
            raise ShapeMismatch(
                "upstream shape %s != forward output shape %s"
                % (upstream.shape, tape.output_shape)
            )
        entries = tape.consume()
        param_grads = [None] * len(self.layers)
        g = upstream
        for i in range(len(entries) - 1, -1, -1):
            entry = entries[i]
            g, grads = entry.layer.backward(entry.ctx, g)
            param_grads[i] = grads
        return param_grads, g

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            for name in sorted(layer.params):
                out.append(layer.params[name])
        return out

    def set_parameters(self, arrays: list[np.ndarray]) -> None:
        i = 0
        for layer in self.layers:
            for name in sorted(layer.params):
                layer.params[name] = arrays[i]
                i += 1
        if i != len(arrays):
            raise ShapeMismatch("expected %d parameter arrays, got %d" % (i, len(arrays)))

    def flatten_grads(self, param_grads) -> list[np.ndarray]:
        """Order per-layer grad dicts to match parameters()."""
        out = []
        for layer, grads in zip(self.layers, param_grads):
            for name in sorted(layer.params):
                out.append(grads[name])
        return out

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    def astype(self, dtype) -> "Network":
        net = Network([build_layer(cfg) for cfg in self.config()])
        net.set_parameters([p.astype(dtype) for p in self.parameters()])
        return net


def build_network(configs: list[dict], seed: int | None = None, dtype=np.float32) -> Network:
    net = Network([build_layer(cfg) for cfg in configs])
    if seed is not None:
        net.init(seed, dtype)
    return net
