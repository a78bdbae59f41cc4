"""Fully-connected networks: specs, initialization, forward graphs and the
neuron-saturation diagnostic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ParamVector, forward, layer_slices


@dataclass(frozen=True)
class MlpSpec:
    """Dense network: layer sizes (input, hidden..., output) and the hidden
    activation; the output layer is always linear."""

    layer_sizes: tuple
    hidden_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.hidden_activation not in ("tanh", "relu"):
            raise ValueError("hidden_activation must be 'tanh' or 'relu'")

    @property
    def layers(self):
        sizes = self.layer_sizes
        return tuple((sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1))


def param_count(spec: MlpSpec) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in spec.layers)


def init(spec: MlpSpec, seed: int) -> ParamVector:
    """Seeded initialization: Glorot-uniform weights for tanh nets, He-normal
    for relu nets, zero biases."""
    rng = np.random.default_rng(seed)
    slices, total = layer_slices(spec.layers)
    values = np.zeros(total)
    for (ws, _), (n_in, n_out) in zip(slices, spec.layers):
        if spec.hidden_activation == "relu":
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
        values[ws] = w.ravel()
    return ParamVector(values, spec.layers)


def build_forward_graph(spec: MlpSpec) -> Graph:
    """Graph computing the MLP; hidden post-activation nodes are tagged for
    the saturation diagnostic."""
    g = Graph(spec.layer_sizes[0])
    h = g.input_node
    layers = spec.layers
    for i, (n_in, n_out) in enumerate(layers):
        h = g.affine(h, n_in, n_out)
        if i < len(layers) - 1:
            h = g.tanh(h) if spec.hidden_activation == "tanh" else g.relu(h)
            g.mark_hidden(h)
    g.mark_output(h)
    return g


def neuron_saturation_stats(spec: MlpSpec, theta: ParamVector, inputs: np.ndarray,
                            graph: Graph | None = None):
    """Per-hidden-neuron (mean, std) of post-activation outputs over inputs.

    Returns two flat arrays covering all hidden layers in order. std uses
    the population convention (ddof=0).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] < 2:
        raise ValueError("need at least 2 inputs for saturation statistics")
    if graph is None:
        graph = build_forward_graph(spec)
    vals = forward(graph, theta, inputs)
    acts = np.concatenate([vals[i] for i in graph.hidden_activations], axis=-1)
    return acts.mean(axis=0), acts.std(axis=0)


# ---------------------------------------------------------------------------
# serialization: little-endian float64 payload with a small JSON header

_MAGIC = b"HGPV"


def save_params(path, spec: MlpSpec, theta: ParamVector, seed=None) -> None:
    header = json.dumps({
        "layer_sizes": list(spec.layer_sizes),
        "hidden_activation": spec.hidden_activation,
        "seed": seed,
    }).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(theta.values.astype("<f8").tobytes())


def load_params(path):
    """Returns (spec, theta, header dict)."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a parameter file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        payload = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    spec = MlpSpec(tuple(header["layer_sizes"]), header["hidden_activation"])
    theta = ParamVector(payload, spec.layers)
    return spec, theta, header
