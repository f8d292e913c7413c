"""Graph convolutional model: parameters, propagation, forward pass.

Each layer computes act(P @ X @ W + b) where P is the symmetric
renormalized propagation matrix D^-1/2 (A + I) D^-1/2 with degrees taken
after adding the self loop. The canonical architecture is six layers with
widths 9 -> 32 -> 32 -> 32 -> 32 -> 32 -> 1, ELU on the hidden layers and
a sigmoid head, 4577 parameters in total.

All arithmetic is float64; callers may down-cast for inference timing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AsymmetricInput, FormatError, NegativeWeight, ShapeMismatch
from .graph_build import FieldGraph

CANONICAL_WIDTHS = (9, 32, 32, 32, 32, 32, 1)
CANONICAL_PARAM_COUNT = 4577

_ACTIVATIONS = ("elu", "sigmoid")
_SCHEMA_VERSION = 1


@dataclass
class GcnLayer:
    weight: np.ndarray  # (fan_in, fan_out) float64
    bias: np.ndarray    # (fan_out,) float64
    activation: str     # "elu" or "sigmoid"


@dataclass
class GcnModel:
    layers: list[GcnLayer]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].weight.shape[0],) + tuple(
            layer.weight.shape[1] for layer in self.layers
        )


def init_params(widths: tuple[int, ...] = CANONICAL_WIDTHS, seed: int = 0) -> GcnModel:
    """Glorot-uniform weights, zero biases, deterministic per seed.

    The uniform bound per layer is sqrt(6 / (fan_in + fan_out)).
    """
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    last = len(widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            GcnLayer(
                weight=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                bias=np.zeros(fan_out),
                activation="sigmoid" if i == last else "elu",
            )
        )
    return GcnModel(layers=layers)


def per_layer_param_counts(m: GcnModel) -> list[int]:
    """Weight plus bias count for each layer."""
    return [layer.weight.size + layer.bias.size for layer in m.layers]


def param_count(m: GcnModel) -> int:
    """Total trainable parameter count."""
    return sum(per_layer_param_counts(m))


def renormalize(adjacency: np.ndarray) -> np.ndarray:
    """Propagation matrix D^-1/2 (A + I) D^-1/2 with self-loop degrees.

    The input must be square, symmetric, and non-negative. The output is
    exactly symmetric (scales come from one outer product) and equals the
    identity when A is all zero, which keeps padded nodes inert.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise AsymmetricInput("adjacency must be symmetric")
    if a.size and a.min() < 0.0:
        raise NegativeWeight("adjacency must be non-negative")
    degrees = a.sum(axis=1) + 1.0
    inv_sqrt = 1.0 / np.sqrt(degrees)
    a_tilde = a + np.eye(a.shape[0])
    return a_tilde * np.outer(inv_sqrt, inv_sqrt)


def elu(x: np.ndarray) -> np.ndarray:
    """ELU with unit alpha: x above zero, expm1(x) at or below."""
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x: np.ndarray, name: str) -> np.ndarray:
    """Apply a named activation."""
    if name == "elu":
        return elu(x)
    if name == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


def layer_forward(p: np.ndarray, x: np.ndarray, layer: GcnLayer) -> np.ndarray:
    """One graph convolution: act(P @ X @ W + b)."""
    if x.shape[0] != p.shape[0]:
        raise ShapeMismatch(f"x has {x.shape[0]} rows, p is {p.shape[0]}x{p.shape[1]}")
    if x.shape[1] != layer.weight.shape[0]:
        raise ShapeMismatch(
            f"x has width {x.shape[1]}, layer expects {layer.weight.shape[0]}"
        )
    return activate(p @ x @ layer.weight + layer.bias, layer.activation)


def forward_propagated(p: np.ndarray, x: np.ndarray, m: GcnModel) -> np.ndarray:
    """Forward pass given a precomputed propagation matrix; returns (n,)."""
    z = x
    for layer in m.layers:
        z = layer_forward(p, z, layer)
    if z.shape[1] != 1:
        raise ShapeMismatch(f"model head must have width 1, got {z.shape[1]}")
    return z[:, 0]


def model_forward(g: FieldGraph, m: GcnModel) -> np.ndarray:
    """Per-node predictions in (0, 1) for one field graph."""
    p = renormalize(g.adjacency)
    return forward_propagated(p, g.features, m)


def _f32_exact(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=np.float32).astype(np.float64).tolist()


def save_checkpoint(m: GcnModel, path: str | Path) -> None:
    """Write model parameters as schema_version 1 JSON at 32-bit precision."""
    doc = {
        "schema_version": _SCHEMA_VERSION,
        "widths": list(m.widths),
        "layers": [
            {
                "weight": _f32_exact(layer.weight),
                "bias": _f32_exact(layer.bias),
                "activation": layer.activation,
            }
            for layer in m.layers
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> GcnModel:
    """Read a checkpoint, validating shapes against the declared widths.

    A checkpoint with the canonical widths must carry exactly 4577
    parameters; anything else is rejected as malformed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != _SCHEMA_VERSION:
        raise FormatError(f"{path}: missing or unsupported schema_version")
    try:
        widths = tuple(int(w) for w in doc["widths"])
        raw_layers = doc["layers"]
        if len(raw_layers) != len(widths) - 1:
            raise FormatError(
                f"{path}: {len(raw_layers)} layers do not fit widths {widths}"
            )
        layers = []
        for i, raw in enumerate(raw_layers):
            weight = np.asarray(raw["weight"], dtype=np.float64)
            bias = np.asarray(raw["bias"], dtype=np.float64)
            activation = raw["activation"]
            if weight.shape != (widths[i], widths[i + 1]) or bias.shape != (widths[i + 1],):
                raise FormatError(f"{path}: layer {i} shapes do not match widths")
            if activation not in _ACTIVATIONS:
                raise FormatError(f"{path}: layer {i} has unknown activation {activation!r}")
            layers.append(GcnLayer(weight=weight, bias=bias, activation=activation))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed checkpoint: {exc}") from exc
    model = GcnModel(layers=layers)
    if widths == CANONICAL_WIDTHS and param_count(model) != CANONICAL_PARAM_COUNT:
        raise FormatError(
            f"{path}: canonical model must have {CANONICAL_PARAM_COUNT} parameters, "
            f"found {param_count(model)}"
        )
    return model
