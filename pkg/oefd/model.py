"""Small feed-forward encoder with hand-written reverse mode, plus momentum SGD."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .numerics import Matrix, RandomSource, as_matrix, normalize_rows
from .schemas import EncoderSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderParams:
    """Layer l maps h -> h @ weights[l] + biases[l] (weights are fan_in x fan_out)."""
    spec: EncoderSpec
    weights: Tuple[Matrix, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        widths = self.spec.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError(f"expected {len(widths) - 1} layers, got {len(self.weights)} weights "
                             f"and {len(self.biases)} biases")
        weights, biases = [], []
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = as_matrix(w, f"layer {layer} weights")
            b = np.ascontiguousarray(b, dtype=np.float64)
            expected = (widths[layer], widths[layer + 1])
            if w.shape != expected or b.shape != (widths[layer + 1],):
                raise ShapeError(f"layer {layer}: weights {w.shape} / bias {b.shape} do not match "
                                 f"{expected} / ({widths[layer + 1]},)")
            if not np.all(np.isfinite(b)):
                raise ShapeError(f"layer {layer} bias has non-finite entries")
            weights.append(w)
            biases.append(b)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def as_dict(self) -> Dict[str, np.ndarray]:
        named = {}
        for layer in range(self.num_layers):
            named[f"w{layer}"] = self.weights[layer]
            named[f"b{layer}"] = self.biases[layer]
        return named

    def replace(self, named: Mapping[str, np.ndarray]) -> "EncoderParams":
        return EncoderParams(
            spec=self.spec,
            weights=tuple(named[f"w{layer}"] for layer in range(self.num_layers)),
            biases=tuple(named[f"b{layer}"] for layer in range(self.num_layers)),
        )


@dataclass(frozen=True)
class EncoderGradients:
    weights: Tuple[Matrix, ...]
    biases: Tuple[np.ndarray, ...]
    inputs: Matrix

    def as_dict(self) -> Dict[str, np.ndarray]:
        named = {}
        for layer in range(len(self.weights)):
            named[f"w{layer}"] = self.weights[layer]
            named[f"b{layer}"] = self.biases[layer]
        return named


def init_encoder(spec: EncoderSpec, rng: RandomSource) -> EncoderParams:
    """Weights ~ U(-1, 1) / sqrt(fan_in), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        weights.append(rng.uniform(-1.0, 1.0, (fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return EncoderParams(spec=spec, weights=tuple(weights), biases=tuple(biases))


def identity_encoder(dim: int) -> EncoderParams:
    """Single linear layer with W = I and b = 0."""
    spec = EncoderSpec(layer_widths=[dim, dim])
    return EncoderParams(spec=spec, weights=(np.eye(dim),), biases=(np.zeros(dim),))


def init_classifier(num_classes: int, dim: int, rng: RandomSource) -> Matrix:
    return rng.unit_vectors(num_classes, dim)


def _activation(kind: str, z: Matrix) -> Matrix:
    return np.maximum(z, 0.0) if kind == "rectifier" else z


def _forward_trace(params: EncoderParams, inputs: Matrix) -> Tuple[List[Matrix], List[Matrix]]:
    """Returns the layer inputs and pre-activations of every layer."""
    if inputs.ndim != 2 or inputs.shape[1] != params.spec.input_dim:
        raise ShapeError.mismatch("encoder input", inputs.shape, (inputs.shape[0], params.spec.input_dim))
    layer_inputs, pre_activations = [], []
    h = inputs
    for layer in range(params.num_layers):
        layer_inputs.append(h)
        z = h @ params.weights[layer] + params.biases[layer]
        pre_activations.append(z)
        hidden = layer < params.num_layers - 1
        h = _activation(params.spec.nonlinearity[layer], z) if hidden else z
    return layer_inputs, pre_activations


def forward(params: EncoderParams, inputs: Matrix) -> Matrix:
    _, pre_activations = _forward_trace(params, np.asarray(inputs, dtype=np.float64))
    return pre_activations[-1]


def backward(params: EncoderParams, inputs: Matrix, grad_embeddings: Matrix) -> EncoderGradients:
    """Reverse-mode gradients of sum(grad_embeddings * forward(params, inputs))."""
    inputs = np.asarray(inputs, dtype=np.float64)
    layer_inputs, pre_activations = _forward_trace(params, inputs)
    if grad_embeddings.shape != pre_activations[-1].shape:
        raise ShapeError.mismatch("grad_embeddings", grad_embeddings.shape, pre_activations[-1].shape)
    grad_w: List[Matrix] = [None] * params.num_layers
    grad_b: List[np.ndarray] = [None] * params.num_layers
    delta = grad_embeddings
    for layer in reversed(range(params.num_layers)):
        grad_w[layer] = layer_inputs[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        delta = delta @ params.weights[layer].T
        if layer > 0 and params.spec.nonlinearity[layer - 1] == "rectifier":
            delta = delta * (pre_activations[layer - 1] > 0.0)
    return EncoderGradients(weights=tuple(grad_w), biases=tuple(grad_b), inputs=delta)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
             momentum: float, velocity: Optional[Mapping[str, np.ndarray]] = None,
             unit_norm_keys: Sequence[str] = ()) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """velocity = momentum * velocity + grad; param -= lr * velocity.

    Entries named in ``unit_norm_keys`` have their rows renormalized afterwards.
    Returns fresh (params, velocity) dicts; the inputs are not modified.
    """
    velocity = velocity or {}
    new_params, new_velocity = {}, {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(value):
            raise ShapeError.mismatch(f"gradient for {name}", grad.shape, np.shape(value))
        v = momentum * velocity[name] + grad if name in velocity else grad.copy()
        updated = value - lr * v
        if name in unit_norm_keys:
            updated = normalize_rows(updated)
        new_params[name] = updated
        new_velocity[name] = v
    return new_params, new_velocity
