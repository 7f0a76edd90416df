"""Spherical decomposition of embeddings and the multi-task angular-margin objective.

An embedding x splits into its norm (carrier of age) and its unit direction
(carrier of identity).  The identity loss only ever sees directions; the age
loss only ever sees norms, regressed linearly onto the age label.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import DomainError, LabelError, NumericalError, ShapeError
from .numerics import DEFAULT_EPS, Matrix, as_matrix, as_vector, normalize_rows, row_norms
from .schemas import AgeHead, AngularMarginConfig, MultiTaskConfig

logger = logging.getLogger(__name__)

# Cosines are kept this far away from +-1 before arccos.
COS_CLAMP = 1e-9
UNIT_NORM_TOL = 1e-10


# --- Domain types ---

@dataclass(frozen=True)
class DecomposedFeature:
    norm: float
    direction: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class AngularClassifier:
    """One unit-norm weight row per identity class."""
    weights: Matrix

    def __post_init__(self):
        w = as_matrix(self.weights, "classifier weights")
        deviation = np.abs(row_norms(w) - 1.0)
        if deviation.size and deviation.max() > UNIT_NORM_TOL:
            row = int(np.argmax(deviation))
            raise DomainError(f"classifier row {row} has norm {row_norms(w)[row]!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, weights: Matrix) -> "AngularClassifier":
        return cls(normalize_rows(as_matrix(weights, "classifier weights")))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class LabeledBatch:
    features: Matrix
    identity_labels: np.ndarray
    age_labels: np.ndarray

    def __post_init__(self):
        features = as_matrix(self.features, "features")
        ids = np.asarray(self.identity_labels)
        if ids.ndim != 1 or (ids.size and not np.issubdtype(ids.dtype, np.integer)):
            raise LabelError("identity_labels must be a 1-D integer array")
        ages = as_vector(self.age_labels, "age_labels")
        if not (features.shape[0] == ids.shape[0] == ages.shape[0]):
            raise ShapeError(
                f"batch fields disagree on M: features {features.shape[0]}, "
                f"identity_labels {ids.shape[0]}, age_labels {ages.shape[0]}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "identity_labels", ids.astype(np.int64))
        object.__setattr__(self, "age_labels", ages)

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class LossResult:
    value: float
    grad_features: Matrix
    grad_weights: Matrix
    grad_age_head: Tuple[float, float] = (0.0, 0.0)
    parts: Dict[str, float] = field(default_factory=dict)


# --- Decomposition ---

def decompose(x: np.ndarray, eps: float = DEFAULT_EPS) -> DecomposedFeature:
    v = as_vector(x, "feature")
    if v.size == 0:
        raise ShapeError("cannot decompose a zero-dimensional feature")
    norm = float(np.linalg.norm(v))
    degenerate = norm <= eps
    if degenerate:
        logger.warning("Degenerate feature with norm %r <= eps %r", norm, eps)
    return DecomposedFeature(norm=norm, direction=v / max(norm, eps), degenerate=degenerate)


def recompose(d: DecomposedFeature) -> np.ndarray:
    return d.norm * d.direction


# --- The piecewise margin function ---

def _check_theta(theta: float) -> None:
    if not (0.0 <= theta <= math.pi):
        raise DomainError(f"theta {theta!r} lies outside [0, pi]")


def segment_index(theta: float, m: int) -> int:
    _check_theta(theta)
    if m < 1:
        raise DomainError(f"margin m must be >= 1, got {m}")
    return min(int(math.floor(m * theta / math.pi)), m - 1)


def psi_on_segment(theta: float, m: int, k: int) -> float:
    """The k-th segment formula, evaluated without choosing k from theta."""
    return (-1.0) ** k * math.cos(m * theta) - 2.0 * k


def psi(theta: float, m: int) -> float:
    return psi_on_segment(theta, m, segment_index(theta, m))


def psi_from_cosine(cos_theta: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized psi(arccos c) and its derivative d psi / d c.

    For m > 1 the cosine is clamped to [-1 + 1e-9, 1 - 1e-9] first and the
    derivative is evaluated at the clamped point.
    """
    c = np.asarray(cos_theta, dtype=np.float64)
    if m == 1:
        return c.copy(), np.ones_like(c)
    c = np.clip(c, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    theta = np.arccos(c)
    k = np.minimum(np.floor(m * theta / np.pi), m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    values = sign * np.cos(m * theta) - 2.0 * k
    # d/dc [(-1)^k cos(m arccos c)] = (-1)^k m sin(m theta) / sin(theta)
    slopes = sign * m * np.sin(m * theta) / np.sin(theta)
    return values, slopes


# --- Identity loss ---

def _log_softmax_terms(logits: Matrix, labels: np.ndarray) -> Tuple[np.ndarray, Matrix]:
    """Per-sample cross-entropy and the softmax probabilities, max-shifted."""
    rows = np.arange(logits.shape[0])
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    total = exp.sum(axis=1)
    per_sample = (shift[:, 0] - logits[rows, labels]) + np.log(total)
    return per_sample, exp / total[:, None]


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"identity label {int(labels[i])} of sample {i} is outside [0, {num_classes})")


def _check_finite_samples(per_sample: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(f"non-finite {what} loss term", sample_index=i)


def identity_loss_from_arrays(features: Matrix, labels: np.ndarray, weights: Matrix,
                              cfg: AngularMarginConfig, eps: float = DEFAULT_EPS) -> LossResult:
    """Scaled angular-margin loss on raw arrays.

    Both feature rows and weight rows are normalized here, so the gradients
    are with respect to the raw arrays passed in.
    """
    M, C = features.shape[0], weights.shape[0]
    if M == 0:
        raise ShapeError("identity loss needs at least one sample")
    if features.shape[1] != weights.shape[1]:
        raise ShapeError.mismatch("identity loss features vs weights", features.shape, weights.shape)
    _check_labels(labels, C)

    r = row_norms(features)
    zero = np.flatnonzero(r <= eps)
    if zero.size:
        raise NumericalError("feature row has (near) zero norm", sample_index=int(zero[0]))
    w_norm = row_norms(weights)
    u = features / r[:, None]
    w_hat = weights / np.maximum(w_norm, eps)[:, None]

    rows = np.arange(M)
    cos = u @ w_hat.T
    target_cos = cos[rows, labels]
    psi_values, psi_slopes = psi_from_cosine(target_cos, cfg.m)
    a = cfg.anneal_weight
    target = (a * target_cos + psi_values) / (1.0 + a)
    target_slope = (a + psi_slopes) / (1.0 + a)

    logits = cfg.s * cos
    logits[rows, labels] = cfg.s * target
    per_sample, probs = _log_softmax_terms(logits, labels)
    _check_finite_samples(per_sample, "identity")

    d_logits = probs
    d_logits[rows, labels] -= 1.0
    d_cos = (cfg.s / M) * d_logits
    d_cos[rows, labels] *= target_slope

    # Back through the row normalizations: project out the radial direction.
    g_u = d_cos @ w_hat
    grad_features = (g_u - np.einsum("ij,ij->i", g_u, u)[:, None] * u) / r[:, None]
    g_w = d_cos.T @ u
    grad_weights = (g_w - np.einsum("ij,ij->i", g_w, w_hat)[:, None] * w_hat) / np.maximum(w_norm, eps)[:, None]

    value = float(np.mean(per_sample))
    return LossResult(value=value, grad_features=grad_features, grad_weights=grad_weights,
                      grad_age_head=(0.0, 0.0), parts={"identity": value})


def identity_loss(batch: LabeledBatch, classifier: AngularClassifier, cfg: AngularMarginConfig) -> LossResult:
    return identity_loss_from_arrays(batch.features, batch.identity_labels, classifier.weights, cfg)


def softmax_loss(features: Matrix, labels: np.ndarray, weights: Matrix) -> LossResult:
    """Plain softmax cross-entropy on raw logits x . w_j (no normalization, no margin)."""
    M, C = features.shape[0], weights.shape[0]
    if M == 0:
        raise ShapeError("softmax loss needs at least one sample")
    if features.shape[1] != weights.shape[1]:
        raise ShapeError.mismatch("softmax loss features vs weights", features.shape, weights.shape)
    _check_labels(labels, C)
    per_sample, probs = _log_softmax_terms(features @ weights.T, labels)
    _check_finite_samples(per_sample, "softmax")
    d_logits = probs
    d_logits[np.arange(M), labels] -= 1.0
    d_logits /= M
    value = float(np.mean(per_sample))
    return LossResult(value=value, grad_features=d_logits @ weights, grad_weights=d_logits.T @ features,
                      grad_age_head=(0.0, 0.0), parts={"identity": value})


# --- Age loss ---

def predict_age(norms: np.ndarray, head: AgeHead) -> np.ndarray:
    return head.slope * np.asarray(norms, dtype=np.float64) + head.intercept


def age_loss(batch: LabeledBatch, head: AgeHead, num_classes: int) -> LossResult:
    """Linear regression of the age label on the feature norm.

    The feature gradient is purely radial; ``grad_weights`` is a zero
    ``num_classes x n`` matrix, so it adds directly onto the identity loss
    classifier gradient.
    """
    M, n = batch.features.shape
    if M == 0:
        raise ShapeError("age loss needs at least one sample")
    norms = row_norms(batch.features)
    residual = predict_age(norms, head) - batch.age_labels
    _check_finite_samples(residual, "age")
    value = 0.5 * float(np.mean(residual * residual))
    grad_features = ((head.slope / M) * residual)[:, None] * normalize_rows(batch.features)
    grad_head = (float(np.mean(residual * norms)), float(np.mean(residual)))
    return LossResult(value=value, grad_features=grad_features, grad_weights=np.zeros((num_classes, n)),
                      grad_age_head=grad_head, parts={"age": value})


# --- Multi-task combination ---

def combine(id_result: LossResult, age_result: LossResult, lam: float,
            age_grad_to_encoder: bool = True) -> LossResult:
    """L = L_id + lambda * L_age, field by field."""
    grad_features = id_result.grad_features
    if age_grad_to_encoder:
        grad_features = grad_features + lam * age_result.grad_features
    return LossResult(
        value=id_result.value + lam * age_result.value,
        grad_features=grad_features,
        grad_weights=id_result.grad_weights + lam * age_result.grad_weights,
        grad_age_head=(id_result.grad_age_head[0] + lam * age_result.grad_age_head[0],
                       id_result.grad_age_head[1] + lam * age_result.grad_age_head[1]),
        parts={"identity": id_result.value, "age": age_result.value},
    )


def combined_loss(batch: LabeledBatch, classifier: AngularClassifier, head: AgeHead,
                  margin_cfg: AngularMarginConfig, mt_cfg: MultiTaskConfig) -> LossResult:
    id_result = identity_loss(batch, classifier, margin_cfg)
    age_result = age_loss(batch, head, num_classes=classifier.num_classes)
    return combine(id_result, age_result, mt_cfg.lambda_, mt_cfg.age_grad_to_encoder)


# --- Prediction ---

def classify(embeddings: Matrix, weights: Matrix, angular: bool = True) -> np.ndarray:
    """Predicted class per row: largest cosine (angular) or largest raw logit."""
    if angular:
        scores = normalize_rows(embeddings) @ normalize_rows(weights).T
    else:
        scores = embeddings @ weights.T
    return np.argmax(scores, axis=1)
