"""Analytic-vs-finite-difference gradient checks over a fixed configuration matrix."""
import itertools
import logging
from typing import Callable, Dict, List

import numpy as np
from pydantic import BaseModel

from .losses import LabeledBatch, age_loss, combine, identity_loss_from_arrays
from .model import EncoderParams, backward, forward, init_encoder
from .numerics import DEFAULT_FD_STEP, RandomSource, finite_difference_gradient, relative_error, row_norms
from .schemas import AgeHead, AngularMarginConfig, EncoderSpec

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
MARGINS = (1, 2, 4)
SCALES = (1.0, 32.0)
LAMBDAS = (0.0, 0.01, 1.0)


class GradCheckResult(BaseModel):
    name: str
    m: int
    s: float
    lam: float
    anneal_weight: float
    errors: Dict[str, float]
    worst: float
    passed: bool


class GradCheckReport(BaseModel):
    results: List[GradCheckResult]
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]


def _loss_problem(rng: RandomSource, samples: int = 6, dim: int = 4, classes: int = 5):
    features = rng.normal((samples, dim))
    labels = rng.generator.integers(0, classes, samples)
    weights = rng.unit_vectors(classes, dim)
    ages = row_norms(features) + rng.normal(samples)
    slope, intercept = float(rng.uniform(0.5, 1.5)), float(rng.uniform(-1.0, 1.0))
    return features, labels, weights, ages, slope, intercept


def _finish(name: str, margin: AngularMarginConfig, lam: float, errors: Dict[str, float],
            tolerance: float) -> GradCheckResult:
    worst = max(errors.values())
    return GradCheckResult(name=name, m=margin.m, s=margin.s, lam=lam, anneal_weight=margin.anneal_weight,
                           errors=errors, worst=worst, passed=worst < tolerance)


def check_loss_config(margin: AngularMarginConfig, lam: float, seed: int, h: float = DEFAULT_FD_STEP,
                      tolerance: float = TOLERANCE, corrupt: bool = False) -> GradCheckResult:
    """Checks L_id, L_age and L = L_id + lambda L_age w.r.t. features, weights, slope and intercept."""
    features, labels, weights, ages, slope, intercept = _loss_problem(RandomSource(seed))

    def id_value(f, w):
        return identity_loss_from_arrays(f, labels, w, margin).value

    def age_value(f, k, b):
        return age_loss(LabeledBatch(f, labels, ages), AgeHead(slope=k, intercept=b), weights.shape[0]).value

    def total_value(f, w, k, b):
        return id_value(f, w) + lam * age_value(f, k, b)

    id_res = identity_loss_from_arrays(features, labels, weights, margin)
    age_res = age_loss(LabeledBatch(features, labels, ages), AgeHead(slope=slope, intercept=intercept),
                       num_classes=weights.shape[0])
    total = combine(id_res, age_res, lam)
    grad_total_features = total.grad_features * (1.01 if corrupt else 1.0)

    fd = finite_difference_gradient
    errors = {
        "id.features": relative_error(id_res.grad_features, fd(lambda f: id_value(f, weights), features, h)),
        "id.weights": relative_error(id_res.grad_weights, fd(lambda w: id_value(features, w), weights, h)),
        "age.features": relative_error(age_res.grad_features,
                                       fd(lambda f: age_value(f, slope, intercept), features, h)),
        "age.slope": relative_error(np.array([age_res.grad_age_head[0]]),
                                    fd(lambda k: age_value(features, k[0], intercept), np.array([slope]), h)),
        "age.intercept": relative_error(np.array([age_res.grad_age_head[1]]),
                                        fd(lambda b: age_value(features, slope, b[0]), np.array([intercept]), h)),
        "total.features": relative_error(grad_total_features,
                                         fd(lambda f: total_value(f, weights, slope, intercept), features, h)),
        "total.weights": relative_error(total.grad_weights,
                                        fd(lambda w: total_value(features, w, slope, intercept), weights, h)),
        "total.slope": relative_error(np.array([total.grad_age_head[0]]),
                                      fd(lambda k: total_value(features, weights, k[0], intercept),
                                         np.array([slope]), h)),
        "total.intercept": relative_error(np.array([total.grad_age_head[1]]),
                                          fd(lambda b: total_value(features, weights, slope, b[0]),
                                             np.array([intercept]), h)),
    }
    name = f"loss m={margin.m} s={margin.s:g} lambda={lam:g} anneal={margin.anneal_weight:g}"
    return _finish(name, margin, lam, errors, tolerance)


def check_encoder_config(margin: AngularMarginConfig, lam: float, seed: int, h: float = DEFAULT_FD_STEP,
                         tolerance: float = TOLERANCE, corrupt: bool = False) -> GradCheckResult:
    """End-to-end check: combined loss through a 2-layer encoder on an 8-sample batch."""
    rng = RandomSource(seed)
    spec = EncoderSpec(layer_widths=[5, 7, 3], nonlinearity=["rectifier"])
    params = init_encoder(spec, rng.stream(0))
    data_rng = rng.stream(1)
    inputs = data_rng.normal((8, 5))
    labels = data_rng.generator.integers(0, 4, 8)
    weights = data_rng.unit_vectors(4, 3)
    ages = data_rng.uniform(0.5, 3.0, 8)
    head = AgeHead(slope=1.0, intercept=0.0)

    def loss_of(p: EncoderParams):
        emb = forward(p, inputs)
        id_res = identity_loss_from_arrays(emb, labels, weights, margin)
        age_res = age_loss(LabeledBatch(emb, labels, ages), head, num_classes=weights.shape[0])
        return combine(id_res, age_res, lam)

    grads = backward(params, inputs, loss_of(params).grad_features).as_dict()
    named = params.as_dict()
    errors = {}
    for key, value in named.items():
        def f(x: np.ndarray, key: str = key) -> float:
            return loss_of(params.replace(dict(named, **{key: x}))).value
        analytic = grads[key] * (1.01 if corrupt else 1.0)
        errors[f"encoder.{key}"] = relative_error(analytic, finite_difference_gradient(f, value, h))
    name = f"encoder m={margin.m} s={margin.s:g} lambda={lam:g}"
    return _finish(name, margin, lam, errors, tolerance)


def run_grad_check(seed: int = 0, h: float = DEFAULT_FD_STEP, tolerance: float = TOLERANCE,
                   corrupt: bool = False, progress: Callable[[GradCheckResult], None] = None) -> GradCheckReport:
    """The full matrix: m x s x lambda loss checks, two annealed variants and four encoder checks."""
    results: List[GradCheckResult] = []

    def record(result: GradCheckResult) -> None:
        results.append(result)
        logger.debug("%s worst=%.3e", result.name, result.worst)
        if progress:
            progress(result)

    index = 0
    for m, s, lam in itertools.product(MARGINS, SCALES, LAMBDAS):
        margin = AngularMarginConfig(m=m, s=s, anneal_weight=0.0)
        record(check_loss_config(margin, lam, seed + index, h, tolerance, corrupt))
        index += 1
    for s in SCALES:
        margin = AngularMarginConfig(m=4, s=s, anneal_weight=5.0)
        record(check_loss_config(margin, 0.01, seed + index, h, tolerance, corrupt))
        index += 1
    for (m, s), lam in zip(itertools.product((1, 4), SCALES), (0.01, 1.0, 0.01, 1.0)):
        margin = AngularMarginConfig(m=m, s=s, anneal_weight=0.0)
        record(check_encoder_config(margin, lam, seed + index, h, tolerance, corrupt))
        index += 1
    return GradCheckReport(results=results, tolerance=tolerance)
