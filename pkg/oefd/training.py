"""SGD training of encoder + classifier + age head under the selected loss mode."""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .checkpoint import Checkpoint
from .datagen import SampleArrays, as_arrays
from .errors import LabelError, NumericalError, ShapeError
from .evaluation import EmbeddingSet, rank1_identification
from .losses import LabeledBatch, age_loss, classify, combine, identity_loss_from_arrays, softmax_loss
from .model import backward, forward, init_classifier, init_encoder, sgd_step
from .numerics import RandomSource
from .schemas import AgeHead, AngularMarginConfig, CrossAgeSplit, EncoderSpec, EvalReport, MultiTaskConfig, \
    SyntheticSample, TrainConfig

logger = logging.getLogger(__name__)

# Stream indices of the training RandomSource.
ENCODER_STREAM, CLASSIFIER_STREAM, SHUFFLE_STREAM = 0, 1, 2
ANNEAL_TARGET = 0.1
ANNEAL_FRACTION = 0.8


class EpochMetrics(BaseModel):
    epoch: int
    lr: float
    total_loss: float
    id_loss: float
    age_loss: float
    train_accuracy: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: List[EpochMetrics] = field(default_factory=list)
    duration: float = 0.0


def derive_anneal_decay(anneal_weight: float, total_steps: int) -> float:
    """Per-step factor that takes the anneal weight below 0.1 after 80% of the steps."""
    if anneal_weight < ANNEAL_TARGET or total_steps == 0:
        return 1.0
    steps = max(1, int(ANNEAL_FRACTION * total_steps))
    return (0.99 * ANNEAL_TARGET / anneal_weight) ** (1.0 / steps)


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    drops = sum(1 for d in cfg.resolved_drop_epochs() if d <= epoch)
    return cfg.learning_rate * cfg.lr_drop_factor ** drops


def initial_checkpoint(spec: EncoderSpec, num_classes: int, margin: AngularMarginConfig,
                       multitask: MultiTaskConfig, cfg: TrainConfig) -> Checkpoint:
    root = RandomSource(cfg.seed)
    return Checkpoint(
        encoder=init_encoder(spec, root.stream(ENCODER_STREAM)),
        classifier=init_classifier(num_classes, spec.embedding_dim, root.stream(CLASSIFIER_STREAM)),
        age_head=AgeHead(slope=1.0, intercept=0.0),
        margin=margin,
        multitask=multitask,
        train=cfg,
        step=0,
        rng_state=root.stream(SHUFFLE_STREAM).get_state(),
    )


def _effective_lambda(cfg: TrainConfig, multitask: MultiTaskConfig) -> float:
    # Only the full objective carries the age term; the baselines train identity alone.
    return multitask.lambda_ if cfg.loss_mode == "oe" else 0.0


def _check_labels(data: SampleArrays, num_classes: int) -> None:
    if len(data) == 0:
        raise ShapeError("training data is empty")
    bad = np.flatnonzero((data.identities < 0) | (data.identities >= num_classes))
    if bad.size:
        raise LabelError(f"identity {int(data.identities[bad[0]])} of sample {int(bad[0])} "
                         f"is outside [0, {num_classes})")


def train(data: SampleArrays, spec: EncoderSpec, margin: AngularMarginConfig, multitask: MultiTaskConfig,
          cfg: TrainConfig, num_classes: Optional[int] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> TrainResult:
    """Runs seeded mini-batch SGD; a pure function of its arguments."""
    start_time = time.time()
    if num_classes is None:
        num_classes = int(data.identities.max()) + 1 if len(data) else 0
    _check_labels(data, num_classes)
    if data.inputs.shape[1] != spec.input_dim:
        raise ShapeError.mismatch("training inputs vs encoder", data.inputs.shape, (len(data), spec.input_dim))

    ckpt = initial_checkpoint(spec, num_classes, margin, multitask, cfg)
    encoder, classifier, head = ckpt.encoder, ckpt.classifier, ckpt.age_head
    shuffle_rng = RandomSource.from_state(ckpt.rng_state)
    angular = cfg.loss_mode != "softmax"
    lam = _effective_lambda(cfg, multitask)
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    decay = margin.anneal_decay if margin.anneal_decay is not None else \
        derive_anneal_decay(margin.anneal_weight, cfg.epochs * steps_per_epoch)
    unit_norm_keys = ("classifier",) if angular else ()

    velocity: Dict[str, np.ndarray] = {}
    metrics: List[EpochMetrics] = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = learning_rate_at(cfg, epoch)
        totals = {"total": 0.0, "identity": 0.0, "age": 0.0}
        order = shuffle_rng.permutation(n)
        for begin in range(0, n, cfg.batch_size):
            idx = order[begin:begin + cfg.batch_size]
            inputs, labels, ages = data.inputs[idx], data.identities[idx], data.ages[idx]
            embeddings = forward(encoder, inputs)
            try:
                if angular:
                    step_margin = margin.model_copy(update={"anneal_weight": margin.anneal_weight * decay ** step})
                    id_result = identity_loss_from_arrays(embeddings, labels, classifier, step_margin)
                else:
                    id_result = softmax_loss(embeddings, labels, classifier)
                age_result = age_loss(LabeledBatch(embeddings, labels, ages), head, num_classes=num_classes)
            except NumericalError as e:
                raise NumericalError(f"training aborted: {e}", step=step,
                                     losses={"epoch": epoch, "last_total": totals["total"]})
            result = combine(id_result, age_result, lam, multitask.age_grad_to_encoder)
            if not math.isfinite(result.value):
                raise NumericalError("training aborted on a non-finite loss", step=step,
                                     losses={"epoch": epoch, "identity": id_result.value, "age": age_result.value})

            enc_grads = backward(encoder, inputs, result.grad_features)
            params = dict(encoder.as_dict(), classifier=classifier)
            grads = dict(enc_grads.as_dict(), classifier=result.grad_weights)
            if not cfg.freeze_age_head:
                params.update(slope=np.array(head.slope), intercept=np.array(head.intercept))
                grads.update(slope=np.array(result.grad_age_head[0]), intercept=np.array(result.grad_age_head[1]))
            params, velocity = sgd_step(params, grads, lr, cfg.momentum, velocity, unit_norm_keys=unit_norm_keys)

            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise NumericalError("training aborted: parameters became non-finite", step=step,
                                     losses={"epoch": epoch, "identity": id_result.value, "age": age_result.value})
            encoder = encoder.replace(params)
            classifier = params["classifier"]
            if not cfg.freeze_age_head:
                head = AgeHead(slope=float(params["slope"]), intercept=float(params["intercept"]))

            m = len(idx)
            totals["total"] += result.value * m
            totals["identity"] += id_result.value * m
            totals["age"] += age_result.value * m
            step += 1

        predictions = classify(forward(encoder, data.inputs), classifier, angular=angular)
        row = EpochMetrics(epoch=epoch, lr=lr, total_loss=totals["total"] / n, id_loss=totals["identity"] / n,
                           age_loss=totals["age"] / n,
                           train_accuracy=float(np.mean(predictions == data.identities)))
        metrics.append(row)
        logger.info("epoch %d lr %.5g loss %.6f (id %.6f, age %.6f) acc %.4f", row.epoch, row.lr,
                    row.total_loss, row.id_loss, row.age_loss, row.train_accuracy)
        if on_epoch:
            on_epoch(row)

    final = Checkpoint(encoder=encoder, classifier=classifier, age_head=head, margin=margin,
                       multitask=multitask, train=cfg, step=step, rng_state=shuffle_rng.get_state())
    return TrainResult(checkpoint=final, metrics=metrics, duration=time.time() - start_time)


def embed(ckpt: Checkpoint, inputs: np.ndarray) -> np.ndarray:
    if inputs.ndim != 2 or inputs.shape[1] != ckpt.encoder.spec.input_dim:
        raise ShapeError(f"dataset has {inputs.shape[-1]} input components but the checkpoint "
                         f"encoder expects {ckpt.encoder.spec.input_dim}")
    return forward(ckpt.encoder, inputs)


def relabel_dense(identities: np.ndarray) -> np.ndarray:
    """Maps arbitrary identity labels onto 0..C-1, preserving order."""
    _, dense = np.unique(identities, return_inverse=True)
    return dense.astype(np.int64)


def cross_age_rank1(samples: Sequence[SyntheticSample], split: CrossAgeSplit, spec: EncoderSpec,
                    margin: AngularMarginConfig, multitask: MultiTaskConfig, cfg: TrainConfig) -> EvalReport:
    """Trains on the split's train identities, then scores young-gallery / old-probe rank-1."""
    data = as_arrays(samples)
    train_data = data.subset(split.train)
    train_data = SampleArrays(train_data.inputs, relabel_dense(train_data.identities), train_data.ages)
    result = train(train_data, spec, margin, multitask, cfg)
    gallery = data.subset(split.gallery)
    probe = data.subset(split.probe)
    report = rank1_identification(
        EmbeddingSet(embed(result.checkpoint, gallery.inputs), gallery.identities, gallery.ages),
        EmbeddingSet(embed(result.checkpoint, probe.inputs), probe.identities, probe.ages),
    )
    report.config.update({"loss_mode": cfg.loss_mode, "lambda": multitask.lambda_, "seed": cfg.seed})
    return report
