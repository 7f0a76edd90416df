import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
from pydantic import BaseModel, ValidationError

from .errors import InputOutputError, NumericalError, ParseError, ShapeError, UnsupportedVersionError
from .model import EncoderParams
from .numerics import Matrix, as_matrix
from .schemas import AgeHead, AngularMarginConfig, EncoderSpec, MultiTaskConfig, TrainConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    encoder: EncoderParams
    classifier: Matrix
    age_head: AgeHead
    margin: AngularMarginConfig
    multitask: MultiTaskConfig
    train: TrainConfig
    step: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def num_classes(self) -> int:
        return self.classifier.shape[0]


# --- On-disk document ---

class EncoderDocument(BaseModel):
    spec: EncoderSpec
    weights: List[List[List[float]]]
    biases: List[List[float]]


class CheckpointDocument(BaseModel):
    format_version: int
    encoder: EncoderDocument
    classifier: List[List[float]]
    age_head: AgeHead
    margin: AngularMarginConfig
    multitask: MultiTaskConfig
    train: TrainConfig
    step: int
    rng_state: Dict[str, Any]


def _to_document(ckpt: Checkpoint) -> CheckpointDocument:
    return CheckpointDocument(
        format_version=ckpt.format_version,
        encoder=EncoderDocument(
            spec=ckpt.encoder.spec,
            weights=[w.tolist() for w in ckpt.encoder.weights],
            biases=[b.tolist() for b in ckpt.encoder.biases],
        ),
        classifier=ckpt.classifier.tolist(),
        age_head=ckpt.age_head,
        margin=ckpt.margin,
        multitask=ckpt.multitask,
        train=ckpt.train,
        step=ckpt.step,
        rng_state=ckpt.rng_state,
    )


def _from_document(doc: CheckpointDocument) -> Checkpoint:
    spec = doc.encoder.spec
    encoder = EncoderParams(
        spec=spec,
        weights=tuple(np.array(w, dtype=np.float64).reshape(spec.layer_widths[i], spec.layer_widths[i + 1])
                      for i, w in enumerate(doc.encoder.weights)),
        biases=tuple(np.array(b, dtype=np.float64) for b in doc.encoder.biases),
    )
    classifier = np.array(doc.classifier, dtype=np.float64)
    if classifier.ndim != 2:
        classifier = classifier.reshape(-1, spec.embedding_dim)
    return Checkpoint(
        encoder=encoder,
        classifier=as_matrix(classifier, "classifier"),
        age_head=doc.age_head,
        margin=doc.margin,
        multitask=doc.multitask,
        train=doc.train,
        step=doc.step,
        rng_state=doc.rng_state,
        format_version=doc.format_version,
    )


def dumps_checkpoint(ckpt: Checkpoint) -> str:
    """Serializes to JSON; floats use the shortest repr that round-trips exactly."""
    payload = _to_document(ckpt).model_dump(by_alias=True)
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def loads_checkpoint(text: str, source: str = "<checkpoint>") -> Checkpoint:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid checkpoint JSON: {e.msg}", path=source, offset=e.pos)
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ParseError("checkpoint has no format_version", path=source, offset=0)
    if payload["format_version"] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{source}: unsupported checkpoint format_version {payload['format_version']!r} "
            f"(supported: {FORMAT_VERSION})")
    try:
        return _from_document(CheckpointDocument.model_validate(payload))
    except (ValidationError, ValueError, ShapeError, NumericalError) as e:
        raise ParseError(f"checkpoint does not match the schema: {e}", path=source, offset=0)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='ascii', newline='\n') as f:
            f.write(dumps_checkpoint(ckpt))
    except OSError as e:
        raise InputOutputError(f"could not write checkpoint {path}: {e}")
    logger.info("Saved checkpoint at step %d to %s", ckpt.step, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, 'r', encoding='ascii') as f:
            text = f.read()
    except FileNotFoundError:
        raise InputOutputError(f"checkpoint not found: {path}")
    except (OSError, UnicodeDecodeError) as e:
        raise InputOutputError(f"could not read checkpoint {path}: {e}")
    return loads_checkpoint(text, source=path)
