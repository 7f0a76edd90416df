from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Tuple
import math

# --- Schema Definitions (Pydantic Models) ---

LossMode = Literal["softmax", "a_softmax", "oe"]
LOSS_MODES: Tuple[str, ...] = ("softmax", "a_softmax", "oe")
Nonlinearity = Literal["rectifier", "none"]

U64_MAX = 2 ** 64 - 1


class AngularMarginConfig(BaseModel):
    m: int = Field(4, ge=1)
    s: float = Field(32.0, gt=0, allow_inf_nan=False)
    anneal_weight: float = Field(5.0, ge=0, allow_inf_nan=False)
    # None lets the trainer derive the decay from the schedule length.
    anneal_decay: Optional[float] = Field(None, gt=0, le=1)


class MultiTaskConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(0.01, alias="lambda", ge=0, allow_inf_nan=False)
    # When false the age loss only trains the age head, never the encoder.
    age_grad_to_encoder: bool = True


class AgeHead(BaseModel):
    slope: float = Field(1.0, allow_inf_nan=False)
    intercept: float = Field(0.0, allow_inf_nan=False)


class EncoderSpec(BaseModel):
    layer_widths: List[int]
    nonlinearity: List[Nonlinearity] = []

    @field_validator('layer_widths')
    @classmethod
    def validate_widths(cls, value):
        if len(value) < 2:
            raise ValueError("layer_widths needs an input width and at least one layer.")
        if any(w < 1 for w in value):
            raise ValueError("every layer width must be >= 1.")
        return value

    @model_validator(mode='after')
    def fill_nonlinearity(self):
        hidden = len(self.layer_widths) - 2
        if not self.nonlinearity:
            self.nonlinearity = ["rectifier"] * hidden
        if len(self.nonlinearity) != hidden:
            raise ValueError(f"nonlinearity needs one entry per hidden layer ({hidden}), got {len(self.nonlinearity)}.")
        return self

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_widths[-1]


class TrainConfig(BaseModel):
    batch_size: int = Field(512, ge=1)
    epochs: int = Field(21, ge=0)
    learning_rate: float = Field(0.05, gt=0, allow_inf_nan=False)
    # None means the proportional default: 9/21, 15/21 and 18/21 of the epochs.
    lr_drop_epochs: Optional[List[int]] = None
    lr_drop_factor: float = Field(0.1, gt=0, lt=1)
    momentum: float = Field(0.9, ge=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, le=U64_MAX)
    loss_mode: LossMode = "oe"
    freeze_age_head: bool = False

    @model_validator(mode='after')
    def validate_drops(self):
        if self.lr_drop_epochs is not None:
            drops = self.lr_drop_epochs
            if any(b <= a for a, b in zip(drops, drops[1:])):
                raise ValueError("lr_drop_epochs must be strictly increasing.")
            if any(d < 0 or d >= self.epochs for d in drops):
                raise ValueError("lr_drop_epochs must lie in [0, epochs).")
        return self

    def resolved_drop_epochs(self) -> List[int]:
        if self.lr_drop_epochs is not None:
            return list(self.lr_drop_epochs)
        drops: List[int] = []
        for fraction in (9 / 21, 15 / 21, 18 / 21):
            epoch = int(math.floor(self.epochs * fraction + 0.5))
            if 0 < epoch < self.epochs and (not drops or epoch > drops[-1]):
                drops.append(epoch)
        return drops


class SyntheticSpec(BaseModel):
    num_identities: int = Field(10, ge=2)
    input_dim: int = Field(16, ge=2)
    samples_per_identity: int = Field(20, ge=1)
    age_range: Tuple[float, float] = (10.0, 60.0)
    age_effect: float = Field(0.5, ge=0, allow_inf_nan=False)
    noise_sigma: float = Field(0.05, ge=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, le=U64_MAX)

    @field_validator('age_range')
    @classmethod
    def validate_age_range(cls, value):
        z_min, z_max = value
        if not (math.isfinite(z_min) and math.isfinite(z_max)) or z_min >= z_max:
            raise ValueError("age_range must satisfy z_min < z_max.")
        return value


# --- File-level records ---

class SyntheticSample(BaseModel):
    input: List[float]
    identity: int = Field(ge=0)
    age: float = Field(allow_inf_nan=False)


class Pair(BaseModel):
    index_a: int = Field(ge=0)
    index_b: int = Field(ge=0)
    same: bool


class CrossAgeSplit(BaseModel):
    """Sample indices of each role; gallery[i] and probe[i] share an identity."""
    train: List[int] = []
    gallery: List[int] = []
    probe: List[int] = []


class RocCurve(BaseModel):
    points: List[Tuple[float, float]]
    auc: float = Field(ge=0, le=1)

    @field_validator('points')
    @classmethod
    def validate_points(cls, value):
        if not value or tuple(value[0]) != (0.0, 0.0) or tuple(value[-1]) != (1.0, 1.0):
            raise ValueError("ROC points must start at (0, 0) and end at (1, 1).")
        for (f0, t0), (f1, t1) in zip(value, value[1:]):
            if f1 < f0 or t1 < t0:
                raise ValueError("ROC points must be monotone non-decreasing.")
        return value


class EvalReport(BaseModel):
    protocol: str
    metrics: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    config: Dict[str, Any] = {}
    per_fold: List[Dict[str, float]] = []

    @model_validator(mode='after')
    def validate_rates(self):
        for key in ("rank1", "accuracy", "auc"):
            if key in self.metrics and not (0.0 <= self.metrics[key] <= 1.0):
                raise ValueError(f"{key} must lie in [0, 1], got {self.metrics[key]}.")
        return self


class ErrorRecord(BaseModel):
    reference: Any
    field_name: Optional[str] = None
    error_type: str
    case_description: str
    original_value: Optional[Any] = None
    exit_code: int = 2
