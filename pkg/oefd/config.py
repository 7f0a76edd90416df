"""Per-command run configuration: flat key=value files plus flag overrides."""
import logging
import os
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Type, TypeVar

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError, InputOutputError
from .schemas import U64_MAX, AngularMarginConfig, EncoderSpec, LossMode, MultiTaskConfig, SyntheticSpec, \
    TrainConfig

logger = logging.getLogger(__name__)

Protocol = Literal["rank1", "distractor_rank1", "roc", "kfold", "loo_rank1"]

C = TypeVar("C", bound="RunConfig")


def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(',') if v.strip()]
    return value


def _resolve(value: Optional[str]) -> Optional[str]:
    return os.path.abspath(value) if value else value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    out: str = Field("out", validate_default=True)

    @field_validator('out')
    @classmethod
    def resolve_out(cls, value):
        return _resolve(value)


class GenDataConfig(RunConfig):
    num_identities: int = Field(10, ge=2)
    input_dim: int = Field(16, ge=2)
    samples_per_identity: int = Field(20, ge=1)
    age_range: Tuple[float, float] = (10.0, 60.0)
    age_effect: float = Field(0.5, ge=0, allow_inf_nan=False)
    noise_sigma: float = Field(0.05, ge=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, le=U64_MAX)
    test_fraction: float = Field(0.5, ge=0, le=1)
    num_positive: int = Field(100, ge=0)
    num_negative: int = Field(100, ge=0)

    @field_validator('age_range', mode='before')
    @classmethod
    def parse_age_range(cls, value):
        return _split_list(value)

    @field_validator('age_range')
    @classmethod
    def validate_age_range(cls, value):
        if value[0] >= value[1]:
            raise ValueError(f"z_min must be < z_max, got {value[0]} >= {value[1]}")
        return value

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(num_identities=self.num_identities, input_dim=self.input_dim,
                             samples_per_identity=self.samples_per_identity, age_range=self.age_range,
                             age_effect=self.age_effect, noise_sigma=self.noise_sigma, seed=self.seed)


class ModelSettings(RunConfig):
    """Keys shared by every command that trains: encoder shape, losses and schedule."""
    hidden_widths: List[int] = [64]
    m: int = Field(4, ge=1)
    s: float = Field(32.0, gt=0, allow_inf_nan=False)
    anneal_weight: float = Field(5.0, ge=0, allow_inf_nan=False)
    anneal_decay: Optional[float] = Field(None, gt=0, le=1)
    lambda_: float = Field(0.01, alias="lambda", ge=0, allow_inf_nan=False)
    age_grad_to_encoder: bool = True
    batch_size: int = Field(512, ge=1)
    epochs: int = Field(21, ge=0)
    learning_rate: float = Field(0.05, gt=0, allow_inf_nan=False)
    lr_drop_epochs: Optional[List[int]] = None
    lr_drop_factor: float = Field(0.1, gt=0, lt=1)
    momentum: float = Field(0.9, ge=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, le=U64_MAX)

    @field_validator('hidden_widths', 'lr_drop_epochs', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)

    def encoder_spec(self, input_dim: int, embedding_dim: int) -> EncoderSpec:
        return EncoderSpec(layer_widths=[input_dim, *self.hidden_widths, embedding_dim])

    def margin(self) -> AngularMarginConfig:
        return AngularMarginConfig(m=self.m, s=self.s, anneal_weight=self.anneal_weight,
                                   anneal_decay=self.anneal_decay)

    def multitask(self) -> MultiTaskConfig:
        return MultiTaskConfig(lambda_=self.lambda_, age_grad_to_encoder=self.age_grad_to_encoder)

    def train_config(self, loss_mode: str, freeze_age_head: bool = False) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
                           lr_drop_epochs=self.lr_drop_epochs, lr_drop_factor=self.lr_drop_factor,
                           momentum=self.momentum, seed=self.seed, loss_mode=loss_mode,
                           freeze_age_head=freeze_age_head)


class TrainRunConfig(ModelSettings):
    dataset: str
    split: Optional[str] = None
    embedding_dim: int = Field(8, ge=1)
    loss_mode: LossMode = "oe"
    freeze_age_head: bool = False

    @field_validator('dataset', 'split')
    @classmethod
    def resolve_paths(cls, value):
        return _resolve(value)


class EmbedConfig(RunConfig):
    checkpoint: str
    dataset: str

    @field_validator('checkpoint', 'dataset')
    @classmethod
    def resolve_paths(cls, value):
        return _resolve(value)


class EvalConfig(RunConfig):
    embeddings: str
    protocol: Protocol = "rank1"
    split: Optional[str] = None
    probe: Optional[str] = None
    distractors: Optional[str] = None
    pairs: Optional[str] = None
    folds: Optional[int] = Field(None, ge=2)
    subjects: Optional[int] = Field(None, ge=1)

    @field_validator('embeddings', 'split', 'probe', 'distractors', 'pairs')
    @classmethod
    def resolve_paths(cls, value):
        return _resolve(value)

    def check_protocol_args(self) -> None:
        if self.protocol == "distractor_rank1" and not self.distractors:
            raise ConfigError("protocol distractor_rank1 needs a distractors file", field_name="distractors")
        if self.protocol in ("roc", "kfold") and not self.pairs:
            raise ConfigError(f"protocol {self.protocol} needs a pairs file", field_name="pairs")
        if self.split and self.probe:
            raise ConfigError("give either split or probe, not both", field_name="probe")


class ToyConfig(ModelSettings):
    """Defaults for the two-dimensional toy run over ten identities with f(x)=x frozen."""
    num_identities: int = Field(10, ge=2)
    input_dim: int = Field(16, ge=2)
    samples_per_identity: int = Field(50, ge=1)
    age_range: Tuple[float, float] = (10.0, 60.0)
    age_effect: float = Field(0.5, ge=0, allow_inf_nan=False)
    noise_sigma: float = Field(0.02, ge=0, allow_inf_nan=False)
    hidden_widths: List[int] = [32]
    lambda_: float = Field(0.1, alias="lambda", ge=0, allow_inf_nan=False)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(100, ge=0)
    learning_rate: float = Field(0.01, gt=0, allow_inf_nan=False)

    @field_validator('age_range', mode='before')
    @classmethod
    def parse_age_range(cls, value):
        return _split_list(value)

    @field_validator('age_range')
    @classmethod
    def validate_age_range(cls, value):
        if value[0] >= value[1]:
            raise ValueError(f"z_min must be < z_max, got {value[0]} >= {value[1]}")
        return value

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(num_identities=self.num_identities, input_dim=self.input_dim,
                             samples_per_identity=self.samples_per_identity, age_range=self.age_range,
                             age_effect=self.age_effect, noise_sigma=self.noise_sigma, seed=self.seed)


class GradCheckConfig(RunConfig):
    seed: int = Field(0, ge=0, le=U64_MAX)
    h: float = Field(1e-5, gt=0)
    tolerance: float = Field(1e-4, gt=0)
    # Test hook: scales analytic gradients by 1.01 so every check must fail.
    corrupt_gradient: bool = False


COMMAND_CONFIGS: Dict[str, Type[RunConfig]] = {
    "gen-data": GenDataConfig,
    "train": TrainRunConfig,
    "embed": EmbedConfig,
    "eval": EvalConfig,
    "toy-fig3": ToyConfig,
    "grad-check": GradCheckConfig,
}


def read_config_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise InputOutputError(f"Config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"config key '{missing[0]}' has no value", field_name=missing[0])
    return dict(values)


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got '{pair}'")
        overrides[key.strip()] = value.strip()
    return overrides


def validation_to_config_error(e: ValidationError, values: Mapping[str, object]) -> ConfigError:
    first_error = e.errors()[0]
    field = str(first_error['loc'][0]) if first_error['loc'] else 'general'
    error = ConfigError(f"invalid config key '{field}': {first_error['msg']}", field_name=field)
    error.original_value = values.get(field)
    return error


def build_config(model: Type[C], values: Mapping[str, object]) -> C:
    try:
        return model.model_validate(dict(values))
    except ValidationError as e:
        raise validation_to_config_error(e, values)


def load_run_config(command: str, path: Optional[str] = None, overrides: Sequence[str] = (),
                    seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """File values first, then --set pairs, then --seed / --out."""
    if command not in COMMAND_CONFIGS:
        raise ConfigError(f"unknown command '{command}'")
    values: Dict[str, object] = read_config_file(path) if path else {}
    values.update(parse_overrides(overrides))
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["out"] = out
    model = COMMAND_CONFIGS[command]
    if "seed" in values and "seed" not in model.model_fields:
        values.pop("seed")
    config = build_config(model, values)
    logger.debug("%s config: %s", command, config.model_dump(by_alias=True))
    return config
