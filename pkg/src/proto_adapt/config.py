"""Run and dataset configuration.

Both configurations are flat YAML mappings validated by pydantic. Unknown
keys are rejected. Loading and saving keep path strings exactly as written;
callers anchor relative paths at the config file's directory with
:meth:`RunConfig.resolve_paths` when the run starts.
"""

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .segmenter import ModelSpec

PATH_FIELDS = (
    "source_data",
    "target_data",
    "source_checkpoint",
    "adapted_checkpoint",
    "run_state",
    "run_log",
)


class RunConfig(BaseModel):
    """Every knob of a pretraining + adaptation run."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # model
    input_dim: int = Field(8, ge=1)
    hidden_dims: list[int] = Field(default_factory=lambda: [16, 16], min_length=1)
    num_classes: int = Field(5, ge=2)
    init_scale: float = Field(1.0, gt=0)

    # AdamW for adaptation
    lr: float = Field(6e-5, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    weight_decay: float = Field(0.01, ge=0)
    epsilon: float = Field(1e-8, gt=0)
    # AdamW for source pretraining
    pretrain_lr: float = Field(1e-2, ge=0)

    alpha_teacher: float = Field(0.99, ge=0, le=1)
    alpha_proto: float = Field(0.99, ge=0, le=1)
    tau: float = Field(0.1, gt=0)
    tau_c: float = Field(0.1, gt=0)
    lambda_pce: float = Field(1.0, ge=0)
    clamp_weights: bool = True
    identity_bank: bool = False

    batch_size: int = Field(4, ge=1)
    pretrain_steps: int = Field(300, ge=0)
    adapt_steps: int = Field(300, ge=0)
    checkpoint_every: int = Field(0, ge=0)
    seed: int = Field(0, ge=0)

    source_data: Optional[str] = None
    target_data: Optional[str] = None
    source_checkpoint: str = "runs/source.ckpt.npz"
    adapted_checkpoint: str = "runs/adapted.ckpt.npz"
    run_state: str = "runs/adapt.state.npz"
    run_log: str = "runs/adapt.log.jsonl"

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, value: list[int]) -> list[int]:
        if min(value) < 1:
            raise ValueError("hidden widths must be positive")
        return value

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.input_dim, tuple(self.hidden_dims), self.num_classes)

    def resolve_paths(self, base: Path) -> "RunConfig":
        """Copy of the config with relative paths anchored at ``base``."""
        updates = {}
        for name in PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not Path(value).is_absolute():
                updates[name] = str(base / value)
        return self.model_copy(update=updates)


class DomainSettings(BaseModel):
    """Knobs of the synthetic source/target benchmark.

    With ``mean_layout="axes"`` class c is centred at ``mean_scale * e_c``. On the
    default benchmark the block rotation then pulls class 0 towards class 1 and
    class 2 towards class 3, and turns class 4 towards an axis no class uses.
    ``"random"`` draws the means from N(0, mean_scale^2).
    """

    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(5, ge=2)
    input_dim: int = Field(8, ge=2)
    height: int = Field(32, ge=1)
    width: int = Field(32, ge=1)
    num_images: int = Field(20, ge=1)
    mean_layout: Literal["axes", "random"] = "axes"
    mean_scale: float = Field(2.4, ge=0)
    noise_scale: float = Field(0.6, ge=0)
    num_sites: int = Field(12, ge=1)
    rotation_deg: float = 30.0
    offset: float = 0.3
    rare_class: Optional[int] = None
    rare_weight: float = Field(0.2, gt=0, le=1)
    seed: int = Field(0, ge=0)

    @field_validator("rare_class")
    @classmethod
    def _non_negative(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 0:
            raise ValueError("rare_class must be a class index")
        return value

    @model_validator(mode="after")
    def _axes_fit(self) -> "DomainSettings":
        if self.mean_layout == "axes" and self.num_classes > self.input_dim:
            raise ValueError("axis-aligned class means need num_classes <= input_dim")
        return self


def _read_mapping(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a flat key: value mapping")
    return data


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        return RunConfig(**_read_mapping(path))
    except ValidationError as e:
        raise ConfigError(f"invalid run config {path}:\n{e}") from e


def save_run_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.model_dump(), sort_keys=False, default_flow_style=None))
    return path


def load_domain_settings(path) -> DomainSettings:
    try:
        return DomainSettings(**_read_mapping(path))
    except ValidationError as e:
        raise ConfigError(f"invalid domain settings {path}:\n{e}") from e
