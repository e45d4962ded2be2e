"""
Pydantic schemas for run configuration, result tables and checkpoint headers.

Every config section forbids unknown keys so a typo in a config file is a
hard error naming the key instead of a silently ignored setting.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_core import PydanticCustomError
from typing_extensions import TypeAlias

from app.comms import ChannelKind

QamOrder: TypeAlias = Literal[4, 16, 64]
Cell: TypeAlias = Union[float, int, str]


def _default_receiver_grid() -> List[float]:
    return [-25.0, -22.5, -20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0]


def _default_shaping_grid() -> List[float]:
    return [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]


def _check_grid(grid: List[float]) -> List[float]:
    if not grid:
        raise ValueError("snr_grid must not be empty")
    if not all(math.isfinite(v) and v >= -1000.0 for v in grid):
        raise ValueError("snr_grid values must be finite and at least -1000 dB")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("snr_grid must be sorted in ascending order")
    return grid


class ExperimentKind(str, Enum):
    """Subcommands of the operator surface."""

    TRAIN_DDPM = "train-ddpm"
    TRAIN_BASELINE = "train-baseline"
    BER_SWEEP = "ber-sweep"
    MI_SWEEP = "mi-sweep"
    SHAPE = "shape"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScheduleConfig(_Section):
    """Variance schedule of the diffusion process."""

    kind: Literal["linear", "cosine"] = Field(default="linear", description="Schedule family")
    steps: int = Field(default=100, ge=2, le=10000, description="Diffusion steps T")
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0, description="First beta (linear)")
    beta_end: float = Field(default=0.02, gt=0.0, lt=1.0, description="Last beta (linear)")

    @model_validator(mode="after")
    def check_order(self) -> "ScheduleConfig":
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        return self


class DenoiserConfig(_Section):
    """Time-conditioned noise predictor architecture."""

    hidden_width: int = Field(default=128, ge=1, description="Neurons per hidden layer")
    hidden_layers: int = Field(default=3, ge=1, description="Number of conditional hidden layers")
    embed_dim: int = Field(default=128, ge=2, description="Sinusoidal time-embedding width")

    @field_validator("embed_dim")
    @classmethod
    def validate_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("embed_dim must be even")
        return v


class TrainingConfig(_Section):
    """DDPM training hyperparameters."""

    order: QamOrder = Field(default=16, description="QAM order of the training constellation")
    n_samples: int = Field(default=100_000, ge=1, description="Clean training symbols")
    batch_size: int = Field(default=256, ge=1, description="Mini-batch size")
    epochs: int = Field(default=30, ge=1, description="Passes over the training set")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Adam learning rate")
    beta1: float = Field(default=0.9, gt=0.0, lt=1.0, description="Adam first-moment decay")
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0, description="Adam second-moment decay")
    epsilon: float = Field(default=1e-8, gt=0.0, description="Adam denominator epsilon")


class BaselineConfig(_Section):
    """Supervised DNN demapper trained across an SNR range."""

    order: QamOrder = Field(default=16, description="QAM order the classifier decides among")
    snr_min_db: float = Field(default=-25.0, description="Lowest training SNR (dB)")
    snr_max_db: float = Field(default=30.0, description="Highest training SNR (dB)")
    n_samples: int = Field(default=100_000, ge=1, description="Training symbols")
    batch_size: int = Field(default=256, ge=1, description="Mini-batch size")
    epochs: int = Field(default=20, ge=1, description="Passes over the training set")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Adam learning rate")
    hidden_width: int = Field(default=128, ge=1, description="Neurons per hidden layer")
    hidden_layers: int = Field(default=3, ge=1, description="Number of hidden layers")

    @model_validator(mode="after")
    def check_range(self) -> "BaselineConfig":
        if self.snr_min_db > self.snr_max_db:
            raise ValueError("snr_min_db must not exceed snr_max_db")
        return self


class ReceiverExperimentConfig(_Section):
    """BER sweep of the DDPM receiver against the DNN baseline."""

    order: QamOrder = Field(default=16, description="QAM order")
    snr_grid: List[float] = Field(default_factory=_default_receiver_grid, description="SNR grid (dB)")
    kappa: float = Field(default=0.1, ge=0.0, description="Hardware-impairment level")
    symbols_per_snr: int = Field(default=50_000, ge=1, description="Symbols per (SNR, channel) cell")
    sampling_runs: int = Field(default=10, ge=1, description="Independent reverse-sampling runs")
    channels: List[ChannelKind] = Field(
        default_factory=lambda: [ChannelKind.AWGN, ChannelKind.LAPLACIAN, ChannelKind.HWI],
        description="Channel kinds evaluated at every SNR"
    )

    @field_validator("snr_grid")
    @classmethod
    def validate_grid(cls, v: List[float]) -> List[float]:
        return _check_grid(v)

    @model_validator(mode="after")
    def check_channels(self) -> "ReceiverExperimentConfig":
        if not self.channels:
            raise ValueError("channels must not be empty")
        return self


class ShapingExperimentConfig(_Section):
    """Constellation shaping and mutual-information sweep."""

    order: QamOrder = Field(default=16, description="QAM order")
    snr_grid: List[float] = Field(default_factory=_default_shaping_grid, description="SNR grid (dB)")
    kappa: float = Field(default=0.1, ge=0.0, description="Hardware-impairment level (hwi channel)")
    shaping_samples: int = Field(default=20_000, ge=1, description="Synthetic symbols per shaping")
    symbols_per_snr: int = Field(default=100_000, ge=1, description="Symbols per MI cell")
    channels: List[ChannelKind] = Field(
        default_factory=lambda: [ChannelKind.AWGN, ChannelKind.LAPLACIAN],
        description="Channel kinds evaluated at every SNR"
    )

    @field_validator("snr_grid")
    @classmethod
    def validate_grid(cls, v: List[float]) -> List[float]:
        return _check_grid(v)

    @model_validator(mode="after")
    def check_channels(self) -> "ShapingExperimentConfig":
        if not self.channels:
            raise ValueError("channels must not be empty")
        return self


_REQUIRED_PATHS = {
    ExperimentKind.BER_SWEEP: ("ddpm_checkpoint", "baseline_checkpoint"),
    ExperimentKind.MI_SWEEP: ("ddpm_checkpoint", "baseline_checkpoint"),
    ExperimentKind.SHAPE: ("ddpm_checkpoint",),
}


class RunConfig(_Section):
    """Fully-resolved configuration of one cli run."""

    experiment: ExperimentKind = Field(default=ExperimentKind.TRAIN_DDPM, description="Subcommand")
    seed: int = Field(default=2024, ge=0, description="Master seed")
    out_dir: Path = Field(default=Path("./runs"), description="Output directory")
    ddpm_checkpoint: Optional[Path] = Field(default=None, description="DDPM checkpoint path")
    baseline_checkpoint: Optional[Path] = Field(default=None, description="Baseline checkpoint path")
    plot: bool = Field(default=False, description="Render SVG plots next to result CSVs")
    workers: Optional[int] = Field(default=None, ge=1, le=64, description="Worker override")

    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    receiver: ReceiverExperimentConfig = Field(default_factory=ReceiverExperimentConfig)
    shaping: ShapingExperimentConfig = Field(default_factory=ShapingExperimentConfig)

    @model_validator(mode="after")
    def check_required_paths(self) -> "RunConfig":
        missing = [
            name for name in _REQUIRED_PATHS.get(self.experiment, ())
            if getattr(self, name) is None
        ]
        if missing:
            raise PydanticCustomError(
                "missing_required",
                "missing required field(s) for {experiment}: {fields}",
                {"experiment": self.experiment.value, "fields": ", ".join(missing)},
            )
        return self


class ResultColumn(BaseModel):
    """One column of a result table."""

    name: str = Field(description="Column name (CSV header)")
    unit: str = Field(default="", description="Physical unit, empty when dimensionless")


class ResultTable(BaseModel):
    """
    Tabular experiment output with provenance metadata.

    Rows hold numbers and short labels (channel, receiver); every row must
    match the column schema's arity.
    """

    columns: List[ResultColumn] = Field(description="Column schema")
    rows: List[List[Cell]] = Field(default_factory=list, description="Table rows")
    metadata: Dict[str, Any] = Field(default_factory=dict, description="Seeds, checksums, config echo")

    @model_validator(mode="after")
    def check_arity(self) -> "ResultTable":
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} cells, schema has {width} columns")
        return self

    @property
    def column_names(self) -> List[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> List[Cell]:
        """All values of one column, in row order."""
        idx = self.column_names.index(name)
        return [row[idx] for row in self.rows]

    def records(self) -> List[Dict[str, Cell]]:
        """Rows as dicts keyed by column name."""
        names = self.column_names
        return [dict(zip(names, row)) for row in self.rows]


class CheckpointHeader(BaseModel):
    """JSON header of a checkpoint container."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = Field(ge=1)
    kind: Literal["ddpm", "baseline"]
    layer_dims: List[int]
    hidden_activation: str
    output_activation: str
    embed_dim: int = Field(ge=0)
    shapes: List[List[int]]
    checksum: str = Field(pattern=r"^[a-f0-9]{64}$")
    extra: Dict[str, Any] = Field(default_factory=dict, description="Schedule, order, scales")
