"""
Configuration module for diffphy.

Process-level settings come from environment variables (``DIFFPHY_*``) via
Pydantic BaseSettings. Experiment configuration is parsed from TOML or a
JSON config echo into the RunConfig schema, with command-line overrides.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from app.exceptions import ConfigError
from app.logger import get_logger
from app.schemas import ExperimentKind, RunConfig

logger = get_logger(__name__)


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.
    """

    # Logging Configuration
    LOG_LEVEL: str = Field(
        default="INFO",
        description="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)"
    )
    LOG_PATH: Optional[Path] = Field(
        default=None,
        description="JSON-lines log file path (None to disable file logging)"
    )
    ENABLE_FILE_LOGGING: bool = Field(
        default=False,
        description="Enable logging to LOG_PATH"
    )

    # Output Configuration
    OUTPUT_ROOT: Path = Field(
        default=Path("./runs"),
        description="Output directory used when neither the config nor --out-dir names one"
    )

    # Execution Configuration
    WORKERS: int = Field(
        default=1,
        ge=1,
        le=64,
        description="Worker processes for sweep cells (1 runs cells inline)"
    )

    model_config = SettingsConfigDict(
        env_prefix="DIFFPHY_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        v = v.upper()
        if v not in valid_levels:
            raise ValueError(f"Invalid log level. Must be one of: {valid_levels}")
        return v


settings = Settings()


# Config section that each experiment's --snr-grid flag applies to
_GRID_SECTION = {
    ExperimentKind.BER_SWEEP: "receiver",
    ExperimentKind.MI_SWEEP: "shaping",
    ExperimentKind.SHAPE: "shaping",
}


def parse_snr_grid(expression: str) -> List[float]:
    """
    Expand ``start:step:stop`` into an inclusive arithmetic progression.

    A comma-separated list (``-5,0,5``) is accepted as well.

    Raises:
        ConfigError: If the expression is malformed or the step has the wrong sign
    """
    text = expression.strip()
    try:
        if ":" not in text:
            return [float(v) for v in text.split(",") if v.strip()]
        start, step, stop = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"Invalid SNR grid '{expression}': expected start:step:stop or a list")

    if step <= 0 or stop < start:
        raise ConfigError(f"Invalid SNR grid '{expression}': step must be positive and stop >= start")

    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [float(round(start + i * step, 12)) for i in range(count)]


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    Read a TOML config file or a JSON config echo into a plain dict.

    Raises:
        ConfigError: If the file is missing or not well-formed
    """
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    raw = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw) if raw.strip() else {}
        else:
            data = tomllib.loads(raw)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Malformed config file {path}: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a table of keys")
    return data


def _apply_override(data: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Set ``section.key`` (or a top-level key) in a nested dict."""
    parts = dotted_key.split(".")
    target = data
    for part in parts[:-1]:
        section = target.setdefault(part, {})
        if not isinstance(section, dict):
            raise ConfigError(f"Cannot override '{dotted_key}': '{part}' is not a section")
        target = section
    target[parts[-1]] = value


def _parse_override_value(text: str) -> Any:
    """Parse a --set value as JSON, falling back to the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_validation_error(error: ValidationError) -> str:
    """
    Turn a Pydantic ValidationError into a message naming keys and expected types.
    """
    problems = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "<root>"
        if item["type"] == "extra_forbidden":
            problems.append(f"unknown key '{key}'")
        elif item["type"] == "missing":
            problems.append(f"missing required field '{key}'")
        elif item["type"] == "missing_required":
            problems.append(item["msg"])
        else:
            problems.append(f"invalid value for '{key}': {item['msg']}")
    return "; ".join(problems)


def parse_config(
    config_path: Optional[Path] = None,
    experiment: Optional[ExperimentKind] = None,
    seed: Optional[int] = None,
    out_dir: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
    baseline_checkpoint: Optional[Path] = None,
    snr_grid: Optional[str] = None,
    plot: Optional[bool] = None,
    overrides: Sequence[str] = (),
) -> RunConfig:
    """
    Resolve a RunConfig from an optional config file plus flag overrides.

    Flags always win over file values. ``checkpoint`` names the DDPM
    checkpoint for every experiment except ``train-baseline``, where it
    names the baseline checkpoint being written.

    Args:
        config_path: TOML file or JSON config echo
        experiment: Subcommand being run
        seed: Master seed
        out_dir: Output directory
        checkpoint: Checkpoint path (see above)
        baseline_checkpoint: Baseline checkpoint path for the sweeps
        snr_grid: ``start:step:stop`` grid for the experiment's section
        plot: Whether to render plots
        overrides: ``section.key=value`` strings

    Returns:
        Fully-resolved RunConfig

    Raises:
        ConfigError: Unknown key, type mismatch or missing required field
    """
    data: Dict[str, Any] = load_config_file(config_path) if config_path else {}

    if experiment is not None:
        data["experiment"] = experiment.value
    if seed is not None:
        data["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = str(out_dir)
    if plot is not None:
        data["plot"] = plot

    try:
        kind = ExperimentKind(data.get("experiment", ExperimentKind.TRAIN_DDPM.value))
    except ValueError:
        raise ConfigError(f"Unknown experiment '{data.get('experiment')}'")
    if checkpoint is not None:
        key = "baseline_checkpoint" if kind is ExperimentKind.TRAIN_BASELINE else "ddpm_checkpoint"
        data[key] = str(checkpoint)
    if baseline_checkpoint is not None:
        data["baseline_checkpoint"] = str(baseline_checkpoint)
    if snr_grid is not None:
        section = _GRID_SECTION.get(kind)
        if section is None:
            raise ConfigError(f"--snr-grid does not apply to experiment '{kind.value}'")
        _apply_override(data, f"{section}.snr_grid", parse_snr_grid(snr_grid))

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Invalid override '{item}': expected section.key=value")
        key, value = item.split("=", 1)
        _apply_override(data, key.strip(), _parse_override_value(value.strip()))

    data.setdefault("out_dir", str(settings.OUTPUT_ROOT))

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {format_validation_error(e)}")

    logger.debug("Resolved run configuration", extra={"config": config.model_dump(mode="json")})
    return config


def resolve_workers(config: RunConfig) -> int:
    """Worker count from the run config, falling back to process settings."""
    return config.workers if config.workers is not None else settings.WORKERS


def config_echo(config: RunConfig) -> Mapping[str, Any]:
    """JSON-ready echo of a resolved config (re-readable by parse_config)."""
    return config.model_dump(mode="json")
