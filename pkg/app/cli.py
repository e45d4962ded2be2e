"""
diffphy command-line interface.

Subcommands:
    train-ddpm       Train the diffusion denoiser and write a checkpoint
    train-baseline   Train the DNN demapper and write a checkpoint
    ber-sweep        Receiver case study: BER of DDPM vs DNN over SNR
    mi-sweep         Transmitter case study: mutual information over SNR
    shape            Shaped transmit distributions over SNR

Exit codes: 0 success, 1 library error, 2 config error, 3 training error,
4 artifact/I/O error, 130 interrupted.
"""

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app import __version__
from app.audit import RunLedger
from app.checkpoint import load_checkpoint, save_checkpoint
from app.config import config_echo, parse_config, resolve_workers, settings
from app.diffusion import DiffusionModel, TrainingTrace
from app.exceptions import ConfigError, DiffPhyError
from app.logger import ROOT_LOGGER_NAME, get_logger, setup_logger
from app.pipelines import (
    BaselineDnn,
    run_mi_sweep,
    run_receiver_ber_sweep,
    run_shaping,
    train_ddpm_on_constellation,
    train_dnn_baseline,
)
from app.results import write_results
from app.schemas import ExperimentKind, ResultColumn, ResultTable, RunConfig
from app.security import atomic_write, ensure_within

logger = get_logger(__name__)

CONFIG_ECHO_FILENAME = "config.echo.json"

EXIT_INTERRUPTED = 130

RESULT_FILES = {
    ExperimentKind.TRAIN_DDPM: "ddpm_loss.csv",
    ExperimentKind.TRAIN_BASELINE: "baseline_loss.csv",
    ExperimentKind.BER_SWEEP: "ber_sweep.csv",
    ExperimentKind.MI_SWEEP: "mi_sweep.csv",
    ExperimentKind.SHAPE: "shaping.csv",
}

DEFAULT_CHECKPOINTS = {
    ExperimentKind.TRAIN_DDPM: "ddpm.ckpt",
    ExperimentKind.TRAIN_BASELINE: "baseline.ckpt",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffphy",
        description="Diffusion models for physical-layer receivers and constellation shaping",
        epilog="Log verbosity: DIFFPHY_LOG_LEVEL (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    )
    parser.add_argument("--version", action="version", version=f"diffphy {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file or a config.echo.json")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--out-dir", type=Path, help="Output directory")
    common.add_argument(
        "--checkpoint",
        type=Path,
        help="DDPM checkpoint (train-baseline: the baseline checkpoint to write)",
    )
    common.add_argument("--baseline-checkpoint", type=Path, help="DNN baseline checkpoint")
    common.add_argument(
        "--snr-grid",
        help="SNR grid as start:step:stop or a comma list; use --snr-grid=-25:2.5:-5",
    )
    common.add_argument("--plot", action="store_true", default=None, help="Also write SVG plots")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override any config field (repeatable)",
    )

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for kind, text in (
        (ExperimentKind.TRAIN_DDPM, "Train the diffusion denoiser"),
        (ExperimentKind.TRAIN_BASELINE, "Train the DNN baseline demapper"),
        (ExperimentKind.BER_SWEEP, "BER sweep: DDPM receiver vs DNN baseline"),
        (ExperimentKind.MI_SWEEP, "Mutual-information sweep: shaped vs baseline"),
        (ExperimentKind.SHAPE, "Shaped transmit distributions over the SNR grid"),
    ):
        sub.add_parser(kind.value, parents=[common], help=text, description=text)
    return parser


def _trace_table(trace: TrainingTrace, checksum: str, seed: int, experiment: str) -> ResultTable:
    return ResultTable(
        columns=[ResultColumn(name="epoch"), ResultColumn(name="loss")],
        rows=[[i + 1, loss] for i, loss in enumerate(trace.epoch_losses)],
        metadata={
            "experiment": experiment,
            "seed": seed,
            "initial_loss": trace.initial_loss,
            "steps": trace.steps,
            "model_checksum": checksum,
        },
    )


def _checkpoint_target(config: RunConfig, given: Optional[Path]) -> Path:
    target = given if given is not None else config.out_dir / DEFAULT_CHECKPOINTS[config.experiment]
    return ensure_within(target, config.out_dir)


def _train_ddpm(config: RunConfig) -> Tuple[ResultTable, str]:
    model, trace = train_ddpm_on_constellation(
        config.training.order, config.schedule, config.denoiser, config.training, config.seed
    )
    target = _checkpoint_target(config, config.ddpm_checkpoint)
    checksum = save_checkpoint(model, target)
    table = _trace_table(trace, checksum, config.seed, ExperimentKind.TRAIN_DDPM.value)
    table.metadata["checkpoint"] = str(target)
    ratio = trace.final_loss / trace.initial_loss
    return table, f"{trace.steps} steps, loss {trace.initial_loss:.4f} -> {trace.final_loss:.4f} ({ratio:.2f}x)"


def _train_baseline(config: RunConfig) -> Tuple[ResultTable, str]:
    baseline, trace = train_dnn_baseline(config.baseline, config.seed)
    target = _checkpoint_target(config, config.baseline_checkpoint)
    checksum = save_checkpoint(baseline, target)
    table = _trace_table(trace, checksum, config.seed, ExperimentKind.TRAIN_BASELINE.value)
    table.metadata["checkpoint"] = str(target)
    return table, f"{trace.steps} steps, final loss {trace.final_loss:.4f}"


def _load_models(config: RunConfig, need_baseline: bool = True) -> Tuple[DiffusionModel, Optional[BaselineDnn]]:
    model = load_checkpoint(config.ddpm_checkpoint, expected_kind="ddpm")
    baseline = None
    if need_baseline:
        baseline = load_checkpoint(config.baseline_checkpoint, expected_kind="baseline")
    return model, baseline


def _ber_sweep(config: RunConfig) -> Tuple[ResultTable, str]:
    model, baseline = _load_models(config)
    table = run_receiver_ber_sweep(
        model, baseline, config.receiver, config.seed, workers=resolve_workers(config)
    )
    improvement = table.metadata["improvement"]
    summary = ", ".join(
        f"{channel}: {item['relative']:.1%}" if item["relative"] is not None else f"{channel}: n/a"
        for channel, item in improvement.items()
    )
    return table, f"{len(table.rows)} rows; DDPM vs DNN improvement {summary}"


def _mi_sweep(config: RunConfig) -> Tuple[ResultTable, str]:
    model, baseline = _load_models(config)
    table = run_mi_sweep(model, baseline, config.shaping, config.seed, workers=resolve_workers(config))
    return table, f"{len(table.rows)} rows"


def _shape(config: RunConfig) -> Tuple[ResultTable, str]:
    model, _ = _load_models(config, need_baseline=False)
    shaped, table = run_shaping(model, config.shaping, config.seed)
    entropies = ", ".join(f"{d.snr_db:g} dB: {d.entropy:.2f}" for d in shaped)
    return table, f"entropy (bits) {entropies}"


HANDLERS: Dict[ExperimentKind, Callable[[RunConfig], Tuple[ResultTable, str]]] = {
    ExperimentKind.TRAIN_DDPM: _train_ddpm,
    ExperimentKind.TRAIN_BASELINE: _train_baseline,
    ExperimentKind.BER_SWEEP: _ber_sweep,
    ExperimentKind.MI_SWEEP: _mi_sweep,
    ExperimentKind.SHAPE: _shape,
}


def write_config_echo(config: RunConfig) -> Path:
    """Write the resolved config next to the outputs, re-readable via --config."""
    target = ensure_within(config.out_dir / CONFIG_ECHO_FILENAME, config.out_dir)
    atomic_write(target, json.dumps(config_echo(config), indent=2, sort_keys=True) + "\n")
    return target


def run(config: RunConfig) -> List[Path]:
    """
    Execute one subcommand for a resolved config.

    Returns:
        Paths of every file written (config echo, results, plot)
    """
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_config_echo(config)]

    table, summary = HANDLERS[config.experiment](config)
    table.metadata["config"] = dict(config_echo(config))
    written += write_results(
        table, out_dir / RESULT_FILES[config.experiment], plot=config.plot, base_dir=out_dir
    )
    logger.info(summary, extra={"experiment": config.experiment.value})
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logger(
        ROOT_LOGGER_NAME,
        log_level=settings.LOG_LEVEL,
        log_file=settings.LOG_PATH if settings.ENABLE_FILE_LOGGING else None,
    )

    try:
        config = parse_config(
            config_path=args.config,
            experiment=ExperimentKind(args.command),
            seed=args.seed,
            out_dir=args.out_dir,
            checkpoint=args.checkpoint,
            baseline_checkpoint=args.baseline_checkpoint,
            snr_grid=args.snr_grid,
            plot=args.plot,
            overrides=args.overrides,
        )
    except ConfigError as e:
        logger.error(str(e))
        return e.exit_code

    start = time.perf_counter()
    parameters: Dict[str, Any] = dict(config_echo(config))
    try:
        ledger = RunLedger(config.out_dir)
    except OSError as e:
        logger.error(f"Cannot open output directory {config.out_dir}: {e}")
        return 4

    with ledger:
        try:
            written = run(config)
        except KeyboardInterrupt:
            logger.warning("Interrupted")
            ledger.log_run(
                args.command, parameters, "interrupted", False,
                (time.perf_counter() - start) * 1000, error_message="KeyboardInterrupt"
            )
            return EXIT_INTERRUPTED
        except DiffPhyError as e:
            logger.error(f"{args.command} failed: {e}", extra={"error_type": type(e).__name__})
            ledger.log_run(
                args.command, parameters, "failed", False,
                (time.perf_counter() - start) * 1000, error_message=f"{type(e).__name__}: {e}"
            )
            return e.exit_code

        ledger.log_run(
            args.command, parameters, ", ".join(str(p) for p in written), True,
            (time.perf_counter() - start) * 1000
        )

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
