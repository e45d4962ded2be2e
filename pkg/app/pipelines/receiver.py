"""
Receiver case study: BER of the DDPM denoising receiver against the DNN
demapper, swept over SNR and channel kinds.

The DDPM is never retrained per channel; Laplacian rows reuse the model
trained on clean symbols with Gaussian diffusion noise.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
from scipy import stats

from app.comms import (
    ChannelKind,
    ChannelModel,
    Constellation,
    apply_channel,
    ber_confidence_interval,
    build_qam,
    demap_nearest,
    modulate,
    random_bits,
)
from app.diffusion import DiffusionModel, denoise_average
from app.exceptions import DimensionError, StateError
from app.logger import get_logger
from app.pipelines.baseline import BaselineDnn
from app.schemas import ReceiverExperimentConfig, ResultColumn, ResultTable
from app.utils import derive_rng, run_cells, snr_key

logger = get_logger(__name__)

STREAM_RECEIVER = 20

DDPM_RECEIVER = "ddpm"
DNN_RECEIVER = "dnn"

# Relative BER improvement below which the sweep logs a warning
IMPROVEMENT_WARN_THRESHOLD = 0.10

BER_COLUMNS = [
    ResultColumn(name="snr_db", unit="dB"),
    ResultColumn(name="channel"),
    ResultColumn(name="receiver"),
    ResultColumn(name="ber"),
    ResultColumn(name="n_bits", unit="bits"),
    ResultColumn(name="n_errors", unit="bits"),
    ResultColumn(name="ci_low"),
    ResultColumn(name="ci_high"),
    ResultColumn(name="seed"),
    ResultColumn(name="model_checksum"),
]


@dataclass
class ReceiverCell:
    """One (SNR, channel) job; both receivers see the same frames."""

    model: DiffusionModel
    baseline: BaselineDnn
    constellation: Constellation
    snr_db: float
    channel: ChannelKind
    channel_index: int
    kappa: float
    symbols: int
    sampling_runs: int
    seed: int


def check_trained(model: DiffusionModel, baseline: BaselineDnn, order: int) -> None:
    """
    Raises:
        StateError: If either network never went through training
        DimensionError: If the baseline decides among a different QAM order
    """
    if model.trained_steps <= 0:
        raise StateError("DDPM model is untrained; train or load a checkpoint first")
    if baseline.trained_steps <= 0:
        raise StateError("DNN baseline is untrained; train or load a checkpoint first")
    if baseline.order != order:
        raise DimensionError(f"Baseline was trained for {baseline.order}-QAM, sweep uses {order}-QAM")


def _receiver_cell(cell: ReceiverCell) -> List[List[Any]]:
    rng = derive_rng(cell.seed, STREAM_RECEIVER, snr_key(cell.snr_db), cell.channel_index)
    c = cell.constellation
    kappa = cell.kappa if cell.channel is ChannelKind.HWI else 0.0
    ch = ChannelModel(kind=cell.channel, snr_db=cell.snr_db, kappa=kappa)

    bits = random_bits(cell.symbols * c.bits_per_symbol, rng)
    frame = apply_channel(modulate(bits, c), ch, rng)
    n_bits = int(bits.size)

    denoised = denoise_average(
        cell.model,
        frame.rx_symbols,
        ch.snr_db,
        rng,
        passes=cell.sampling_runs,
        noise_power=ch.effective_noise_power,
    )
    _, ddpm_bits = demap_nearest(denoised, c)
    dnn_bits = c.labels[cell.baseline.classify(frame.rx_symbols, ch.effective_snr_db)].reshape(-1)

    ddpm_errors = int(np.count_nonzero(ddpm_bits != bits))
    dnn_errors = int(np.count_nonzero(dnn_bits != bits))
    ddpm_ci = ber_confidence_interval(ddpm_errors, n_bits)
    dnn_ci = ber_confidence_interval(dnn_errors, n_bits)
    channel = cell.channel.value
    return [
        [cell.snr_db, channel, DDPM_RECEIVER, ddpm_errors / n_bits, n_bits, ddpm_errors,
         ddpm_ci[0], ddpm_ci[1], cell.seed, cell.model.denoiser.checksum()],
        [cell.snr_db, channel, DNN_RECEIVER, dnn_errors / n_bits, n_bits, dnn_errors,
         dnn_ci[0], dnn_ci[1], cell.seed, cell.baseline.net.checksum()],
    ]


def ber_improvement(ddpm_errors: int, dnn_errors: int, n_bits: int) -> Dict[str, Any]:
    """
    Relative BER improvement of the DDPM over the DNN on equal budgets.

    ``significant`` is a one-sided two-proportion z-test at 95% that the
    DDPM error rate is lower.
    """
    p_ddpm = ddpm_errors / n_bits
    p_dnn = dnn_errors / n_bits
    pooled = (ddpm_errors + dnn_errors) / (2 * n_bits)
    se = math.sqrt(2.0 * pooled * (1.0 - pooled) / n_bits) if 0.0 < pooled < 1.0 else 0.0
    p_value = float(stats.norm.sf((p_dnn - p_ddpm) / se)) if se > 0.0 else 1.0
    return {
        "ddpm_ber": p_ddpm,
        "dnn_ber": p_dnn,
        "relative": (p_dnn - p_ddpm) / p_dnn if p_dnn > 0.0 else None,
        "p_value": p_value,
        "significant": p_value < 0.05,
    }


def run_receiver_ber_sweep(
    model: DiffusionModel,
    baseline: BaselineDnn,
    cfg: ReceiverExperimentConfig,
    seed: int,
    workers: int = 1,
) -> ResultTable:
    """
    BER of both receivers at every (SNR, channel) cell.

    Each cell transmits one frame of ``symbols_per_snr`` symbols that both
    receivers decide. The DDPM runs ``sampling_runs`` reverse-sampling
    passes over the frame and demaps the averaged output. Both receivers
    use the effective SNR, which folds the hardware distortion into the
    noise power.

    Metadata ``improvement`` holds, per channel at the highest grid SNR,
    the relative BER improvement, the one-sided 95% test result
    (``significant``) and ``flagged`` when the improvement is below 10%.

    Returns:
        Table with ``|grid| x 2 x |channels|`` rows in grid order

    Raises:
        StateError: If the model or baseline is untrained
    """
    check_trained(model, baseline, cfg.order)
    constellation = build_qam(cfg.order)
    cells = [
        ReceiverCell(
            model=model,
            baseline=baseline,
            constellation=constellation,
            snr_db=float(snr_db),
            channel=ChannelKind(channel),
            channel_index=list(ChannelKind).index(ChannelKind(channel)),
            kappa=cfg.kappa,
            symbols=cfg.symbols_per_snr,
            sampling_runs=cfg.sampling_runs,
            seed=seed,
        )
        for snr_db in cfg.snr_grid
        for channel in cfg.channels
    ]

    logger.info(
        f"BER sweep over {len(cells)} cells",
        extra={
            "order": cfg.order,
            "snr_grid": cfg.snr_grid,
            "channels": [ChannelKind(ch).value for ch in cfg.channels],
            "kappa": cfg.kappa
        }
    )

    rows = [row for cell_rows in run_cells(_receiver_cell, cells, workers) for row in cell_rows]
    table = ResultTable(
        columns=BER_COLUMNS,
        rows=rows,
        metadata={
            "experiment": "ber-sweep",
            "seed": seed,
            "order": cfg.order,
            "kappa": cfg.kappa,
            "sampling_runs": cfg.sampling_runs,
            "ddpm_checksum": model.denoiser.checksum(),
            "baseline_checksum": baseline.net.checksum(),
            "improvement": _summarize_improvement(rows, cfg),
        },
    )
    return table


def _summarize_improvement(rows: List[List[Any]], cfg: ReceiverExperimentConfig) -> Dict[str, Any]:
    """Improvement at the highest grid SNR, per channel."""
    top = max(cfg.snr_grid)
    summary: Dict[str, Any] = {}
    for channel in cfg.channels:
        name = ChannelKind(channel).value
        by_receiver = {
            row[2]: row for row in rows if row[0] == top and row[1] == name
        }
        ddpm, dnn = by_receiver[DDPM_RECEIVER], by_receiver[DNN_RECEIVER]
        result = ber_improvement(ddpm[5], dnn[5], ddpm[4])
        relative = result["relative"]
        result["snr_db"] = top
        result["flagged"] = relative is None or relative < IMPROVEMENT_WARN_THRESHOLD
        summary[name] = result

        if result["flagged"]:
            logger.warning(
                f"DDPM BER improvement over DNN below {IMPROVEMENT_WARN_THRESHOLD:.0%} "
                f"at {top} dB ({name})",
                extra={"channel": name, "snr_db": top, "relative": relative}
            )
    return summary
