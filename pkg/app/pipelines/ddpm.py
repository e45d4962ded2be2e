"""
DDPM training on a QAM constellation.

Builds the schedule and time-conditioned denoiser from config sections,
draws uniform clean constellation symbols and runs the Adam loop.
"""

import time
from typing import Tuple

import numpy as np

from app.comms import build_qam
from app.diffusion import (
    DiffusionModel,
    TrainingTrace,
    VarianceSchedule,
    cosine_schedule,
    fit,
    linear_schedule,
)
from app.logger import get_logger
from app.neuralnet import HiddenActivation, OutputActivation, TimeEmbedding, init_weights
from app.schemas import DenoiserConfig, ScheduleConfig, TrainingConfig
from app.utils import derive_rng, format_duration

logger = get_logger(__name__)

# RNG stream tags under the master seed
STREAM_INIT = 0
STREAM_DATA = 1
STREAM_TRAIN = 2


def build_schedule(cfg: ScheduleConfig) -> VarianceSchedule:
    if cfg.kind == "cosine":
        return cosine_schedule(cfg.steps)
    return linear_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)


def build_diffusion_model(
    schedule_cfg: ScheduleConfig,
    denoiser_cfg: DenoiserConfig,
    seed: int,
) -> DiffusionModel:
    """Untrained model: 2 -> width x layers -> 2, Softplus hidden, linear output."""
    schedule = build_schedule(schedule_cfg)
    dims = [2, *([denoiser_cfg.hidden_width] * denoiser_cfg.hidden_layers), 2]
    init_seed = int(derive_rng(seed, STREAM_INIT).integers(2 ** 63))
    denoiser = init_weights(
        dims,
        init_seed,
        hidden_activation=HiddenActivation.SOFTPLUS,
        output_activation=OutputActivation.LINEAR,
        embed_dim=denoiser_cfg.embed_dim,
    )
    embedding = TimeEmbedding(dim=denoiser_cfg.embed_dim, max_timestep=schedule.steps)
    return DiffusionModel(schedule=schedule, denoiser=denoiser, embedding=embedding)


def train_ddpm_on_constellation(
    M: int,
    schedule_cfg: ScheduleConfig,
    denoiser_cfg: DenoiserConfig,
    training_cfg: TrainingConfig,
    seed: int,
) -> Tuple[DiffusionModel, TrainingTrace]:
    """
    Train a DDPM on uniformly drawn clean symbols of an M-QAM constellation.

    Channel noise is never shown to the model; the forward process supplies
    all corruption, so one model serves every SNR at inference.

    Args:
        M: QAM order
        schedule_cfg: Variance schedule section
        denoiser_cfg: Network architecture section
        training_cfg: Optimizer and budget section
        seed: Master seed

    Returns:
        Trained model and its loss trace

    Raises:
        TrainingError: If the loss diverges (trace attached)
    """
    constellation = build_qam(M)
    model = build_diffusion_model(schedule_cfg, denoiser_cfg, seed)

    data_rng = derive_rng(seed, STREAM_DATA)
    data = constellation.points[data_rng.integers(0, M, size=training_cfg.n_samples)]

    logger.info(
        f"Training DDPM on {M}-QAM",
        extra={
            "order": M,
            "n_samples": training_cfg.n_samples,
            "epochs": training_cfg.epochs,
            "parameters": model.denoiser.num_parameters(),
            "seed": seed
        }
    )

    start = time.perf_counter()
    model, trace = fit(
        model,
        data,
        epochs=training_cfg.epochs,
        batch_size=training_cfg.batch_size,
        rng=derive_rng(seed, STREAM_TRAIN),
        learning_rate=training_cfg.learning_rate,
        beta1=training_cfg.beta1,
        beta2=training_cfg.beta2,
        epsilon=training_cfg.epsilon,
    )

    logger.info(
        f"DDPM training finished in {format_duration(time.perf_counter() - start)}",
        extra={
            "initial_loss": trace.initial_loss,
            "final_loss": trace.final_loss,
            "steps": trace.steps,
            "checksum": model.denoiser.checksum()
        }
    )
    return model, trace
