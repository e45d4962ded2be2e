"""
Supervised DNN demapper used as the benchmark receiver.

A softmax classifier over the M constellation indices, fed with the
received I/Q pair and the link SNR as a third feature, trained across an
SNR range so one network covers the whole sweep.
"""

import math
import time
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from app.comms import build_qam
from app.diffusion import TrainingTrace
from app.exceptions import DimensionError, NumericError, TrainingError
from app.logger import get_logger
from app.neuralnet import (
    AdamState,
    HiddenActivation,
    Mlp,
    OutputActivation,
    adam_step,
    backward,
    forward,
    init_weights,
    softmax_cross_entropy,
)
from app.schemas import BaselineConfig
from app.utils import derive_rng, format_duration

logger = get_logger(__name__)

# Divides snr_db before it enters the network
SNR_FEATURE_SCALE = 10.0

STREAM_INIT = 10
STREAM_DATA = 11
STREAM_TRAIN = 12


@dataclass
class BaselineDnn:
    """Mlp classifier (3 inputs, M softmax outputs) with its QAM order."""

    net: Mlp
    order: int
    trained_steps: int = 0

    def __post_init__(self) -> None:
        if self.net.layer_dims[0] != 3 or self.net.layer_dims[-1] != self.order:
            raise DimensionError(
                f"Baseline network must map 3 -> {self.order}, got {self.net.layer_dims}"
            )
        if self.net.output_activation is not OutputActivation.SOFTMAX:
            raise DimensionError("Baseline network needs a softmax output")

    def probabilities(self, rx: np.ndarray, snr_db: Union[float, np.ndarray]) -> np.ndarray:
        """``(n, M)`` class probabilities for received symbols at the given SNR."""
        probs, _ = forward(self.net, features(rx, snr_db))
        return probs

    def classify(self, rx: np.ndarray, snr_db: Union[float, np.ndarray]) -> np.ndarray:
        return np.argmax(self.probabilities(rx, snr_db), axis=1)


def features(rx: np.ndarray, snr_db: Union[float, np.ndarray]) -> np.ndarray:
    rx = np.asarray(rx, dtype=np.float64).reshape(-1, 2)
    snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (rx.shape[0],))
    return np.column_stack([rx, snr / SNR_FEATURE_SCALE])


def _training_set(cfg: BaselineConfig, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    constellation = build_qam(cfg.order)
    rng = derive_rng(seed, STREAM_DATA)
    labels = rng.integers(0, cfg.order, size=cfg.n_samples)
    snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db, size=cfg.n_samples)
    sigma = np.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    rx = constellation.points[labels] + rng.standard_normal((cfg.n_samples, 2)) * sigma[:, None]
    return features(rx, snr_db), labels


def train_dnn_baseline(cfg: BaselineConfig, seed: int) -> Tuple[BaselineDnn, TrainingTrace]:
    """
    Train the benchmark demapper with cross-entropy on AWGN-corrupted symbols.

    Each training symbol gets its own SNR drawn uniformly from
    ``[snr_min_db, snr_max_db]``.

    Raises:
        TrainingError: If the loss or parameters become non-finite
    """
    dims = [3, *([cfg.hidden_width] * cfg.hidden_layers), cfg.order]
    init_seed = int(derive_rng(seed, STREAM_INIT).integers(2 ** 63))
    net = init_weights(
        dims,
        init_seed,
        hidden_activation=HiddenActivation.SOFTPLUS,
        output_activation=OutputActivation.SOFTMAX,
    )
    x, labels = _training_set(cfg, seed)
    rng = derive_rng(seed, STREAM_TRAIN)

    logger.info(
        f"Training DNN baseline on {cfg.order}-QAM",
        extra={
            "order": cfg.order,
            "snr_range_db": [cfg.snr_min_db, cfg.snr_max_db],
            "n_samples": cfg.n_samples,
            "epochs": cfg.epochs,
            "seed": seed
        }
    )

    start = time.perf_counter()
    params = net.parameters()
    state = AdamState.fresh(params, cfg.learning_rate)
    trace = TrainingTrace()
    n = x.shape[0]

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            _, cache = forward(net, x[idx])
            loss, logit_grad = softmax_cross_entropy(cache.pre_activations[-1], labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"Baseline loss became non-finite at step {trace.steps}", trace)
            if trace.steps == 0:
                trace.initial_loss = loss
            grads = backward(net, cache, logit_grad, through_output_activation=False)
            params, state = adam_step(params, grads.parameters(), state)
            try:
                net = net.with_parameters(params)
            except NumericError as e:
                raise TrainingError(f"Baseline parameters diverged at step {trace.steps}: {e}", trace)
            losses.append(loss)
            trace.steps += 1

        epoch_loss = float(np.mean(losses))
        trace.epoch_losses.append(epoch_loss)
        logger.info(
            f"Baseline epoch {epoch + 1}/{cfg.epochs}: loss={epoch_loss:.4f}",
            extra={"epoch": epoch + 1, "loss": epoch_loss, "steps": trace.steps}
        )

    logger.info(
        f"Baseline training finished in {format_duration(time.perf_counter() - start)}",
        extra={"final_loss": trace.final_loss, "checksum": net.checksum()}
    )
    return BaselineDnn(net=net, order=cfg.order, trained_steps=trace.steps), trace
