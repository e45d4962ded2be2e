"""
DDPM core: variance schedules, forward diffusion, the noise-prediction
objective, ancestral reverse sampling and SNR-aligned denoising of received
symbols.

Step indices run 1..T as in the usual DDPM notation; schedule arrays are
stored 0-based, so step t lives at index t - 1.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple, Union

import numpy as np
from typing_extensions import TypeAlias

from app.exceptions import DimensionError, DomainError, NumericError, TrainingError
from app.logger import get_logger
from app.neuralnet import (
    AdamState,
    Gradients,
    Mlp,
    TimeEmbedding,
    adam_step,
    backward,
    forward,
)

logger = get_logger(__name__)

# Clean unit-energy I/Q symbols are scaled by this factor so each coordinate
# has unit variance, like the injected noise.
DEFAULT_DATA_SCALE = math.sqrt(2.0)

StepIndex: TypeAlias = Union[int, np.ndarray]


@dataclass(frozen=True)
class VarianceSchedule:
    """
    Noise schedule tables for T steps.

    Invariants: 0 < beta < 1 and non-decreasing; alpha = 1 - beta;
    alpha_bar is the running product of alpha and strictly decreasing;
    alpha_bar[T] < 0.5.
    """

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2:
            raise DomainError("A schedule needs at least two steps")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise DomainError("Every beta must lie in (0, 1)")
        if np.any(np.diff(beta) < 0.0):
            raise DomainError("beta must be non-decreasing")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if alpha_bar[-1] >= 0.5:
            raise DomainError(
                f"Terminal alpha_bar {alpha_bar[-1]:.4f} >= 0.5: schedule does not reach noise"
            )
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def steps(self) -> int:
        return int(self.beta.size)

    def check_step(self, t: StepIndex) -> None:
        """
        Raises:
            DomainError: If any step index is outside 1..T
        """
        t_arr = np.asarray(t)
        if t_arr.size and (t_arr.min() < 1 or t_arr.max() > self.steps):
            raise DomainError(f"Step index outside 1..{self.steps}")

    def alpha_bar_at(self, t: StepIndex) -> np.ndarray:
        return self.alpha_bar[np.asarray(t) - 1]

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar[t - 1], with alpha_bar[0] = 1."""
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def posterior_variance(self, t: int) -> float:
        """sigma_t^2 = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t]; zero at t = 1."""
        if t == 1:
            return 0.0
        return (1.0 - self.alpha_bar_prev(t)) / (1.0 - float(self.alpha_bar[t - 1])) * float(
            self.beta[t - 1]
        )

    def snr_db(self) -> np.ndarray:
        """Per-step SNR ``alpha_bar / (1 - alpha_bar)`` in dB, steps 1..T."""
        return 10.0 * np.log10(self.alpha_bar / (1.0 - self.alpha_bar))


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> VarianceSchedule:
    """
    Linearly interpolated betas, both endpoints included.

    Raises:
        DomainError: Unless T >= 2 and 0 < beta_start <= beta_end < 1
    """
    if T < 2:
        raise DomainError(f"T must be at least 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise DomainError(f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return VarianceSchedule(beta=np.linspace(beta_start, beta_end, T, dtype=np.float64))


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> VarianceSchedule:
    """
    Betas derived from a squared-cosine alpha_bar curve, clipped at max_beta.

    Raises:
        DomainError: Unless T >= 2, s > 0 and 0 < max_beta < 1
    """
    if T < 2:
        raise DomainError(f"T must be at least 2, got {T}")
    if s <= 0.0 or not 0.0 < max_beta < 1.0:
        raise DomainError("Need s > 0 and 0 < max_beta < 1")
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
    beta = np.minimum(1.0 - f[1:] / f[:-1], max_beta)
    return VarianceSchedule(beta=np.maximum.accumulate(beta))


class NoisePredictor(Protocol):
    """Anything that can stand in for the trained model during sampling."""

    schedule: VarianceSchedule
    data_dim: int
    data_scale: float

    def predict_noise(self, x_t: np.ndarray, t: StepIndex) -> np.ndarray:
        ...


@dataclass
class DiffusionModel:
    """
    Schedule plus time-conditioned noise predictor eps_theta.

    The denoiser maps ``data_dim`` to ``data_dim`` and is conditioned on a
    sinusoidal embedding of the step index with ``max_timestep = T``.
    """

    schedule: VarianceSchedule
    denoiser: Mlp
    embedding: TimeEmbedding
    data_dim: int = 2
    data_scale: float = DEFAULT_DATA_SCALE
    trained_steps: int = 0
    _table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        dims = self.denoiser.layer_dims
        if dims[0] != self.data_dim or dims[-1] != self.data_dim:
            raise DimensionError(f"Denoiser must map {self.data_dim} -> {self.data_dim}, got {dims}")
        if self.embedding.max_timestep != self.schedule.steps:
            raise DimensionError("Embedding max_timestep must equal the schedule length")
        if self.denoiser.embed_dim != self.embedding.dim:
            raise DimensionError("Denoiser embed_dim must equal the embedding dim")
        self._table = self.embedding.table()

    def predict_noise(self, x_t: np.ndarray, t: StepIndex) -> np.ndarray:
        """eps_theta(x_t, t); ``t`` is one step for the whole batch or one per row."""
        out, _ = forward(self.denoiser, x_t, self._embed(t))
        return out

    def _embed(self, t: StepIndex) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(t, dtype=np.int64))
        return self._table[idx]

    def with_denoiser(self, denoiser: Mlp) -> "DiffusionModel":
        return DiffusionModel(
            schedule=self.schedule,
            denoiser=denoiser,
            embedding=self.embedding,
            data_dim=self.data_dim,
            data_scale=self.data_scale,
            trained_steps=self.trained_steps,
        )


def forward_diffuse(
    x0: np.ndarray,
    t: StepIndex,
    eps: np.ndarray,
    sched: VarianceSchedule,
) -> np.ndarray:
    """
    Jump straight to step t: ``x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one index per row of a batch.

    Raises:
        DomainError: If t is outside 1..T
    """
    sched.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar_at(t)
    if np.ndim(ab) == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def noise_prediction_loss(predicted: np.ndarray, eps: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean squared noise error ``mean_i ||eps_i - predicted_i||^2``.

    Returns:
        The loss and its gradient with respect to ``predicted``
    """
    diff = predicted - eps
    n = diff.shape[0]
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n


@dataclass
class LossResult:
    loss: float
    grads: Gradients


def _loss_at(
    model: DiffusionModel, x0_scaled: np.ndarray, t: np.ndarray, eps: np.ndarray
) -> LossResult:
    x_t = forward_diffuse(x0_scaled, t, eps, model.schedule)
    pred, cache = forward(model.denoiser, x_t, model._embed(t))
    loss, grad = noise_prediction_loss(pred, eps)
    return LossResult(loss=loss, grads=backward(model.denoiser, cache, grad))


def training_loss(
    model: DiffusionModel, x0: np.ndarray, rng: np.random.Generator
) -> LossResult:
    """
    Noise-prediction loss on a batch of clean symbols (physical units).

    Draws t ~ Uniform{1..T} and eps ~ N(0, I) per sample.

    Raises:
        DomainError: If the batch is empty
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise DomainError("training_loss needs a non-empty (n, data_dim) batch")
    n = x0.shape[0]
    t = rng.integers(1, model.schedule.steps + 1, size=n)
    eps = rng.standard_normal((n, model.data_dim))
    return _loss_at(model, x0 * model.data_scale, t, eps)


def reverse_step(
    model: NoisePredictor,
    x_t: np.ndarray,
    t: int,
    z: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    One ancestral step x_t -> x_{t-1}.

    ``x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) * eps_theta) / sqrt(alpha_t) + sigma_t z``
    with sigma_1 = 0, so z is ignored at t = 1. ``z = None`` means zero noise.

    Raises:
        DomainError: If t is outside 1..T
    """
    sched = model.schedule
    sched.check_step(t)
    t = int(t)
    eps_hat = model.predict_noise(x_t, t)
    beta_t = float(sched.beta[t - 1])
    mean = (x_t - beta_t / math.sqrt(1.0 - float(sched.alpha_bar[t - 1])) * eps_hat) / math.sqrt(
        float(sched.alpha[t - 1])
    )
    if t == 1 or z is None:
        return mean
    return mean + math.sqrt(sched.posterior_variance(t)) * z


def _run_reverse(
    model: NoisePredictor, x: np.ndarray, t_start: int, rng: np.random.Generator
) -> np.ndarray:
    for t in range(t_start, 0, -1):
        z = rng.standard_normal(x.shape) if t > 1 else None
        x = reverse_step(model, x, t, z)
    return x


def sample(model: NoisePredictor, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Ancestral sampling from x_T ~ N(0, I) down to step 1.

    Returns:
        ``(n, data_dim)`` samples in physical units
    """
    if n < 0:
        raise DomainError("Sample count must be non-negative")
    x = rng.standard_normal((n, model.data_dim))
    return _run_reverse(model, x, model.schedule.steps, rng) / model.data_scale


def snr_to_timestep(snr_db: float, sched: VarianceSchedule) -> int:
    """
    Step whose diffusion SNR ``ab_t / (1 - ab_t)`` is nearest to ``snr_db``.

    Ties go to the larger step (more denoising). An SNR below the lowest
    step SNR of the schedule saturates at T.
    """
    distance = np.abs(sched.snr_db() - snr_db)
    reversed_idx = int(np.argmin(distance[::-1]))
    return sched.steps - reversed_idx


def denoise_observation(
    model: NoisePredictor,
    y: np.ndarray,
    snr_db: float,
    rng: np.random.Generator,
    noise_power: Optional[float] = None,
) -> np.ndarray:
    """
    Denoise received symbols by reverse diffusion from the SNR-matched step.

    ``y`` is a ``(n, data_dim)`` batch of unit-energy symbols plus noise of
    power ``sigma^2 = 10^(-snr_db/10)``. It is mapped to diffusion
    coordinates as ``data_scale * y / sqrt(1 + sigma^2)`` (second moment of
    x_{t*}), then reverse steps t*..1 run with fresh noise at every step but
    the last. The result is returned in physical units.

    ``noise_power`` overrides sigma^2 when the total perturbation differs
    from the nominal SNR (hardware distortion); t* then follows the
    effective SNR as well.

    Raises:
        NumericError: If y contains NaN or Inf
        DomainError: If noise_power is not positive
    """
    x, t_star = _start_state(model, y, snr_db, noise_power)
    return _run_reverse(model, x, t_star, rng) / model.data_scale


def denoise_average(
    model: NoisePredictor,
    y: np.ndarray,
    snr_db: float,
    rng: np.random.Generator,
    passes: int,
    noise_power: Optional[float] = None,
) -> np.ndarray:
    """
    Mean of ``passes`` independent reverse-diffusion passes over the same
    received symbols.

    Every pass starts from the same SNR-matched state and draws its own
    sampling noise; averaging approximates the posterior mean of the clean
    symbol. ``passes = 1`` is exactly ``denoise_observation``.

    Raises:
        DomainError: If passes < 1 or noise_power is not positive
        NumericError: If y contains NaN or Inf
    """
    if passes < 1:
        raise DomainError(f"passes must be at least 1, got {passes}")
    x, t_star = _start_state(model, y, snr_db, noise_power)
    total = np.zeros_like(x)
    for _ in range(passes):
        total += _run_reverse(model, x, t_star, rng)
    return total / (passes * model.data_scale)


def _start_state(
    model: NoisePredictor,
    y: np.ndarray,
    snr_db: float,
    noise_power: Optional[float],
) -> Tuple[np.ndarray, int]:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NumericError("Received symbols contain NaN or Inf")
    if y.ndim != 2 or y.shape[1] != model.data_dim:
        raise DimensionError(f"Received batch must be (n, {model.data_dim}), got {y.shape}")

    if noise_power is None:
        noise_power = 10.0 ** (-snr_db / 10.0)
    elif noise_power <= 0.0:
        raise DomainError(f"noise_power must be positive, got {noise_power}")
    else:
        snr_db = -10.0 * math.log10(noise_power)

    floor_db = float(model.schedule.snr_db().min())
    if snr_db < floor_db:
        logger.warning(
            f"Observation SNR {snr_db:.2f} dB is below the schedule floor {floor_db:.2f} dB; "
            f"denoising starts at the last step",
            extra={"snr_db": snr_db, "schedule_floor_db": floor_db, "steps": model.schedule.steps}
        )
    t_star = snr_to_timestep(snr_db, model.schedule)
    return model.data_scale * y / math.sqrt(1.0 + noise_power), t_star


@dataclass
class TrainingTrace:
    """Loss history of one training run."""

    initial_loss: float = float("nan")
    epoch_losses: List[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


def fit(
    model: DiffusionModel,
    data: np.ndarray,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Tuple[DiffusionModel, TrainingTrace]:
    """
    Train the denoiser with mini-batch Adam on clean symbols.

    ``initial_loss`` is measured on the first batch before any update.

    Raises:
        DomainError: If data is empty
        TrainingError: If the loss or parameters become non-finite
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DomainError("Training data must be a non-empty (n, data_dim) array")

    n = data.shape[0]
    params = model.denoiser.parameters()
    state = AdamState.fresh(params, learning_rate, beta1, beta2, epsilon)
    trace = TrainingTrace()

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = data[order[start:start + batch_size]]
            result = training_loss(model, batch, rng)
            if not math.isfinite(result.loss):
                raise TrainingError(
                    f"Loss became non-finite at epoch {epoch + 1}, step {trace.steps}", trace
                )
            if trace.steps == 0:
                trace.initial_loss = result.loss
            params, state = adam_step(params, result.grads.parameters(), state)
            try:
                model = model.with_denoiser(model.denoiser.with_parameters(params))
            except NumericError as e:
                raise TrainingError(f"Parameters diverged at step {trace.steps}: {e}", trace)
            losses.append(result.loss)
            trace.steps += 1

        epoch_loss = float(np.mean(losses))
        trace.epoch_losses.append(epoch_loss)
        logger.info(
            f"DDPM epoch {epoch + 1}/{epochs}: loss={epoch_loss:.4f}",
            extra={"epoch": epoch + 1, "loss": epoch_loss, "steps": trace.steps}
        )
        if on_epoch is not None:
            on_epoch(epoch + 1, epoch_loss)

    model.trained_steps += trace.steps
    return model, trace
