"""
Feed-forward network machinery for the denoiser and the DNN baseline.

Row-vector convention throughout: a batch is an ``(n, width)`` array and a
layer computes ``a @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
Time-conditioned networks add ``t_embed @ P`` to every hidden
pre-activation, ``P`` of shape ``(embed_dim, width)``.
"""

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.exceptions import DimensionError, DomainError, NumericError, StateError
from app.logger import get_logger

logger = get_logger(__name__)

# Fan-in gain shared by Softplus and ReLU layers
KAIMING_GAIN = 2.0


class HiddenActivation(str, Enum):
    SOFTPLUS = "softplus"
    RELU = "relu"


class OutputActivation(str, Enum):
    LINEAR = "linear"
    SOFTMAX = "softmax"


@dataclass
class Mlp:
    """
    Multi-layer perceptron with optional additive time conditioning.

    Attributes:
        layer_dims: [input, hidden..., output]
        weights: Per-layer ``(fan_in, fan_out)`` matrices
        biases: Per-layer ``(fan_out,)`` vectors
        hidden_activation: Non-linearity of every hidden layer
        output_activation: Linear or Softmax output
        embed_dim: Width of the conditioning input (0 = unconditioned)
        projections: Per hidden layer ``(embed_dim, width)`` matrices
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hidden_activation: HiddenActivation = HiddenActivation.SOFTPLUS
    output_activation: OutputActivation = OutputActivation.LINEAR
    embed_dim: int = 0
    projections: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    def validate(self) -> None:
        """
        Check that parameter shapes chain with ``layer_dims`` and are finite.

        Raises:
            DimensionError: On any shape inconsistency
            NumericError: If a parameter is NaN or infinite
        """
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise DimensionError(f"Invalid layer_dims {self.layer_dims}")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise DimensionError("One weight matrix and bias vector required per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l], self.layer_dims[l + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise DimensionError(
                    f"Layer {l} has W{w.shape}, b{b.shape}; expected W{expected}, b({expected[1]},)"
                )
        if self.embed_dim > 0:
            if len(self.projections) != self.n_hidden:
                raise DimensionError("One conditioning projection required per hidden layer")
            for l, p in enumerate(self.projections):
                if p.shape != (self.embed_dim, self.layer_dims[l + 1]):
                    raise DimensionError(f"Projection {l} has shape {p.shape}")
        elif self.projections:
            raise DimensionError("Unconditioned network cannot own projections")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise NumericError("Network parameters contain NaN or Inf")

    def parameters(self) -> List[np.ndarray]:
        """All parameter arrays in canonical order: weights, biases, projections."""
        return [*self.weights, *self.biases, *self.projections]

    def with_parameters(self, arrays: Sequence[np.ndarray]) -> "Mlp":
        """Return a copy of this network holding ``arrays`` in canonical order."""
        n = self.n_layers
        arrays = list(arrays)
        if len(arrays) != len(self.parameters()):
            raise DimensionError("Parameter count does not match the network")
        return replace(
            self,
            weights=arrays[:n],
            biases=arrays[n:2 * n],
            projections=arrays[2 * n:],
        )

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def payload(self) -> bytes:
        """Little-endian float64 bytes of all parameters in canonical order."""
        return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in self.parameters())

    def checksum(self) -> str:
        """SHA-256 of the parameter payload; identifies a trained model."""
        return hashlib.sha256(self.payload()).hexdigest()


@dataclass
class ForwardCache:
    """Activations kept by ``forward`` for ``backward``."""

    signature: Tuple[Tuple[int, ...], int]
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    t_embed: Optional[np.ndarray]
    output: np.ndarray


@dataclass
class Gradients:
    """Gradients aligned with ``Mlp.parameters()``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    projections: List[np.ndarray]
    input: np.ndarray

    def parameters(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases, *self.projections]


@dataclass
class AdamState:
    """
    Adam optimizer state.

    ``first_moment`` and ``second_moment`` shape-match the parameters they
    track; ``step_count`` increments by one per update.
    """

    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(
        cls,
        params: Sequence[np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        """Zero moments for ``params``."""
        return cls(
            first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            step_count=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


@dataclass(frozen=True)
class TimeEmbedding:
    """Transformer-style sinusoidal embedding of diffusion step indices."""

    dim: int
    max_timestep: int

    def __post_init__(self) -> None:
        if self.dim <= 0 or self.dim % 2:
            raise DomainError(f"Embedding dim must be even and positive, got {self.dim}")
        if self.max_timestep <= 0:
            raise DomainError(f"max_timestep must be positive, got {self.max_timestep}")

    @property
    def frequencies(self) -> np.ndarray:
        half = self.dim // 2
        return np.power(10000.0, -np.arange(half, dtype=np.float64) / half)

    def table(self) -> np.ndarray:
        """Embeddings of t = 0..max_timestep as a ``(max_timestep + 1, dim)`` array."""
        return _embed(np.arange(self.max_timestep + 1, dtype=np.float64), self)


def _embed(ts: np.ndarray, emb: TimeEmbedding) -> np.ndarray:
    angles = ts[:, None] * emb.frequencies[None, :]
    out = np.empty((ts.shape[0], emb.dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def sinusoidal_embed(t: int, emb: TimeEmbedding) -> np.ndarray:
    """
    Embed one diffusion step index.

    Entries alternate ``sin(t * f_i)``, ``cos(t * f_i)`` with geometric
    frequencies ``f_i = 10000^(-i / (dim/2))``. t = 0 is accepted and maps
    to the clean-data index.

    Raises:
        DomainError: If t is outside 0..max_timestep
    """
    if not 0 <= int(t) <= emb.max_timestep or int(t) != t:
        raise DomainError(f"Timestep {t} outside 0..{emb.max_timestep}")
    return _embed(np.array([float(t)]), emb)[0]


def init_weights(
    layer_dims: Sequence[int],
    seed: int,
    hidden_activation: HiddenActivation = HiddenActivation.SOFTPLUS,
    output_activation: OutputActivation = OutputActivation.LINEAR,
    embed_dim: int = 0,
) -> Mlp:
    """
    Build a network with fan-in scaled normal weights and zero biases.

    Weights (and conditioning projections) are drawn from
    ``N(0, KAIMING_GAIN / fan_in)``; the same seed reproduces the same
    parameters bit for bit.

    Raises:
        DomainError: If fewer than two dims are given or any dim is not positive
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise DomainError(f"layer_dims needs at least two positive entries, got {list(layer_dims)}")
    if embed_dim < 0:
        raise DomainError("embed_dim must be non-negative")

    rng = np.random.default_rng(seed)
    weights = [
        rng.normal(0.0, np.sqrt(KAIMING_GAIN / dims[l]), size=(dims[l], dims[l + 1]))
        for l in range(len(dims) - 1)
    ]
    biases = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
    projections = []
    if embed_dim > 0:
        projections = [
            rng.normal(0.0, np.sqrt(KAIMING_GAIN / embed_dim), size=(embed_dim, width))
            for width in dims[1:-1]
        ]

    return Mlp(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        hidden_activation=HiddenActivation(hidden_activation),
        output_activation=OutputActivation(output_activation),
        embed_dim=embed_dim,
        projections=projections,
    )


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z: np.ndarray, kind: HiddenActivation) -> np.ndarray:
    if kind is HiddenActivation.SOFTPLUS:
        return softplus(z)
    return np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, kind: HiddenActivation) -> np.ndarray:
    if kind is HiddenActivation.SOFTPLUS:
        return expit(z)
    return (z > 0).astype(z.dtype)


def _signature(net: Mlp) -> Tuple[Tuple[int, ...], int]:
    return tuple(net.layer_dims), net.embed_dim


def forward(
    net: Mlp,
    x: np.ndarray,
    t_embed: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run the network on a batch.

    Args:
        net: Network
        x: ``(n, layer_dims[0])`` input batch
        t_embed: ``(n, embed_dim)`` or ``(1, embed_dim)`` conditioning;
            required iff ``net.embed_dim > 0``

    Returns:
        Output batch and the cache needed by ``backward``

    Raises:
        DimensionError: On shape mismatch
        NumericError: If the input is not finite
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise DimensionError(f"Input shape {x.shape} does not match width {net.layer_dims[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("Network input contains NaN or Inf")

    if net.embed_dim > 0:
        if t_embed is None:
            raise DimensionError("Time-conditioned network requires t_embed")
        t_embed = np.asarray(t_embed, dtype=np.float64)
        if t_embed.ndim == 1:
            t_embed = t_embed[None, :]
        if t_embed.shape[1] != net.embed_dim or t_embed.shape[0] not in (1, x.shape[0]):
            raise DimensionError(
                f"t_embed shape {t_embed.shape} incompatible with batch {x.shape[0]} "
                f"and embed_dim {net.embed_dim}"
            )
    elif t_embed is not None:
        raise DimensionError("Unconditioned network does not accept t_embed")

    inputs, pre = [], []
    a = x
    for l in range(net.n_hidden):
        z = a @ net.weights[l] + net.biases[l]
        if t_embed is not None:
            z = z + t_embed @ net.projections[l]
        inputs.append(a)
        pre.append(z)
        a = _activate(z, net.hidden_activation)

    z = a @ net.weights[-1] + net.biases[-1]
    inputs.append(a)
    pre.append(z)
    out = softmax(z) if net.output_activation is OutputActivation.SOFTMAX else z

    cache = ForwardCache(
        signature=_signature(net),
        inputs=inputs,
        pre_activations=pre,
        t_embed=t_embed,
        output=out,
    )
    return out, cache


def backward(
    net: Mlp,
    cache: ForwardCache,
    output_grad: np.ndarray,
    through_output_activation: bool = True,
) -> Gradients:
    """
    Backpropagate a loss gradient through the network.

    Args:
        net: Network the cache was produced with
        cache: Result of the matching ``forward`` call
        output_grad: dLoss/dOutput, same shape as the output batch
        through_output_activation: When False, ``output_grad`` is taken as
            the gradient with respect to the final pre-activation (logits)

    Returns:
        Gradients for every weight, bias and projection, plus the input gradient

    Raises:
        StateError: If the cache does not belong to this network
    """
    if cache.signature != _signature(net) or len(cache.inputs) != net.n_layers:
        raise StateError("Forward cache was produced by a different network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise DimensionError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")

    if through_output_activation and net.output_activation is OutputActivation.SOFTMAX:
        p = cache.output
        dz = p * (g - np.sum(g * p, axis=1, keepdims=True))
    else:
        dz = g

    n = net.n_layers
    dW: List[np.ndarray] = [np.empty(0)] * n
    db: List[np.ndarray] = [np.empty(0)] * n
    dP: List[np.ndarray] = [np.empty(0)] * net.n_hidden if net.embed_dim > 0 else []

    for l in range(n - 1, -1, -1):
        dW[l] = cache.inputs[l].T @ dz
        db[l] = dz.sum(axis=0)
        if l < net.n_hidden and net.embed_dim > 0:
            te = cache.t_embed
            if te.shape[0] == 1 and dz.shape[0] != 1:
                dP[l] = te.T @ dz.sum(axis=0, keepdims=True)
            else:
                dP[l] = te.T @ dz
        da = dz @ net.weights[l].T
        if l > 0:
            dz = da * _activation_grad(cache.pre_activations[l - 1], net.hidden_activation)

    return Gradients(weights=dW, biases=db, projections=dP, input=da)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameter arrays and a new state; inputs are not modified.

    Raises:
        DimensionError: If params, grads and moments do not shape-match
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("params, grads and Adam moments differ in length")

    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise DimensionError(f"Shape mismatch in Adam update: {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)

    return new_params, replace(state, first_moment=new_m, second_moment=new_v, step_count=step)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy of integer labels under softmax(logits).

    Returns:
        The loss and its gradient with respect to the logits
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = float(-log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
