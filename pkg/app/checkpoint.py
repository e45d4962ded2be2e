"""
Checkpoint persistence for trained networks.

Container layout::

    DIFFPHY-CKPT\\n
    <8-byte little-endian header length>
    <JSON CheckpointHeader>
    <little-endian float64 parameters in canonical order>

The header checksum is the SHA-256 of the payload, which equals
``Mlp.checksum()`` of the stored network.
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from typing_extensions import TypeAlias

from app.diffusion import DiffusionModel, VarianceSchedule
from app.exceptions import (
    ArtifactError,
    CorruptionError,
    DiffPhyError,
    IncompatibleCheckpointError,
)
from app.logger import get_logger
from app.neuralnet import HiddenActivation, Mlp, OutputActivation, TimeEmbedding
from app.pipelines.baseline import BaselineDnn
from app.schemas import CheckpointHeader
from app.security import atomic_write

logger = get_logger(__name__)

MAGIC = b"DIFFPHY-CKPT\n"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")

Artifact: TypeAlias = Union[DiffusionModel, BaselineDnn]


def _header_for(artifact: Artifact) -> CheckpointHeader:
    if isinstance(artifact, DiffusionModel):
        net = artifact.denoiser
        kind = "ddpm"
        extra = {
            "beta": artifact.schedule.beta.tolist(),
            "data_dim": artifact.data_dim,
            "data_scale": artifact.data_scale,
            "trained_steps": artifact.trained_steps,
        }
    else:
        net = artifact.net
        kind = "baseline"
        extra = {"order": artifact.order, "trained_steps": artifact.trained_steps}

    return CheckpointHeader(
        format_version=FORMAT_VERSION,
        kind=kind,
        layer_dims=list(net.layer_dims),
        hidden_activation=net.hidden_activation.value,
        output_activation=net.output_activation.value,
        embed_dim=net.embed_dim,
        shapes=[list(p.shape) for p in net.parameters()],
        checksum=net.checksum(),
        extra=extra,
    )


def save_checkpoint(artifact: Artifact, path: Path) -> str:
    """
    Write a trained DDPM or baseline to ``path`` atomically.

    Returns:
        The payload checksum recorded in the header

    Raises:
        ArtifactError: If the path is not writable
    """
    net = artifact.denoiser if isinstance(artifact, DiffusionModel) else artifact.net
    header = _header_for(artifact)
    header_bytes = header.model_dump_json().encode("utf-8")
    blob = MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + net.payload()
    atomic_write(path, blob)

    logger.info(
        f"Saved {header.kind} checkpoint to {path}",
        extra={"kind": header.kind, "checksum": header.checksum, "bytes": len(blob)}
    )
    return header.checksum


def _read_header(blob: bytes, path: Path) -> Tuple[CheckpointHeader, bytes]:
    if not blob.startswith(MAGIC):
        raise CorruptionError(f"{path} is not a diffphy checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + _LENGTH.size:
        raise CorruptionError(f"{path} is truncated (no header length)")
    (header_len,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    if len(blob) < offset + header_len:
        raise CorruptionError(f"{path} is truncated (header)")

    try:
        raw = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{path} has an unreadable header: {e}")
    if not isinstance(raw, dict):
        raise CorruptionError(f"{path} has an unreadable header")

    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path} has format version {version}; this build reads version {FORMAT_VERSION}"
        )
    try:
        header = CheckpointHeader.model_validate(raw)
    except ValidationError as e:
        raise CorruptionError(f"{path} has an invalid header: {e.error_count()} problem(s)")
    return header, blob[offset + header_len:]


def _rebuild_net(header: CheckpointHeader, payload: bytes, path: Path) -> Mlp:
    sizes = [int(np.prod(shape)) for shape in header.shapes]
    if len(payload) != 8 * sum(sizes):
        raise CorruptionError(
            f"{path} payload has {len(payload)} bytes, header describes {8 * sum(sizes)}"
        )
    if hashlib.sha256(payload).hexdigest() != header.checksum:
        raise CorruptionError(f"{path} checksum mismatch")

    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    arrays, start = [], 0
    for shape, size in zip(header.shapes, sizes):
        arrays.append(flat[start:start + size].reshape(shape))
        start += size

    n = len(header.layer_dims) - 1
    try:
        return Mlp(
            layer_dims=list(header.layer_dims),
            weights=arrays[:n],
            biases=arrays[n:2 * n],
            hidden_activation=HiddenActivation(header.hidden_activation),
            output_activation=OutputActivation(header.output_activation),
            embed_dim=header.embed_dim,
            projections=arrays[2 * n:],
        )
    except (DiffPhyError, ValueError) as e:
        raise CorruptionError(f"{path} does not describe a valid network: {e}")


def load_checkpoint(path: Path, expected_kind: Optional[str] = None) -> Artifact:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Args:
        path: Checkpoint file
        expected_kind: ``"ddpm"`` or ``"baseline"`` to reject the other kind

    Returns:
        DiffusionModel or BaselineDnn with bit-identical parameters

    Raises:
        ArtifactError: If the file cannot be read
        CorruptionError: Bad magic, truncation, bad header or checksum mismatch
        IncompatibleCheckpointError: Other format version or unexpected kind
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ArtifactError(f"Cannot read checkpoint {path}: {e}")

    header, payload = _read_header(blob, path)
    if expected_kind is not None and header.kind != expected_kind:
        raise IncompatibleCheckpointError(
            f"{path} holds a {header.kind} checkpoint, expected {expected_kind}"
        )
    net = _rebuild_net(header, payload, path)
    extra = header.extra

    try:
        if header.kind == "ddpm":
            schedule = VarianceSchedule(beta=np.asarray(extra["beta"], dtype=np.float64))
            artifact: Artifact = DiffusionModel(
                schedule=schedule,
                denoiser=net,
                embedding=TimeEmbedding(dim=net.embed_dim, max_timestep=schedule.steps),
                data_dim=int(extra["data_dim"]),
                data_scale=float(extra["data_scale"]),
                trained_steps=int(extra["trained_steps"]),
            )
        else:
            artifact = BaselineDnn(
                net=net, order=int(extra["order"]), trained_steps=int(extra["trained_steps"])
            )
    except (KeyError, TypeError, DiffPhyError) as e:
        raise CorruptionError(f"{path} has inconsistent metadata: {e}")

    logger.info(
        f"Loaded {header.kind} checkpoint from {path}",
        extra={"kind": header.kind, "checksum": header.checksum}
    )
    return artifact
