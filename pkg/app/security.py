"""
Filesystem safety helpers: output confinement and atomic writes.
"""

import os
import tempfile
from pathlib import Path
from typing import Union

from app.exceptions import ArtifactError, OutputPathError
from app.logger import get_logger

logger = get_logger(__name__)


def ensure_within(file_path: Path, base_dir: Path) -> Path:
    """
    Confine a path to a base directory.

    Args:
        file_path: Path that is about to be written
        base_dir: Directory every output must stay inside

    Returns:
        Resolved path

    Raises:
        OutputPathError: If the path resolves outside base_dir
    """
    try:
        resolved_file = Path(file_path).resolve()
        resolved_base = Path(base_dir).resolve()
        resolved_file.relative_to(resolved_base)
    except ValueError:
        logger.warning(
            "Refusing to write outside the output directory",
            extra={
                "attempted_path": str(file_path),
                "base_dir": str(base_dir)
            }
        )
        raise OutputPathError(f"{file_path} is outside the output directory {base_dir}")
    except OSError as e:
        raise OutputPathError(f"Invalid output path {file_path}: {e}")

    return resolved_file


def atomic_write(file_path: Path, data: Union[bytes, str]) -> Path:
    """
    Write a file via a temporary sibling and ``os.replace``.

    Readers never observe a partially written file.

    Raises:
        ArtifactError: If the directory is not writable
    """
    file_path = Path(file_path)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{file_path.name}.", dir=file_path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_name, file_path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise
    except OSError as e:
        raise ArtifactError(f"Cannot write {file_path}: {e}")

    logger.debug(f"Wrote {file_path}", extra={"bytes": len(payload)})
    return file_path

