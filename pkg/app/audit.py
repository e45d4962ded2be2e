"""
Run ledger for diffphy.

Every cli invocation appends one JSON line to ``<out_dir>/runs.jsonl``:
subcommand, resolved parameters, result summary, success flag, execution
time and error message. The ledger is the audit trail that ties result
files back to the seeds and checkpoints that produced them.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from app.logger import ROOT_LOGGER_NAME

LEDGER_FILENAME = "runs.jsonl"

# Long sequences (SNR grids, beta tables) are shortened in ledger entries
_MAX_LIST_ITEMS = 16


class RunLedger:
    """
    Append-only JSON Lines ledger of subcommand runs in one output directory.
    """

    def __init__(self, out_dir: Path):
        """Attach a file handler to ``<out_dir>/runs.jsonl``."""
        self.path = Path(out_dir) / LEDGER_FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger(f"{ROOT_LOGGER_NAME}.ledger.{self.path.resolve()}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False

        self._handler = logging.FileHandler(self.path, encoding="utf-8")
        self._handler.setFormatter(logging.Formatter("%(message)s"))
        self.logger.addHandler(self._handler)

    def log_run(
        self,
        subcommand: str,
        parameters: Dict[str, Any],
        result_summary: str,
        success: bool,
        execution_time_ms: float,
        error_message: Optional[str] = None
    ) -> Dict[str, Any]:
        """
        Append one run entry.

        Args:
            subcommand: cli subcommand
            parameters: Resolved configuration (shortened for the ledger)
            result_summary: Brief summary of the result
            success: Whether the run succeeded
            execution_time_ms: Wall time in milliseconds
            error_message: Error message if the run failed

        Returns:
            The entry as written
        """
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "subcommand": subcommand,
            "parameters": self._shorten(parameters),
            "result_summary": result_summary,
            "success": success,
            "execution_time_ms": round(execution_time_ms, 2),
            "error_message": error_message
        }
        self.logger.info(json.dumps(entry, default=str))
        return entry

    def close(self) -> None:
        self.logger.removeHandler(self._handler)
        self._handler.close()

    def __enter__(self) -> "RunLedger":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def _shorten(self, parameters: Dict[str, Any]) -> Dict[str, Any]:
        shortened: Dict[str, Any] = {}
        for key, value in parameters.items():
            if isinstance(value, dict):
                shortened[key] = self._shorten(value)
            elif isinstance(value, list) and len(value) > _MAX_LIST_ITEMS:
                shortened[key] = value[:_MAX_LIST_ITEMS] + ["... (truncated)"]
            else:
                shortened[key] = value
        return shortened


def read_ledger(out_dir: Path) -> list:
    """All entries of an output directory's ledger, oldest first."""
    path = Path(out_dir) / LEDGER_FILENAME
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
