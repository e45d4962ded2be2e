"""
CSV emission, read-back and static plots for result tables.

File layout: metadata as leading ``# key: <json>`` comment lines (column
units included), one header row, then data rows. Floats are written with
17 significant digits so every numeric cell reads back bit-exactly.
"""

import csv
import io
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from matplotlib.figure import Figure

from app import __version__
from app.exceptions import ArtifactError, CorruptionError, DomainError
from app.logger import get_logger
from app.schemas import Cell, ResultColumn, ResultTable
from app.security import atomic_write, ensure_within

logger = get_logger(__name__)

_UNITS_KEY = "units"
_INT_RE = re.compile(r"^[+-]?\d+$")


def format_cell(value: Cell) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = format(value, ".17g")
        if not any(ch in text for ch in ".eni"):
            text += ".0"
        return text
    return str(value)


def _parse_numeric(text: str) -> Cell:
    if _INT_RE.match(text):
        return int(text)
    return float(text)


def _is_numeric(text: str) -> bool:
    try:
        _parse_numeric(text)
    except ValueError:
        return False
    return True


def table_to_csv(table: ResultTable) -> str:
    """Render a table in the on-disk CSV format."""
    buffer = io.StringIO()
    metadata = {**table.metadata, "tool_version": table.metadata.get("tool_version", __version__)}
    metadata[_UNITS_KEY] = {c.name: c.unit for c in table.columns}
    for key, value in metadata.items():
        buffer.write(f"# {key}: {json.dumps(value, default=str, sort_keys=True)}\n")

    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.column_names)
    for row in table.rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def write_results(
    table: ResultTable,
    path: Path,
    plot: bool = False,
    base_dir: Optional[Path] = None,
) -> List[Path]:
    """
    Write a table as CSV, plus an SVG plot next to it when requested.

    Args:
        table: Result table
        path: CSV destination
        plot: Also render ``path`` with an ``.svg`` suffix
        base_dir: When given, every written file must resolve inside it

    Returns:
        Paths of the files written

    Raises:
        OutputPathError: If a destination escapes base_dir
        ArtifactError: If a file cannot be written
    """
    path = Path(path)
    targets = [path] + ([path.with_suffix(".svg")] if plot else [])
    if base_dir is not None:
        for target in targets:
            ensure_within(target, base_dir)

    atomic_write(path, table_to_csv(table))
    written = [path]
    logger.info(f"Wrote {len(table.rows)} rows to {path}", extra={"rows": len(table.rows)})

    if plot:
        figure = render_plot(table)
        svg = io.BytesIO()
        figure.savefig(svg, format="svg")
        atomic_write(targets[1], svg.getvalue())
        written.append(targets[1])
        logger.info(f"Wrote plot {targets[1]}")

    return written


def _split_metadata(lines: List[str]) -> Tuple[Dict[str, Any], List[str]]:
    metadata: Dict[str, Any] = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, sep, value = line[1:].strip().partition(":")
        if not sep:
            raise CorruptionError(f"Malformed metadata line: {line!r}")
        metadata[key.strip()] = json.loads(value.strip())
    else:
        body_start = len(lines)
    return metadata, lines[body_start:]


def read_results(path: Path) -> ResultTable:
    """
    Parse a CSV written by ``write_results`` back into a ResultTable.

    A column whose every cell parses as a number is read as numbers (ints
    stay ints); any other column is read as text.

    Raises:
        ArtifactError: If the file cannot be read
        CorruptionError: If the file does not follow the layout
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Cannot read results {path}: {e}")

    try:
        metadata, body = _split_metadata(text.splitlines())
    except json.JSONDecodeError as e:
        raise CorruptionError(f"{path} has unreadable metadata: {e}")
    if not body:
        raise CorruptionError(f"{path} has no header row")

    records = list(csv.reader(body))
    names, raw_rows = records[0], records[1:]
    units = metadata.pop(_UNITS_KEY, {})
    columns = [ResultColumn(name=name, unit=units.get(name, "")) for name in names]

    numeric = [all(_is_numeric(row[j]) for row in raw_rows) for j in range(len(names))]
    rows = [
        [_parse_numeric(cell) if numeric[j] else cell for j, cell in enumerate(row)]
        for row in raw_rows
    ]
    return ResultTable(columns=columns, rows=rows, metadata=metadata)


def _series(table: ResultTable, y_name: str, group_names: List[str]) -> Dict[str, Tuple[list, list]]:
    series: Dict[str, Tuple[list, list]] = {}
    for record in table.records():
        label = " / ".join(str(record[g]) for g in group_names)
        xs, ys = series.setdefault(label, ([], []))
        xs.append(record["snr_db"])
        ys.append(record[y_name])
    return series


def render_plot(table: ResultTable) -> Figure:
    """
    Line plot of a sweep table against SNR.

    BER tables use a logarithmic y-axis; mutual information and shaping
    tables use a linear one.
    """
    names = table.column_names
    figure = Figure(figsize=(6.4, 4.8))
    ax = figure.add_subplot(1, 1, 1)

    if "ber" in names:
        for label, (xs, ys) in _series(table, "ber", ["channel", "receiver"]).items():
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_yscale("log", nonpositive="mask")
        ax.set_ylabel("BER")
        ax.set_xlabel("SNR (dB)")
    elif "mutual_information" in names:
        for label, (xs, ys) in _series(table, "mutual_information", ["channel", "arm"]).items():
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_ylabel("Mutual information (bits)")
        ax.set_xlabel("SNR (dB)")
    elif "probability" in names:
        by_snr: Dict[str, Tuple[list, list]] = {}
        for record in table.records():
            xs, ys = by_snr.setdefault(f"{record['snr_db']} dB", ([], []))
            xs.append(record["index"])
            ys.append(record["probability"])
        for label, (xs, ys) in by_snr.items():
            ax.plot(xs, ys, marker=".", label=label)
        ax.set_ylabel("Transmit probability")
        ax.set_xlabel("Constellation index")
    elif "loss" in names:
        ax.plot(table.column("epoch"), table.column("loss"), marker="o")
        ax.set_yscale("log", nonpositive="mask")
        ax.set_ylabel("Loss")
        ax.set_xlabel("Epoch")
    else:
        raise DomainError(f"No plot layout for columns {names}")

    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")
    experiment = table.metadata.get("experiment")
    if experiment:
        ax.set_title(str(experiment))
    figure.tight_layout()
    return figure
