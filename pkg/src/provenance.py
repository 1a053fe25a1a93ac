"""
CSV output with provenance header lines.

Every CSV written by the lab starts with ``# config_hash: <hex>`` and
``# seeds: <comma-separated>`` before the column header.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence, Union

logger = logging.getLogger(__name__)


def format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(
    path: Union[str, Path],
    columns: Sequence[str],
    rows: Iterable[Sequence],
    config_hash: str,
    seeds: Sequence[int],
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        fh.write(f"# seeds: {','.join(str(s) for s in seeds)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    logger.debug(f"Wrote {path}")
    return path


def append_csv_row(path: Union[str, Path], row: Sequence) -> None:
    with open(path, "a", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([format_cell(v) for v in row])


def read_csv(path: Union[str, Path]):
    """(provenance dict, column names, rows as string lists)"""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and ":" in line and not body:
            key, _, value = line[2:].partition(":")
            meta[key.strip()] = value.strip()
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]
