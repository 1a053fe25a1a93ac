"""
Comparison Reports

Aggregates traces into one row per controller, writes the report CSV and
per-episode trace CSV/SVG exports, and renders console summaries.

Multi-seed statistics: each metric is averaged over a seed's episodes first,
then the mean and standard deviation are taken across seeds.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from pydantic import BaseModel, Field  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from evaluation.metrics import TRACE_COLUMNS, EpisodeTrace, episode_metrics  # noqa: E402
from provenance import write_csv  # noqa: E402

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["controller", "SR", "SE_mm", "CONT_s", "CLIT_s", "n_episodes", "n_seeds"]
METRICS = ("SR", "SE_mm", "CONT_s", "CLIT_s")

# Stable element ids so identical traces give identical SVG files
matplotlib.rcParams["svg.hashsalt"] = "ballbeam"


class MetricStat(BaseModel):
    mean: float
    std: float

    def cell(self) -> str:
        return f"{self.mean:.3f}±{self.std:.3f}"


class MetricsRow(BaseModel):
    """Aggregate metrics of one controller"""

    controller: str
    SR: MetricStat
    SE_mm: MetricStat
    CONT_s: MetricStat
    CLIT_s: MetricStat
    n_episodes: int = Field(ge=0)
    seeds: List[int]

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    def cells(self) -> List[str]:
        return [self.controller, *(getattr(self, m).cell() for m in METRICS), str(self.n_episodes), str(self.n_seeds)]


class MetricsReport(BaseModel):
    rows: List[MetricsRow]
    config_hash: str = ""
    episode_seed: int = 0

    def row(self, controller: str) -> MetricsRow:
        for row in self.rows:
            if row.controller == controller:
                return row
        raise KeyError(controller)

    @property
    def seeds(self) -> List[int]:
        return sorted({s for row in self.rows for s in row.seeds})


def aggregate(controller: str, traces_by_seed: Dict[int, Sequence[EpisodeTrace]]) -> MetricsRow:
    per_seed = [episode_metrics(traces) for _, traces in sorted(traces_by_seed.items())]
    stats = {}
    for metric in METRICS:
        values = np.array([m[metric] for m in per_seed])
        stats[metric] = MetricStat(mean=float(np.mean(values)), std=float(np.std(values)))
    counts = {len(t) for t in traces_by_seed.values()}
    return MetricsRow(
        controller=controller,
        n_episodes=max(counts) if counts else 0,
        seeds=sorted(traces_by_seed),
        **stats,
    )


def compare_report(
    runs: Dict[str, Dict[int, Sequence[EpisodeTrace]]],
    config_hash: str = "",
    episode_seed: int = 0,
) -> MetricsReport:
    """One row per controller, in roster order"""
    return MetricsReport(
        rows=[aggregate(label, traces) for label, traces in runs.items()],
        config_hash=config_hash,
        episode_seed=episode_seed,
    )


def write_report_csv(report: MetricsReport, path: Union[str, Path]) -> Path:
    path = write_csv(path, REPORT_COLUMNS, [row.cells() for row in report.rows], report.config_hash, report.seeds)
    logger.info(f"Wrote report {path}")
    return path


def write_trace_csv(trace: EpisodeTrace, path: Union[str, Path], config_hash: str, seeds: Sequence[int]) -> Path:
    data = trace.columns()
    rows = zip(*(data[name].tolist() for name in TRACE_COLUMNS))
    return write_csv(path, [*TRACE_COLUMNS, "terminal"], ([*r, trace.terminal.name.lower()] for r in rows), config_hash, seeds)


def plot_trace(trace: EpisodeTrace, path: Union[str, Path], title: str = "") -> Path:
    """Error and commanded velocity increment over time, as SVG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_e, ax_dv) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    ax_e.plot(trace.time, trace.e, color="tab:blue")
    ax_e.axhspan(-0.02, 0.02, color="tab:green", alpha=0.15)
    ax_e.set_ylabel("e (m)")
    ax_dv.step(trace.time, trace.delta_v, where="post", color="tab:orange")
    ax_dv.set_ylabel("Δv_rz (m/s)")
    ax_dv.set_xlabel("time (s)")
    if title:
        ax_e.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def controller_slug(label: str) -> str:
    """File-name-safe form of a controller spec"""
    return label.replace(":", "_").replace("/", "_").replace("@", "_at_").replace(",", "+")


def export_traces(
    label: str,
    traces: Sequence[EpisodeTrace],
    out_dir: Union[str, Path],
    samples: int,
    config_hash: str,
    seeds: Sequence[int],
) -> List[Path]:
    """CSV and SVG for the first `samples` episodes of a controller"""
    slug = controller_slug(label)
    written = []
    for i, trace in enumerate(traces[:samples]):
        stem = Path(out_dir) / f"{slug}_ep{i:03d}"
        written.append(write_trace_csv(trace, stem.with_suffix(".csv"), config_hash, seeds))
        written.append(plot_trace(trace, stem.with_suffix(".svg"), title=f"{label} episode {i}"))
    return written


def render_report(report: MetricsReport, console: Console = None) -> None:
    table = Table(title="Ball-balancing comparison")
    for column in REPORT_COLUMNS:
        table.add_column(column, justify="left" if column == "controller" else "right")
    for row in report.rows:
        table.add_row(*row.cells())
    (console or Console()).print(table)
