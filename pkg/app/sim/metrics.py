"""
Per-block simulation metrics and their CSV, summary and plot outputs.

Loads are CPU fractions of one node (1.0 = fully used). The standard
deviation is the population form over the nodes alive at that block.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.types import PPM_ONE

METRICS_SCHEMA_VERSION = 1
BASE_COLUMNS = (
    "height",
    "mean_load",
    "std_dev",
    "queue_length",
    "running_apps",
    "migrations",
    "messages_sent",
    "payload_bytes",
)


def load_column(index: int) -> str:
    return f"load_node_{index:03d}"


@dataclass(frozen=True)
class MetricsRow:
    height: int
    # ppm per node index; None for a node that is down
    loads: Sequence[Optional[int]]
    queue_length: int = 0
    running_apps: int = 0
    migrations: int = 0
    messages_sent: int = 0
    payload_bytes: int = 0

    def live_loads(self) -> np.ndarray:
        return np.array([ppm for ppm in self.loads if ppm is not None], dtype=np.int64) / PPM_ONE

    @property
    def mean_load(self) -> float:
        live = self.live_loads()
        return float(live.mean()) if live.size else 0.0

    @property
    def std_dev(self) -> float:
        live = self.live_loads()
        return float(live.std(ddof=0)) if live.size else 0.0


@dataclass
class MetricsSeries:
    node_count: int
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def std_devs(self) -> np.ndarray:
        return np.array([row.std_dev for row in self.rows])

    @property
    def running_counts(self) -> List[int]:
        return [row.running_apps for row in self.rows]

    def columns(self) -> List[str]:
        return list(BASE_COLUMNS) + [load_column(i) for i in range(self.node_count)]

    def to_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record = {
                "height": row.height,
                "mean_load": row.mean_load,
                "std_dev": row.std_dev,
                "queue_length": row.queue_length,
                "running_apps": row.running_apps,
                "migrations": row.migrations,
                "messages_sent": row.messages_sent,
                "payload_bytes": row.payload_bytes,
            }
            for i, ppm in enumerate(row.loads):
                record[load_column(i)] = np.nan if ppm is None else ppm / PPM_ONE
            records.append(record)
        return pd.DataFrame.from_records(records, columns=self.columns())

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.6f", lineterminator="\n")

    def write_csv(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def crossover_block(metrics: MetricsSeries, node_count: int) -> Optional[int]:
    """First block at which running apps outnumber nodes"""
    for row in metrics.rows:
        if row.running_apps > node_count:
            return row.height
    return None


def split_at_crossover(metrics: MetricsSeries, node_count: int):
    """(pre, post) std-dev arrays around the crossover block, post including it"""
    stds = metrics.std_devs
    cross = crossover_block(metrics, node_count)
    if cross is None:
        return stds, stds[:0]
    index = next(i for i, row in enumerate(metrics.rows) if row.height == cross)
    return stds[:index], stds[index:]


def summarize(metrics: MetricsSeries, node_count: int) -> Dict[str, object]:
    pre, post = split_at_crossover(metrics, node_count)
    stds = metrics.std_devs

    def _stat(values: np.ndarray, fn) -> Optional[float]:
        return round(float(fn(values)), 6) if values.size else None

    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "node_count": node_count,
        "blocks": len(metrics),
        "crossover_block": crossover_block(metrics, node_count),
        "mean_std_dev": _stat(stds, np.mean),
        "max_std_dev": _stat(stds, np.max),
        "post_crossover_mean_std_dev": _stat(post, np.mean),
        "pre_crossover_std_dev_variance": _stat(pre, np.var),
        "post_crossover_std_dev_variance": _stat(post, np.var),
        "migrations": sum(row.migrations for row in metrics.rows),
        "messages_sent": sum(row.messages_sent for row in metrics.rows),
        "payload_bytes": sum(row.payload_bytes for row in metrics.rows),
        "max_running_apps": max(metrics.running_counts, default=0),
    }


def write_summary(summary: Dict[str, object], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def gnuplot_script(csv_name: str, title: str) -> str:
    return "\n".join([
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set xlabel 'block'",
        "set ylabel 'CPU load std-dev'",
        "set y2label 'running apps'",
        "set y2tics",
        "set terminal pngcairo size 900,500",
        f"set output '{Path(csv_name).stem}.png'",
        f"plot '{csv_name}' using 'height':'std_dev' with lines axes x1y1, \\",
        f"     '' using 'height':'running_apps' with steps axes x1y2",
        "",
    ])
