import csv
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from app.services.dgtd import MetricSeries, RunTrace

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("consensus_penalty", "theta_err", "v_norm", "w_err", "gap_proxy")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def trace_header(num_agents: int, q: int) -> List[str]:
    header = ["k", *METRIC_COLUMNS]
    header += [f"w_agent_{i + 1}_{j + 1}" for i in range(num_agents) for j in range(q)]
    return header


def export_series(series: MetricSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(series):
        num_agents, q = series.w_blocks[0].shape
    else:
        num_agents, q = 0, 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(trace_header(num_agents, q))
        for row in range(len(series)):
            metrics = [_fmt(getattr(series, column)[row]) for column in METRIC_COLUMNS]
            blocks = [_fmt(x) for x in series.w_blocks[row].ravel()]
            writer.writerow([series.k[row], *metrics, *blocks])
    logger.info(f"Wrote {len(series)} trace rows to {path}")
    return path


def export_trace(trace: RunTrace, path: Union[str, Path]) -> List[Path]:
    """
    Write the primary metric series to `path`; when both averaged and last
    iterates were recorded the last-iterate series goes next to it with a
    `_last` suffix.
    """
    path = Path(path)
    written = [export_series(trace.primary, path)]
    if "averaged" in trace.series and "last" in trace.series:
        written.append(export_series(trace.series["last"], path.with_name(f"{path.stem}_last{path.suffix}")))
    return written


def read_trace(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def export_heatmaps(
    trace: RunTrace,
    phi: np.ndarray,
    grid_shape: Tuple[int, int],
    directory: Union[str, Path],
) -> Dict[int, Path]:
    """Per-agent value estimates Phi w_i of the averaged iterate, one rows x cols CSV each"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for agent, w in enumerate(trace.averaged.w):
        values = (phi @ w).reshape(grid_shape)
        path = directory / f"value_agent_{agent + 1}.csv"
        np.savetxt(path, values, delimiter=",", fmt="%.17g")
        written[agent] = path
    logger.info(f"Wrote {len(written)} value heatmaps to {directory}")
    return written
