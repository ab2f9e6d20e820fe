"""CSV tables and log-log SVG plots of convergence studies."""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from models import ConvergenceTable, ErrorMetric, ErrorReport, RunRecord, StudyKind  # noqa: E402

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "scenario", "level", "h", "tau", "N",
    "err_l2_bulk", "err_l2_surf", "err_h1_bulk", "err_h1_surf",
    "eoc_l2", "energy_drift", "wall_seconds",
    "surface_weight", "metric", "t",
]
ERROR_COLUMNS = ["err_l2_bulk", "err_l2_surf", "err_h1_bulk", "err_h1_surf"]
_NO_ERRORS = {**{name: math.nan for name in ERROR_COLUMNS}, "surface_weight": math.nan, "metric": "", "t": math.nan}
SLOPE_GUIDES = (1.0, 1.5, 2.0)


def table_to_frame(table: ConvergenceTable) -> pd.DataFrame:
    rows = []
    for index, record in enumerate(table.rows):
        errors = record.errors.as_row() if record.errors is not None else _NO_ERRORS
        rows.append({
            "scenario": record.scenario,
            "level": record.level,
            "h": record.h,
            "tau": record.tau,
            "N": record.n_dofs,
            **errors,
            "eoc_l2": table.eoc[index - 1] if index > 0 else math.nan,
            "energy_drift": record.energy_drift,
            "wall_seconds": record.wall_seconds,
        })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_csv(table: ConvergenceTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    table_to_frame(table).to_csv(path, index=False, float_format="%.17g", na_rep="nan")
    return path


def _optional(value: float) -> Optional[float]:
    return None if math.isnan(value) else float(value)


def load_table(path: Union[str, Path], kind: Optional[StudyKind] = None) -> ConvergenceTable:
    """Parse a study CSV back into a ConvergenceTable"""
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=["nan"])
    missing = [column for column in CSV_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns {missing}")
    if kind is None:
        kind = StudyKind.TEMPORAL if len(frame) > 1 and frame["h"].nunique() == 1 else StudyKind.SPATIAL

    rows: List[RunRecord] = []
    for item in frame.itertuples(index=False):
        errors = None
        if not (math.isnan(item.err_l2_bulk) or math.isnan(item.err_l2_surf)):
            errors = ErrorReport(
                err_l2_bulk=float(item.err_l2_bulk),
                err_l2_surf=float(item.err_l2_surf),
                err_h1_bulk=_optional(item.err_h1_bulk),
                err_h1_surf=_optional(item.err_h1_surf),
                metric=ErrorMetric(item.metric),
                level=int(item.level),
                t=float(item.t),
                surface_weight=float(item.surface_weight),
            )
        rows.append(RunRecord(
            scenario=str(item.scenario), level=int(item.level), h=float(item.h), tau=float(item.tau),
            n_dofs=int(item.N), wall_seconds=float(item.wall_seconds), errors=errors,
            energy_drift=float(item.energy_drift),
        ))
    rates = [float(value) for value in frame["eoc_l2"].iloc[1:]]
    return ConvergenceTable(kind=kind, scenario=rows[0].scenario if rows else "", rows=rows, eoc=rates)


def plot_table(table: ConvergenceTable, path: Union[str, Path], norms: Optional[Sequence[str]] = None) -> Path:
    """Log-log error curves with reference slopes of order 1, 1.5 and 2"""
    norms = list(norms or ERROR_COLUMNS)
    frame = table_to_frame(table)
    x_name = "h" if table.kind == StudyKind.SPATIAL else "tau"
    x = frame[x_name].to_numpy(dtype=float)

    plt.rcParams["svg.hashsalt"] = "bswave"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    anchor = None
    for name in norms:
        y = frame[name].to_numpy(dtype=float)
        valid = np.isfinite(y) & (y > 0.0)
        ax.loglog(x[valid], y[valid], marker="o", label=name, gid=f"norm-{name}")
        if anchor is None and np.any(valid):
            first = int(np.flatnonzero(valid)[0])
            anchor = (x[first], y[first])

    if anchor is not None and len(x) > 1:
        x0, y0 = anchor
        for order in SLOPE_GUIDES:
            ax.loglog(x, y0 * (x / x0) ** order, linestyle="--", color="gray", linewidth=0.8,
                      label=f"order {order:g}", gid=f"slope-{order:g}")

    ax.set_xlabel(x_name)
    ax.set_ylabel("error")
    ax.set_title(f"{table.scenario}: {table.kind.value} convergence")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_outputs(table: ConvergenceTable, directory: Union[str, Path],
                 norms: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    """Write study.csv and study.svg into the output directory"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    outputs = {
        "csv": write_csv(table, directory / "study.csv"),
        "svg": plot_table(table, directory / "study.svg", norms),
    }
    logger.info(f"Wrote {len(table.rows)} rows to {outputs['csv']} and plot to {outputs['svg']}")
    return outputs
