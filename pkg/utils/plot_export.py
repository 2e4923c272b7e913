# utils/plot_export.py
import json
import os
from typing import Dict, List

import numpy as np
import pandas as pd

from core.metrics import TrajectoryRecord, error_series
from core.sensor_log import write_versioned_csv

ERROR_SERIES_FORMAT = "multi-imu-error-series v1"
# row order of the comparison table
FILTER_ORDER = ("1-imu", "1-imu-ekm", "5-imu", "5-imu-ekm")


def ordered(results: Dict[str, Dict]) -> List[str]:
    known = [f for f in FILTER_ORDER if f in results]
    return known + sorted(f for f in results if f not in FILTER_ORDER)


def _cell(value, fmt: str) -> str:
    return "-" if value is None else format(value, fmt)


def comparison_table(results: Dict[str, Dict]) -> str:
    """Plain-text table with one row per filter"""
    lines = [f"{'filter':<12} {'RPE (cm)':>9} {'ATE (cm)':>9} {'AVDS (mm)':>10} {'yaw (deg)':>10}",
             "-" * 54]
    for name in ordered(results):
        m = results[name]
        lines.append(f"{name:<12} {_cell(m['rpe_cm'], '9.2f')} {_cell(m['ate_cm'], '9.2f')} "
                     f"{_cell(m['avds_mm'], '10.2f')} {_cell(m.get('yaw_drift_deg'), '10.2f')}")
    return "\n".join(lines) + "\n"


def error_series_frame(estimates: Dict[str, TrajectoryRecord], truth: TrajectoryRecord) -> pd.DataFrame:
    """Horizontal and vertical error per filter on the truth time grid"""
    df = pd.DataFrame({"t": truth.t})
    for name in ordered(estimates):
        t, xy, z = error_series(estimates[name], truth)
        idx = np.searchsorted(truth.t, t)
        idx = np.clip(idx, 0, len(truth.t) - 1)
        xy_col = np.full(len(truth.t), np.nan)
        z_col = np.full(len(truth.t), np.nan)
        xy_col[idx], z_col[idx] = xy, z
        df[f"{name}_xy_err"] = xy_col
        df[f"{name}_z_err"] = z_col
    return df


def export_comparison(out_dir: str, results: Dict[str, Dict],
                      estimates: Dict[str, TrajectoryRecord], truth: TrajectoryRecord) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, "comparison.json"),
             "table": os.path.join(out_dir, "comparison.txt"),
             "errors": os.path.join(out_dir, "errors.csv")}
    with open(paths["json"], "w", encoding="utf-8") as f:
        json.dump({name: results[name] for name in ordered(results)}, f, indent=2)
    with open(paths["table"], "w", encoding="utf-8") as f:
        f.write(comparison_table(results))
    write_versioned_csv(paths["errors"], ERROR_SERIES_FORMAT, error_series_frame(estimates, truth))
    return paths
