"""Raw sweep CSV -> plotted series (means, 2-sigma bands, smoothing).

Everything is recomputed from the raw rows so the tool stands alone; the
definitions mirror the harness post-processing exactly: finite-value means
per (dt, strategy), band half-width 2 * sample standard deviation / sqrt(n),
and a centered moving average over the log-spaced dt grid whose window
shrinks at the edges and skips missing values.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

METRICS = (
    "i_channel_bits", "i_coarse_bits", "m_coarse_bits", "n_coarse_bits",
    "delta_i_bits", "delta_m_bits", "delta_n_bits", "lambda_max",
)


@dataclass
class Series:
    strategy: str
    metric: str
    dt: list[float]
    mean: list[float]
    sem2: list[float]
    mean_smooth: list[float]
    sem2_smooth: list[float]


def read_rows(csv_path: str) -> list[dict]:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("dt", "strategy") if c not in header]
        if missing:
            raise ValueError(f"CSV {csv_path} lacks required columns {missing}")
        return list(reader)


def centered_moving_average(values: list[float], window: int) -> list[float]:
    half = window // 2
    out = []
    for i in range(len(values)):
        chunk = [v for v in values[max(0, i - half):i + half + 1] if not math.isnan(v)]
        out.append(sum(chunk) / len(chunk) if chunk else math.nan)
    return out


def build_series(rows: list[dict], strategy: str, metric: str, window: int) -> Series:
    if rows and metric not in rows[0]:
        raise ValueError(f"CSV has no column {metric!r}")
    picked = [r for r in rows if r["strategy"] == strategy]
    if not picked:
        raise ValueError(f"no rows for strategy {strategy!r}")
    dts = sorted({float(r["dt"]) for r in picked})
    means, sems = [], []
    for dt in dts:
        vals = [float(r[metric]) for r in picked if float(r["dt"]) == dt and r[metric] != ""]
        finite = [v for v in vals if math.isfinite(v)]
        if finite:
            mean = sum(finite) / len(finite)
            if len(finite) > 1:
                var = sum((v - mean) ** 2 for v in finite) / (len(finite) - 1)
                sem = 2.0 * math.sqrt(var) / math.sqrt(len(finite))
            else:
                sem = 0.0
        else:
            mean, sem = math.nan, math.nan
        means.append(mean)
        sems.append(sem)
    return Series(strategy, metric, dts, means, sems,
                  centered_moving_average(means, window),
                  centered_moving_average(sems, window))
