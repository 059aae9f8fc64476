"""Figure panels: channel information and monotone changes versus dt."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .series import Series, build_series, read_rows

PANELS = {
    "channel_info_small": {
        "metrics": ("i_channel_bits",),
        "strategies": ("ref", "dd", "odd"),
        "ylabel": "channel information (bits)",
    },
    "channel_info_full": {
        "metrics": ("i_channel_bits",),
        "strategies": ("ref", "dd", "cdd", "odd", "modd"),
        "ylabel": "channel information (bits)",
    },
    "monotone_deltas": {
        "metrics": ("delta_i_bits", "delta_m_bits", "delta_n_bits"),
        "strategies": ("dd", "modd"),
        "ylabel": "monotone change (bits)",
    },
}

_DELTA_TEXT = {"delta_i_bits": "dI", "delta_m_bits": "dM", "delta_n_bits": "dN"}


@dataclass
class PanelSpec:
    panel: str
    strategies: tuple[str, ...] = ()
    window: int = 5

    def __post_init__(self):
        if self.panel not in PANELS:
            raise ValueError(f"unknown panel {self.panel!r}; choose from {sorted(PANELS)}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd count")
        if not self.strategies:
            self.strategies = PANELS[self.panel]["strategies"]

    @property
    def metrics(self) -> tuple[str, ...]:
        return PANELS[self.panel]["metrics"]


def collect_series(csv_path: str, spec: PanelSpec) -> list[Series]:
    rows = read_rows(csv_path)
    present = {r["strategy"] for r in rows}
    wanted = [s for s in spec.strategies if s in present]
    if not wanted:
        raise ValueError(f"none of {spec.strategies} present in {csv_path}")
    return [build_series(rows, strategy, metric, spec.window)
            for strategy in wanted for metric in spec.metrics]


def render(csv_path: str, spec: PanelSpec, out_path: str, fmt: str = "svg") -> list[Series]:
    """Draw one panel and return the plotted series (smoothed mean/band)."""
    series = collect_series(csv_path, spec)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    single_metric = len(spec.metrics) == 1
    for s in series:
        label = s.strategy if single_metric else f"{s.strategy} {_DELTA_TEXT.get(s.metric, s.metric)}"
        xs = [x for x, m in zip(s.dt, s.mean_smooth) if not math.isnan(m)]
        ys = [m for m in s.mean_smooth if not math.isnan(m)]
        band = [b for m, b in zip(s.mean_smooth, s.sem2_smooth) if not math.isnan(m)]
        line, = ax.plot(xs, ys, marker="o", markersize=3, label=label)
        if len(xs) > 1:
            ax.fill_between(xs, [y - b for y, b in zip(ys, band)],
                            [y + b for y, b in zip(ys, band)],
                            color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xscale("log")
    ax.set_xlabel("dt")
    ax.set_ylabel(PANELS[spec.panel]["ylabel"])
    if spec.panel == "monotone_deltas":
        ax.axhline(0.0, color="gray", linewidth=0.8, linestyle=":")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format=fmt)
    plt.close(fig)
    return series
