"""Command line: render sweep CSV panels to SVG or PNG."""
from __future__ import annotations

import argparse
import json
import sys

from .render import PANELS, PanelSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="multitime-plots",
                                     description="Figure panels from a sweep CSV")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one panel")
    p.add_argument("--csv", required=True)
    p.add_argument("--panel", required=True, choices=sorted(PANELS))
    p.add_argument("--out", required=True)
    p.add_argument("--strategies", help="comma-separated subset, default per panel")
    p.add_argument("--window", type=int, default=5, help="smoothing window (odd)")
    p.add_argument("--format", choices=("svg", "png"), default="svg")
    p.add_argument("--dump-series", help="also write the plotted numbers as JSON here")
    args = parser.parse_args(argv)

    strategies = tuple(s.strip() for s in args.strategies.split(",")) if args.strategies else ()
    spec = PanelSpec(args.panel, strategies, args.window)
    series = render(args.csv, spec, args.out, fmt=args.format)
    if args.dump_series:
        payload = {
            "panel": args.panel,
            "window": args.window,
            "series": [{
                "strategy": s.strategy, "metric": s.metric, "dt": s.dt,
                "mean": s.mean, "sem2": s.sem2,
                "mean_smooth": s.mean_smooth, "sem2_smooth": s.sem2_smooth,
            } for s in series],
        }
        with open(args.dump_series, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
