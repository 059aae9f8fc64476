"""Command-line entry points: sweep, monotones, optimize.

The sweep config file is flat ``key = value`` text (a TOML subset): values
are ints, floats, booleans, quoted strings, or bracketed lists thereof, and
keys are exactly the ExperimentConfig field names.
"""
from __future__ import annotations

import argparse
import json
import sys

from .experiment import ExperimentConfig, sweep
from .monotones import channel_information, monotone_report
from .optimizer import modd, odd_seesaw, principal_eigpair
from .process import Channel, channel_of, choi_of_process, insert_controls, load_dynamics


def _parse_scalar(token: str):
    token = token.strip()
    if len(token) >= 2 and token[0] in "'\"" and token[-1] == token[0]:
        return token[1:-1]
    low = token.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _strip_comment(line: str) -> str:
    out = []
    quote = None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if rhs.startswith("[") and rhs.endswith("]"):
            inner = rhs[1:-1].strip()
            values[key] = [_parse_scalar(t) for t in inner.split(",") if t.strip()] if inner else []
        else:
            values[key] = _parse_scalar(rhs)
    return values


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_mapping(parse_config_text(fh.read()))


def _slot_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="multitime",
                                     description="Multitime noise-process simulation and pulse optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run the ensemble dt sweep")
    p_sweep.add_argument("--config", required=True, help="flat key = value config file")
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.add_argument("--resume", action="store_true",
                         help="reuse completed cells from a previous partial run")

    p_mono = sub.add_parser("monotones", help="monotones of a coarse-grained process")
    p_mono.add_argument("--dynamics", required=True, help="saved dynamics file")
    p_mono.add_argument("--keep", required=True, help="slots to keep open, e.g. 4,8,12")

    p_opt = sub.add_parser("optimize", help="optimize decoupling pulses")
    p_opt.add_argument("--dynamics", required=True, help="saved dynamics file")
    p_opt.add_argument("--slots", help="slots to optimize, e.g. 1,2,3 (odd mode)")
    p_opt.add_argument("--mode", choices=("odd", "modd"), default="odd")
    p_opt.add_argument("--block", type=int, default=4, help="block length for modd")
    p_opt.add_argument("--max-sweeps", type=int, default=200)
    p_opt.add_argument("--tol", type=float, default=1e-7)
    p_opt.add_argument("--trace", help="write one objective value per line here")

    args = parser.parse_args(argv)

    if args.command == "sweep":
        cfg = load_config(args.config)
        def progress(done, total):
            print(f"\r{done}/{total} cells", end="", file=sys.stderr, flush=True)
        sweep(cfg, out_csv=args.out, threads=args.threads, resume=args.resume, progress=progress)
        print("", file=sys.stderr)
        return 0

    if args.command == "monotones":
        dyn = load_dynamics(args.dynamics)
        report = monotone_report(choi_of_process(dyn, _slot_list(args.keep)))
        print(json.dumps({
            "i_bits": report.i_bits, "m_bits": report.m_bits, "n_bits": report.n_bits,
            "support_violation": report.support_violation,
        }, allow_nan=True))
        return 0

    if args.command == "optimize":
        dyn = load_dynamics(args.dynamics)
        histories = []
        if args.mode == "odd":
            slots = _slot_list(args.slots) if args.slots else list(range(1, dyn.n_slots + 1))
            trace = odd_seesaw(dyn, slots, max_sweeps=args.max_sweeps, tol=args.tol)
            controls, sweeps, converged = trace.controls, trace.sweeps, trace.converged
            histories = trace.objective_history
        else:
            sweeps = 0
            converged = True

            def collect(_, t):
                nonlocal sweeps, converged
                sweeps += t.sweeps
                converged = converged and t.converged
                histories.extend(t.objective_history)

            controls = modd(dyn, args.block, max_sweeps=args.max_sweeps, tol=args.tol,
                            on_trace=collect)
        d = dyn.d_sys
        choi = channel_of(insert_controls(dyn, controls.slots))
        lam, _ = principal_eigpair(choi)
        info = channel_information(Channel(d, d, choi))
        if args.trace:
            with open(args.trace, "w", encoding="utf-8") as fh:
                fh.writelines(f"{x!r}\n" for x in histories)
        print(json.dumps({
            "mode": args.mode, "label": controls.label, "slots": list(controls.slots),
            "lambda_max": lam, "i_channel_bits": info,
            "seesaw_sweeps": sweeps, "converged": converged,
        }))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
