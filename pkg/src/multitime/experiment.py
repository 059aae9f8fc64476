"""Ensemble study: random dynamics, a dt sweep, and strategy comparison.

Each work cell is one (sample, dt) pair: the reference run (no controls) is
computed first, then every requested strategy on the same dynamics, so that
the coarse-grained monotone deltas are paired differences. Cells are
independent; records are merged by sorting on (sample_id, dt, strategy)
before anything is written, which makes the CSV independent of worker
scheduling.

Seed derivation (documented so alternates can reproduce the streams): each
consumer derives a 64-bit seed by folding its integer coordinates into the
master seed with splitmix64, ``seed = mix(...mix(mix(master) ^ c1) ^ c2...)``,
and feeds it to numpy's default PCG64 generator.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .control import ControlSequence, cdd_sequence, dd_sequence
from .linalg import op_norm
from .monotones import SUPPORT_TOL, channel_information, monotone_report
from .optimizer import SeesawTrace, modd, odd_seesaw, principal_eigpair
from .process import Channel, QState, SEDynamics, build_dynamics, channel_of, choi_of_process, insert_controls

STRATEGIES = ("ref", "dd", "cdd", "odd", "modd")

METRIC_COLUMNS = (
    "i_channel_bits", "i_coarse_bits", "m_coarse_bits", "n_coarse_bits",
    "delta_i_bits", "delta_m_bits", "delta_n_bits", "lambda_max",
)

CSV_COLUMNS = (
    "sample_id", "dt", "strategy",
    "i_channel_bits", "i_coarse_bits", "m_coarse_bits", "n_coarse_bits",
    "delta_i_bits", "delta_m_bits", "delta_n_bits",
    "lambda_max", "seesaw_sweeps", "support_flag", "wall_ms",
)


def default_dt_grid(points: int = 40, lo: float = 1e-2, hi: float = 1e1) -> tuple[float, ...]:
    return tuple(float(x) for x in np.logspace(np.log10(lo), np.log10(hi), points))


@dataclass
class ExperimentConfig:
    master_seed: int = 314159
    ensemble: int = 20
    d_env: int = 2
    n_segments: int = 16
    coarse_keep: tuple[int, ...] = (4, 8, 12)
    dt_grid: tuple[float, ...] = field(default_factory=default_dt_grid)
    strategies: tuple[str, ...] = STRATEGIES
    smoothing_window: int = 5
    complex_k: bool = False
    max_sweeps: int = 200
    seesaw_tol: float = 1e-7
    modd_block: int = 4
    out_csv: str = "sweep.csv"

    def __post_init__(self):
        if self.ensemble < 1:
            raise ValueError("ensemble must be >= 1")
        if any(dt <= 0 for dt in self.dt_grid):
            raise ValueError("dt values must be positive")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ValueError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be a positive odd count")
        n_slots = self.n_segments - 1
        if any(not 1 <= k <= n_slots for k in self.coarse_keep):
            raise ValueError(f"coarse_keep must lie in 1..{n_slots}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(mapping)
        for key in ("coarse_keep", "strategies"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "dt_grid" in kwargs:
            kwargs["dt_grid"] = tuple(float(x) for x in kwargs["dt_grid"])
        return cls(**kwargs)


@dataclass
class RunRecord:
    sample_id: int
    dt: float
    strategy: str
    i_channel_bits: float
    i_coarse_bits: float
    m_coarse_bits: float
    n_coarse_bits: float
    delta_i_bits: float
    delta_m_bits: float
    delta_n_bits: float
    lambda_max: float
    seesaw_sweeps: int
    support_flag: int
    wall_ms: int


_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def task_seed(master_seed: int, *coords: int) -> int:
    """Counter-based 64-bit seed for a task addressed by integer coordinates."""
    state = _splitmix64(master_seed & _MASK)
    for c in coords:
        state = _splitmix64(state ^ (c & _MASK))
    return state


def sample_model(master_seed: int, sample_id: int, d_sys: int, d_env: int,
                 complex_k: bool = False) -> tuple[np.ndarray, QState]:
    """One random system-environment model.

    K has i.i.d. entries uniform on [0, 1] (plus an independent uniform
    imaginary part when ``complex_k``); H = K + K† scaled to unit operator
    norm. The environment starts in a Haar-random pure state.
    """
    rng = np.random.default_rng(task_seed(master_seed, 1, sample_id))
    dim = d_sys * d_env
    k = rng.random((dim, dim))
    if complex_k:
        k = k + 1j * rng.random((dim, dim))
    h = k + k.conj().T
    h = h / op_norm(h)
    phi = rng.standard_normal(d_env) + 1j * rng.standard_normal(d_env)
    phi = phi / np.linalg.norm(phi)
    return h, QState(np.outer(phi, phi.conj()))


def sample_dynamics(cfg: ExperimentConfig, sample_id: int, dt: float, d_sys: int = 2) -> SEDynamics:
    h, rho_env0 = sample_model(cfg.master_seed, sample_id, d_sys, cfg.d_env, cfg.complex_k)
    return build_dynamics(h, rho_env0, cfg.n_segments, dt)


def _strategy_controls(dyn: SEDynamics, strategy: str, cfg: ExperimentConfig) -> tuple[ControlSequence, int]:
    """Controls plus the number of see-saw sweeps spent building them."""
    n_slots = dyn.n_slots
    if strategy == "ref":
        return ControlSequence({}, label="ref"), 0
    if strategy == "dd":
        return dd_sequence(n_slots, label="dd"), 0
    if strategy == "cdd":
        return cdd_sequence(n_slots, cfg.modd_block, label="cdd"), 0
    if strategy == "odd":
        # Start from do-nothing controls; if that basin ends up behind plain
        # DD, rerun seeded with DD and keep the better of the two. Either
        # history is monotone on its own.
        all_slots = range(1, n_slots + 1)
        trace = odd_seesaw(dyn, all_slots, max_sweeps=cfg.max_sweeps,
                           tol=cfg.seesaw_tol, label="odd")
        info = channel_information(_closed_channel(dyn, trace.controls))
        sweeps = trace.sweeps
        dd = dd_sequence(n_slots)
        info_dd = channel_information(_closed_channel(dyn, dd))
        if info < info_dd - 0.02:
            retry = odd_seesaw(dyn, all_slots, init=dd, max_sweeps=cfg.max_sweeps,
                               tol=cfg.seesaw_tol, label="odd")
            retry_info = channel_information(_closed_channel(dyn, retry.controls))
            sweeps += retry.sweeps
            if retry_info > info:
                trace = retry
        return trace.controls, sweeps
    if strategy == "modd":
        sweeps = 0

        def count(_, trace: SeesawTrace):
            nonlocal sweeps
            sweeps += trace.sweeps

        controls = modd(dyn, cfg.modd_block, max_sweeps=cfg.max_sweeps,
                        tol=cfg.seesaw_tol, on_trace=count)
        return controls, sweeps
    raise ValueError(f"unknown strategy {strategy!r}")


def _closed_channel(dyn: SEDynamics, controls: ControlSequence) -> Channel:
    ops = {j: ch.choi for j, ch in controls.slots.items()}
    d = dyn.d_sys
    return Channel(d, d, channel_of(dyn, ops))


def run_strategy(dyn: SEDynamics, strategy: str, coarse_keep, cfg: ExperimentConfig,
                 sample_id: int = 0, ref: RunRecord | None = None) -> RunRecord:
    """All metrics for one strategy on one set of dynamics.

    ``ref`` supplies the paired baseline for the coarse deltas; the ref
    strategy itself gets exact zeros by construction.
    """
    if strategy != "ref" and ref is None:
        raise ValueError("non-reference strategies need the paired ref record")
    t0 = time.perf_counter()
    controls, sweeps = _strategy_controls(dyn, strategy, cfg)
    channel = _closed_channel(dyn, controls)
    i_channel = channel_information(channel)
    lam, _ = principal_eigpair(channel.choi)
    controlled = insert_controls(dyn, controls.slots)
    coarse = choi_of_process(controlled, coarse_keep)
    report = monotone_report(coarse)
    if strategy == "ref":
        deltas = (0.0, 0.0, 0.0)
    else:
        deltas = (
            report.i_bits - ref.i_coarse_bits,
            report.m_bits - ref.m_coarse_bits,
            report.n_bits - ref.n_coarse_bits,
        )
    flag = 0 if (report.finite and math.isfinite(i_channel)
                 and report.support_violation <= SUPPORT_TOL) else 1
    wall_ms = int(round((time.perf_counter() - t0) * 1000))
    return RunRecord(sample_id, dyn.durations[0], strategy, i_channel,
                     report.i_bits, report.m_bits, report.n_bits,
                     deltas[0], deltas[1], deltas[2],
                     lam, sweeps, flag, wall_ms)


def run_cell(cfg: ExperimentConfig, sample_id: int, dt: float) -> list[RunRecord]:
    """All requested strategies for one (sample, dt) pair."""
    dyn = sample_dynamics(cfg, sample_id, dt)
    ref = run_strategy(dyn, "ref", cfg.coarse_keep, cfg, sample_id)
    records = [ref] if "ref" in cfg.strategies else []
    for strategy in cfg.strategies:
        if strategy == "ref":
            continue
        records.append(run_strategy(dyn, strategy, cfg.coarse_keep, cfg, sample_id, ref))
    return records


# ---------------------------------------------------------------------------
# Post-processing: ensemble means, 2-sigma bands, smoothing over the dt grid

def centered_moving_average(values, window: int) -> list[float]:
    """Centered moving average; windows shrink at the edges, NaNs are skipped."""
    half = window // 2
    out = []
    for i in range(len(values)):
        chunk = [v for v in values[max(0, i - half):i + half + 1] if not math.isnan(v)]
        out.append(sum(chunk) / len(chunk) if chunk else math.nan)
    return out


def summarize(records: list[RunRecord], dt_grid, window: int) -> list[dict]:
    """Per (strategy, metric, dt): finite-value mean, 2-sigma standard error,
    and their moving averages over the log-spaced dt grid."""
    dts = sorted(set(float(dt) for dt in dt_grid))
    strategies = sorted(set(r.strategy for r in records))
    table = []
    for strategy in strategies:
        for metric in METRIC_COLUMNS:
            means, sems, ns, excluded = [], [], [], []
            for dt in dts:
                vals = [getattr(r, metric) for r in records
                        if r.strategy == strategy and r.dt == dt]
                finite = [v for v in vals if math.isfinite(v)]
                ns.append(len(finite))
                excluded.append(len(vals) - len(finite))
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
            means_s = centered_moving_average(means, window)
            sems_s = centered_moving_average(sems, window)
            for i, dt in enumerate(dts):
                table.append({
                    "dt": dt, "strategy": strategy, "metric": metric,
                    "n": ns[i], "n_excluded": excluded[i],
                    "mean": means[i], "sem2": sems[i],
                    "mean_smooth": means_s[i], "sem2_smooth": sems_s[i],
                })
    return table


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if not math.isfinite(x) else repr(x)
    return str(x)


def write_records_csv(records: list[RunRecord], path: str) -> None:
    records = sorted(records, key=lambda r: (r.sample_id, r.dt, r.strategy))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, col)) for col in CSV_COLUMNS])


def write_summary_csv(table: list[dict], path: str) -> None:
    cols = ("dt", "strategy", "metric", "n", "n_excluded", "mean", "sem2", "mean_smooth", "sem2_smooth")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in table:
            writer.writerow([_fmt(row[c]) for c in cols])


def summary_path(out_csv: str) -> str:
    base, ext = os.path.splitext(out_csv)
    return f"{base}.summary{ext or '.csv'}"


def metadata_path(out_csv: str) -> str:
    base, _ = os.path.splitext(out_csv)
    return f"{base}.meta.json"


def _partial_path(out_csv: str) -> str:
    return out_csv + ".partial"


def _record_from_row(row: dict) -> RunRecord:
    kwargs = {}
    for f in fields(RunRecord):
        raw = row[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = math.inf if raw == "" else float(raw)
        else:
            kwargs[f.name] = raw
    return RunRecord(**kwargs)


def _cell_worker(args) -> tuple[int, float, list[dict]]:
    cfg_kwargs, sample_id, dt = args
    cfg = ExperimentConfig(**cfg_kwargs)
    return sample_id, dt, [asdict(r) for r in run_cell(cfg, sample_id, dt)]


def sweep(cfg: ExperimentConfig, out_csv: str | None = None, threads: int = 1,
          resume: bool = False, progress=None) -> list[RunRecord]:
    """Run the full ensemble sweep and write CSV, summary, and metadata.

    Completed cells are flushed to a JSONL sidecar as they finish; with
    ``resume`` those cells are skipped on restart. The final CSV is always
    rewritten from the full sorted record set.
    """
    out_csv = out_csv or cfg.out_csv
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    tasks = [(sample_id, float(dt)) for sample_id in range(cfg.ensemble) for dt in cfg.dt_grid]

    done: dict[tuple[int, float], list[dict]] = {}
    part = _partial_path(out_csv)
    if resume and os.path.exists(part):
        with open(part, encoding="utf-8") as fh:
            for line in fh:
                cell = json.loads(line)
                done[(cell["sample_id"], cell["dt"])] = cell["records"]
    pending = [t for t in tasks if t not in done]

    cfg_kwargs = asdict(cfg)
    mode = "a" if (resume and os.path.exists(part)) else "w"
    with open(part, mode, encoding="utf-8") as sidecar:
        def flush(sample_id, dt, recs):
            done[(sample_id, dt)] = recs
            sidecar.write(json.dumps({"sample_id": sample_id, "dt": dt, "records": recs}) + "\n")
            sidecar.flush()
            if progress is not None:
                progress(len(done), len(tasks))

        if threads > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for sample_id, dt, recs in pool.map(_cell_worker,
                                                    [(cfg_kwargs, s, dt) for s, dt in pending]):
                    flush(sample_id, dt, recs)
        else:
            for sample_id, dt in pending:
                recs = [asdict(r) for r in run_cell(cfg, sample_id, dt)]
                flush(sample_id, dt, recs)

    # Only this config's cells count; a stale partial from another config
    # must not leak rows into the output.
    records = [RunRecord(**r) for key in tasks for r in done[key]]
    records.sort(key=lambda r: (r.sample_id, r.dt, r.strategy))
    write_records_csv(records, out_csv)
    table = summarize(records, cfg.dt_grid, cfg.smoothing_window)
    write_summary_csv(table, summary_path(out_csv))
    n_excluded = sum(1 for r in records for m in METRIC_COLUMNS if not math.isfinite(getattr(r, m)))
    meta = {
        "config": cfg_kwargs,
        "version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "rows": len(records),
        "excluded_infinite_entries": n_excluded,
        "seed_derivation": ("per-task seed = splitmix64 chain over (master_seed, stream, "
                            "coords); model stream is task_seed(master_seed, 1, sample_id); "
                            "generator numpy PCG64"),
    }
    with open(metadata_path(out_csv), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    os.remove(part)
    return records


def read_records_csv(path: str) -> list[RunRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [_record_from_row(row) for row in reader]
