"""``geomagnav`` command line: field, grid, train, benchmark, replay.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
Results go to files; stdout carries ``key=value`` summary lines.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import run_baseline_episode
from .config import REGION_PRESETS, ConfigError, RunConfig, load_config
from .eval import BenchmarkResult, compute_metrics, run_benchmark, run_policy_episode
from .field_model import (FieldModelError, GeoPosition, IGRFField, gradient_field, grid_to_csv,
                          load_coefficients, sample_grid)
from .geodesy import Region
from .nav_env import EpisodeTrace, TaskSpec
from .td3_agent import TD3Agent, TrainingLog, derive_seed, greedy_policy, train

log = logging.getLogger("geomagnav")

DRL_METHODS = ("gg_td3", "td3")
ALL_METHODS = DRL_METHODS + ("ga", "pso", "afsa")
TASKS_HEADER = ("task_id", "origin_lat", "origin_lon", "dest_lat", "dest_lon", "epoch", "seed",
                "straight_m", "target_x_m", "target_y_m", "zeta")
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _kv(**items) -> None:
    for k, v in items.items():
        if isinstance(v, float):
            v = "nan" if math.isnan(v) else f"{v:.6f}"
        print(f"{k}={v}")


def _write(path: Path, text: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text, encoding="utf-8")


def _overrides(args) -> list[tuple[str, object]]:
    out = []
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out.append((key, yaml.safe_load(raw)))
    for flag, key in (("seed", "seed"), ("episodes", "td3.episodes"), ("zeta3", "reward.zeta3"),
                      ("workers", "workers"), ("tasks", "tasks.eval_count"), ("out", "output")):
        v = getattr(args, flag, None)
        if v is not None:
            out.append((key, v))
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


# ---------------------------------------------------------------------------
# field / grid


def cmd_field(args) -> int:
    if not -90.0 <= args.lat <= 90.0:
        raise UsageError(f"--lat {args.lat} outside [-90, 90]")
    if not math.isfinite(args.lon):
        raise UsageError("--lon must be finite")
    src = IGRFField(load_coefficients(args.coeffs), args.epoch)
    pos = GeoPosition(args.lat, args.lon, args.alt)
    el = src.elements(pos)
    _kv(lat=pos.latitude, lon=pos.longitude, alt_km=pos.altitude, epoch=args.epoch,
        D_deg=math.degrees(el.d), I_deg=math.degrees(el.i), BH_nT=el.b_h, BF_nT=el.b_f,
        BX_nT=el.bx, BY_nT=el.by, BZ_nT=el.bz)
    if abs(args.lat) < 89.9:
        g = gradient_field(src, pos.latitude, pos.longitude, pos.altitude)
        for name, row, scale in (("D", g[0], math.degrees(1000.0)), ("I", g[1], math.degrees(1000.0)),
                                 ("BH", g[2], 1000.0)):
            unit = "nT_per_km" if name == "BH" else "deg_per_km"
            _kv(**{f"grad_{name}_east_{unit}": float(row[0] * scale),
                   f"grad_{name}_north_{unit}": float(row[1] * scale)})
    return EXIT_OK


def _parse_region(text: str) -> Region:
    if text in REGION_PRESETS:
        return REGION_PRESETS[text]
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"--region expects a preset {sorted(REGION_PRESETS)} or lat_min,lat_max,lon_min,lon_max")
    try:
        return Region(*(float(p) for p in parts))
    except ValueError as exc:
        raise UsageError(f"--region: {exc}") from None


def cmd_grid(args) -> int:
    region = _parse_region(args.region)
    if args.resolution < 2:
        raise UsageError("resolution must be >= 2")
    if args.config:
        source = _config(args).source()
    else:
        source = IGRFField(load_coefficients(args.coeffs), args.epoch)
    grid = sample_grid(source, (region.lat_min, region.lat_max), (region.lon_min, region.lon_max),
                       args.resolution)
    out = Path(args.out)
    try:
        _write(out, grid_to_csv(grid))
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from None
    _kv(path=str(out), rows=args.resolution * args.resolution)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _ckpt_bytes(agent: TD3Agent, cfg: RunConfig) -> bytes:
    run = cfg.to_dict()
    del run["output"]
    return agent.to_bytes({"run": run})


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.output)
    env = cfg.env()
    agent = None
    log_ = TrainingLog(window=cfg.td3.window)
    if args.resume:
        agent, _ = TD3Agent.from_bytes(Path(args.resume).read_bytes())
        prev = out / "training_log.csv"
        if prev.exists():
            old = TrainingLog.from_csv(prev.read_text(encoding="utf-8"), window=cfg.td3.window)
            log_.rows = [r for r in old.rows if r["episode"] <= agent.episodes_done]
    done = agent.episodes_done if agent else 0
    remaining = max(cfg.td3.episodes - done, 0)
    every = cfg.td3.checkpoint_every

    def on_episode(a: TD3Agent, lg: TrainingLog):
        if every and a.episodes_done % every == 0:
            _write(out / "checkpoints" / f"ep_{a.episodes_done:06d}.ckpt", _ckpt_bytes(a, cfg))
            _write(out / "training_log.csv", lg.to_csv())

    agent, log_, _ = train(env, cfg.task_sampler(), replace(cfg.td3, episodes=remaining), seed=cfg.seed,
                           agent=agent, log_=log_, on_episode=on_episode)
    _write(out / "agent.ckpt", _ckpt_bytes(agent, cfg))
    _write(out / "training_log.csv", log_.to_csv())
    _write(out / "config.yaml", cfg.to_yaml())
    last = log_.rows[-1] if log_.rows else {"window_sr": math.nan, "window_return": math.nan}
    _kv(episodes=agent.episodes_done, steps=agent.total_steps, window_sr=last["window_sr"],
        window_return=last["window_return"], checkpoint=str(out / "agent.ckpt"))
    if args.evaluate:
        trs = [run_policy_episode(env, t, greedy_policy(agent, env)) for t in cfg.heldout_tasks()]
        m = compute_metrics(trs)
        _kv(heldout_sr=m.sr, heldout_spl=m.spl, heldout_tnt=m.tnt)
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark / replay


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s) {unknown or text!r}; choose from {','.join(ALL_METHODS)}")
    return [m for m in ALL_METHODS if m in methods]  # canonical order, matches replay


def _parse_checkpoints(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or name not in DRL_METHODS:
            raise UsageError(f"--checkpoint expects one of {DRL_METHODS}=PATH, got {item!r}")
        out[name] = path
    return out


def tasks_csv(tasks: list[TaskSpec], traces: list[EpisodeTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TASKS_HEADER)
    for k, (t, tr) in enumerate(zip(tasks, traces)):
        vals = (t.origin.latitude, t.origin.longitude, t.destination.latitude, t.destination.longitude,
                t.epoch)
        tail = (tr.straight_distance, tr.target_xy[0], tr.target_xy[1], tr.zeta)
        w.writerow([k, *(repr(float(v)) for v in vals), int(t.seed), *(repr(float(v)) for v in tail)])
    return buf.getvalue()


def cmd_benchmark(args) -> int:
    methods = _parse_methods(args.methods)
    ckpts = _parse_checkpoints(args.checkpoint)
    cfg = _config(args)
    out = Path(args.out or cfg.output)
    source = cfg.source()
    tasks = cfg.heldout_tasks()

    runners = {}
    skipped = []
    for m in methods:
        if m in DRL_METHODS:
            path = ckpts.get(m)
            if path is None or not Path(path).is_file():
                skipped.append(m)
                log.warning("skipping %s: checkpoint %s not found", m, path or "(none given)")
                continue
            agent, _ = TD3Agent.from_bytes(Path(path).read_bytes())
            runners[m] = lambda task, env, _a=agent: run_policy_episode(env, task, greedy_policy(_a, env))
        else:
            conf = getattr(cfg, m)
            runners[m] = lambda task, env, _m=m, _c=conf: run_baseline_episode(
                _m, task, env, _c, np.random.default_rng(derive_seed(task.seed, _m)))
    if not runners:
        raise RuntimeError(f"nothing to run; skipped {','.join(skipped)}")

    res = run_benchmark(runners, tasks, lambda: cfg.env(source), workers=cfg.workers)
    _write(out / "table.csv", res.table_csv())
    _write(out / "table_extended.csv", res.extended_csv())
    for metric, text in res.distribution_csvs().items():
        _write(out / f"dist_{metric}.csv", text)
    _write(out / "boxplot.csv", res.boxplot_csv())
    first = next(iter(res.traces.values()))
    _write(out / "tasks.csv", tasks_csv(tasks, first))
    for name, trs in res.traces.items():
        for k, tr in enumerate(trs):
            _write(out / "traces" / name / f"task_{k:04d}.csv", tr.to_csv())
    _write(out / "config.yaml", cfg.to_yaml())
    for name, r in res.reports.items():
        _kv(method=name, SR=r.sr, TL_m=r.tl, SPL=r.spl, TNT_steps=r.tnt)
    if skipped:
        _kv(skipped=",".join(skipped))
    return EXIT_OK


def load_run_traces(run_dir: Path) -> dict[str, list[EpisodeTrace]]:
    with open(run_dir / "tasks.csv", encoding="utf-8") as fh:
        meta = list(csv.DictReader(fh))
    out = {}
    tdir = run_dir / "traces"
    for mdir in sorted(p for p in tdir.iterdir() if p.is_dir()):
        traces = []
        for rec in meta:
            k = int(rec["task_id"])
            text = (mdir / f"task_{k:04d}.csv").read_text(encoding="utf-8")
            traces.append(EpisodeTrace.from_csv(
                text, zeta=float(rec["zeta"]), straight_distance=float(rec["straight_m"]),
                target_xy=(float(rec["target_x_m"]), float(rec["target_y_m"]))))
        out[mdir.name] = traces
    return out


def cmd_replay(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "tasks.csv").is_file():
        raise UsageError(f"{run_dir} has no tasks.csv; not a benchmark output directory")
    traces = load_run_traces(run_dir)
    order = [m for m in ALL_METHODS if m in traces] + sorted(set(traces) - set(ALL_METHODS))
    res = BenchmarkResult({m: compute_metrics(traces[m]) for m in order}, {m: traces[m] for m in order})
    text = res.table_csv()
    if args.out:
        _write(Path(args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geomagnav", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="YAML run config (defaults to the desk preset)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. td3.episodes=10")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    f = sub.add_parser("field", help="elements and gradients at one position")
    f.add_argument("--lat", type=float, required=True)
    f.add_argument("--lon", type=float, required=True)
    f.add_argument("--alt", type=float, default=0.0, help="km above the reference sphere")
    f.add_argument("--epoch", type=float, default=2020.0)
    f.add_argument("--coeffs", help="coefficient file (else $GEOMAGNAV_COEFFS, else bundled)")
    f.set_defaults(func=cmd_field)

    g = sub.add_parser("grid", help="element grid as CSV")
    g.add_argument("--region", default="full")
    g.add_argument("--resolution", type=int, default=11)
    g.add_argument("--epoch", type=float, default=2020.0)
    g.add_argument("--coeffs")
    g.add_argument("--config", help="take the field source from a run config instead of IGRF")
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_grid)

    t = sub.add_parser("train", help="train a TD3 agent")
    with_config(t)
    t.add_argument("--episodes", type=int)
    t.add_argument("--zeta3", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--evaluate", action="store_true", help="report held-out greedy metrics at the end")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("benchmark", help="compare methods on held-out tasks")
    with_config(b)
    b.add_argument("--methods", default=",".join(ALL_METHODS))
    b.add_argument("--checkpoint", action="append", metavar="METHOD=PATH")
    b.add_argument("--tasks", type=int, help="number of held-out tasks")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("replay", help="recompute the table from stored traces")
    r.add_argument("--run", required=True, help="benchmark output directory")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FieldModelError, OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
