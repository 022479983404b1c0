"""Task generation, rollouts, navigation metrics and benchmark tables.

Metric domains: TL, TNT, smoothness and heading MAE/RMSE average over
successful episodes only; NE averages over all episodes; SR and SPL over
all episodes.  ``tl_all`` is TL over every episode, exported alongside.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .field_model import GeoPosition
from .geodesy import Region
from .nav_env import EpisodeTrace, NavEnv, TaskSpec, wrap_abs

log = logging.getLogger(__name__)

TABLE_HEADER = ("method", "SR", "TL_m", "SPL", "TNT_steps")
EXTENDED_HEADER = ("method", "SR", "TL_m", "TL_all_m", "SPL", "TNT_steps", "smoothness_deg",
                   "MAE_heading_rad", "RMSE_heading_rad", "NE_m", "align_MAE_rad", "n_tasks")
DIST_HEADER = ("method", "task_id", "value")
BOX_HEADER = ("method", "metric", "n", "q1", "median", "q3", "whisker_low", "whisker_high",
              "outliers")
METRIC_DOMAINS = "TL/TNT/smoothness/MAE/RMSE over successful episodes; SR/SPL/NE over all"


class RegionTooSmallError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tasks


def random_task(region: Region, min_d: float, max_d: float, rng: np.random.Generator,
                epoch: float = 2020.0, seed: int = 0, max_attempts: int = 10_000) -> TaskSpec:
    """Origin/destination uniform in ``region`` with separation in [min_d, max_d] m."""
    if not max_d > min_d > 0:
        raise ValueError("need max_d > min_d > 0")
    frame = region.frame
    for _ in range(max_attempts):
        la = rng.uniform(region.lat_min, region.lat_max, 2)
        lo = rng.uniform(region.lon_min, region.lon_max, 2)
        x, y = frame.to_xy(la, lo)
        d = math.hypot(x[1] - x[0], y[1] - y[0])
        if min_d <= d <= max_d:
            return TaskSpec(GeoPosition(la[0], lo[0]), GeoPosition(la[1], lo[1]), epoch, seed)
    raise RegionTooSmallError(
        f"no origin/destination pair with separation in [{min_d}, {max_d}] m after {max_attempts} draws")


def generate_tasks(region: Region, count: int, min_d: float, max_d: float, seed: int,
                   epoch: float = 2020.0) -> list[TaskSpec]:
    rng = np.random.default_rng(seed)
    return [random_task(region, min_d, max_d, rng, epoch, seed=int(rng.integers(2**31)))
            for _ in range(count)]


def task_sampler(region: Region, min_d: float, max_d: float, epoch: float = 2020.0):
    def sample(rng: np.random.Generator) -> TaskSpec:
        return random_task(region, min_d, max_d, rng, epoch, seed=int(rng.integers(2**31)))
    return sample


def run_policy_episode(env: NavEnv, task: TaskSpec, policy) -> EpisodeTrace:
    state = env.reset(task)
    done = False
    while not done:
        state, _, done, _ = env.step(policy(state))
    return env.trace


# ---------------------------------------------------------------------------
# metrics


@dataclass
class TaskRecord:
    task_id: int
    success: bool
    steps: int
    path_length: float
    straight_distance: float
    spl: float
    smoothness: float
    mae_heading: float
    rmse_heading: float
    final_error: float
    align_mae: float


@dataclass
class MetricsReport:
    sr: float
    tl: float
    tl_all: float
    spl: float
    tnt: float
    smoothness: float
    mae_heading: float
    rmse_heading: float
    ne: float
    align_mae: float
    records: list[TaskRecord] = field(default_factory=list)
    domains: str = METRIC_DOMAINS


def _segment_stats(trace: EpisodeTrace):
    rows = trace.rows
    pos = trace.positions()
    seg = np.diff(pos, axis=0)
    path = float(np.sum(np.hypot(seg[:, 0], seg[:, 1]))) if len(seg) else 0.0

    moving = [rows[k]["theta_rad"] for k in range(1, len(rows)) if rows[k]["L_m"] > 0]
    angles = [180.0 - math.degrees(wrap_abs(b - a)) for a, b in zip(moving, moving[1:])]
    smooth = float(np.mean(angles)) if angles else 180.0

    tx, ty = trace.target_xy
    devs, align = [], []
    for k in range(1, len(rows)):
        align.append(wrap_abs(rows[k]["theta_rad"] - rows[k]["lambda_prime_rad"]))
        if k < 2:
            continue  # first segment has no predecessor
        bearing = math.atan2(ty - rows[k - 1]["y_m"], tx - rows[k - 1]["x_m"])
        devs.append(wrap_abs(rows[k]["theta_rad"] - bearing))
    devs = np.asarray(devs)
    mae = float(np.mean(devs)) if devs.size else 0.0
    rmse = float(np.sqrt(np.mean(devs**2))) if devs.size else 0.0
    ne = math.hypot(tx - pos[-1, 0], ty - pos[-1, 1])
    return path, smooth, mae, rmse, ne, float(np.mean(align)) if align else 0.0


def compute_metrics(traces: Sequence[EpisodeTrace], tasks: Sequence[TaskSpec] | None = None) -> MetricsReport:
    if not traces:
        raise ValueError("no traces to evaluate")
    if tasks is not None and len(tasks) != len(traces):
        raise ValueError("traces and tasks are not aligned")
    records = []
    for k, tr in enumerate(traces):
        path, smooth, mae, rmse, ne, align = _segment_stats(tr)
        d = tr.straight_distance
        spl = float(tr.success) * d / max(path, d) if d > 0 else float(tr.success)
        records.append(TaskRecord(k, bool(tr.success), tr.steps, path, d, spl, smooth, mae, rmse,
                                  ne, align))
    ok = [r for r in records if r.success]

    def mean(vals):
        vals = list(vals)
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(
        sr=len(ok) / len(records),
        tl=mean(r.path_length for r in ok),
        tl_all=mean(r.path_length for r in records),
        spl=float(np.mean([r.spl for r in records])),
        tnt=mean(r.steps for r in ok),
        smoothness=mean(r.smoothness for r in ok),
        mae_heading=mean(r.mae_heading for r in ok),
        rmse_heading=mean(r.rmse_heading for r in ok),
        ne=mean(r.final_error for r in records),
        align_mae=mean(r.align_mae for r in ok),
        records=records,
    )


def boxplot_stats(values) -> dict:
    v = np.sort(np.asarray(list(values), dtype=float))
    if v.size == 0:
        return {"n": 0, "q1": math.nan, "median": math.nan, "q3": math.nan,
                "whisker_low": math.nan, "whisker_high": math.nan, "outliers": []}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {"n": int(v.size), "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
            "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]]}


# ---------------------------------------------------------------------------
# benchmark

DISTRIBUTION_METRICS = {
    "mae_heading": ("mae_heading", True),
    "rmse_heading": ("rmse_heading", True),
    "smoothness": ("smoothness", True),
    "ne": ("final_error", False),
}


@dataclass
class BenchmarkResult:
    reports: dict[str, MetricsReport]
    traces: dict[str, list[EpisodeTrace]]

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for name, r in self.reports.items():
            w.writerow([name, _f(r.sr), _f(r.tl), _f(r.spl), _f(r.tnt)])
        return buf.getvalue()

    def extended_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EXTENDED_HEADER)
        for name, r in self.reports.items():
            w.writerow([name, _f(r.sr), _f(r.tl), _f(r.tl_all), _f(r.spl), _f(r.tnt),
                        _f(r.smoothness), _f(r.mae_heading), _f(r.rmse_heading), _f(r.ne),
                        _f(r.align_mae), len(r.records)])
        return buf.getvalue()

    def distribution_csvs(self) -> dict[str, str]:
        out = {}
        for metric, (attr, success_only) in DISTRIBUTION_METRICS.items():
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(DIST_HEADER)
            for name, r in self.reports.items():
                for rec in r.records:
                    if success_only and not rec.success:
                        continue
                    w.writerow([name, rec.task_id, _f(getattr(rec, attr))])
            out[metric] = buf.getvalue()
        return out

    def boxplot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BOX_HEADER)
        for name, r in self.reports.items():
            for metric, (attr, success_only) in DISTRIBUTION_METRICS.items():
                vals = [getattr(rec, attr) for rec in r.records if rec.success or not success_only]
                s = boxplot_stats(vals)
                w.writerow([name, metric, s["n"], _f(s["q1"]), _f(s["median"]), _f(s["q3"]),
                            _f(s["whisker_low"]), _f(s["whisker_high"]),
                            ";".join(_f(x) for x in s["outliers"])])
        return buf.getvalue()


def _f(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


MethodRunner = Callable[[TaskSpec, NavEnv], EpisodeTrace]


def run_benchmark(methods: Mapping[str, MethodRunner], tasks: Sequence[TaskSpec],
                  env_factory: Callable[[], NavEnv], workers: int = 1) -> BenchmarkResult:
    """Run every method on every task; results merge in task order."""
    reports, traces = {}, {}
    for name, runner in methods.items():
        def one(task, _runner=runner):
            return _runner(task, env_factory())
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                trs = list(pool.map(one, tasks))
        else:
            trs = [one(t) for t in tasks]
        traces[name] = trs
        if trs:
            reports[name] = compute_metrics(trs, tasks)
        log.info("%s: %d tasks", name, len(trs))
    return BenchmarkResult(reports, traces)
