"""Run configuration: nested YAML/dict form, presets, validation, builders.

Seeds fan out from the master ``seed`` through :func:`derive_seed`:

    training          train(seed=master)  (sub-tags "init", "updates", "tasks:<ep>", "explore:<ep>")
    held-out tasks    derive_seed(master, "heldout")
    baseline search   derive_seed(task.seed, method)
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any

import yaml

from .baselines import AFSAConfig, GAConfig, PSOConfig
from .eval import generate_tasks, task_sampler
from .field_model import FieldSource, IGRFField, LinearField, load_coefficients
from .geodesy import FULL_REGION, Region, desk_region
from .nav_env import NavEnv, RewardConfig, TaskSpec
from .td3_agent import TD3Config, derive_seed

FIELD_KINDS = ("linear", "igrf")
REGION_PRESETS = {
    "full": FULL_REGION,
    "desk": desk_region(150_000.0),
    "desk-inner": desk_region(110_000.0),
}


class ConfigError(ValueError):
    """Raised with every violated field listed."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    field_kind: str = "linear"
    epoch: float = 2020.0
    coeffs: str | None = None
    region: Region = REGION_PRESETS["desk"]
    task_region: Region | None = REGION_PRESETS["desk-inner"]
    min_task_distance_m: float = 40_000.0
    max_task_distance_m: float = 100_000.0
    eval_tasks: int = 100
    max_step_m: float = 50_000.0
    success_radius_m: float = 20_000.0
    reward: RewardConfig = RewardConfig(objective_cap=3.0)
    td3: TD3Config = TD3Config(hidden=(64, 64), episodes=2_000, updates_per_step=2)
    ga: GAConfig = GAConfig()
    pso: PSOConfig = PSOConfig()
    afsa: AFSAConfig = AFSAConfig()
    workers: int = 1
    output: str = "runs"

    def validate(self) -> list[str]:
        errs = []
        if self.field_kind not in FIELD_KINDS:
            errs.append(f"field.kind must be one of {FIELD_KINDS}")
        if not math.isfinite(self.epoch):
            errs.append("field.epoch must be finite")
        if not 0 < self.min_task_distance_m < self.max_task_distance_m:
            errs.append("tasks: need 0 < min_distance_m < max_distance_m")
        if self.eval_tasks < 1:
            errs.append("tasks.eval_count must be >= 1")
        if not self.max_step_m > 0:
            errs.append("env.max_step_m must be positive")
        if not self.success_radius_m > 0:
            errs.append("env.success_radius_m must be positive")
        if self.workers < 1:
            errs.append("workers must be >= 1")
        tr = self.task_region
        if tr is not None and not (self.region.lat_min <= tr.lat_min and tr.lat_max <= self.region.lat_max
                                   and self.region.lon_min <= tr.lon_min and tr.lon_max <= self.region.lon_max):
            errs.append("tasks.region must lie inside region")
        for prefix, sub in (("reward", self.reward), ("td3", self.td3), ("baselines.ga", self.ga),
                            ("baselines.pso", self.pso), ("baselines.afsa", self.afsa)):
            errs += [f"{prefix}: {e}" for e in sub.validate()]
        return errs

    # -- builders ---------------------------------------------------------

    def source(self) -> FieldSource:
        if self.field_kind == "linear":
            return LinearField(self.region.frame)
        return IGRFField(load_coefficients(self.coeffs), self.epoch)

    def env(self, source: FieldSource | None = None) -> NavEnv:
        return NavEnv(source or self.source(), self.region, self.reward, max_distance=self.max_step_m,
                      success_radius_m=self.success_radius_m)

    @property
    def sampling_region(self) -> Region:
        return self.task_region or self.region

    def task_sampler(self):
        return task_sampler(self.sampling_region, self.min_task_distance_m, self.max_task_distance_m,
                            self.epoch)

    def heldout_tasks(self, count: int | None = None) -> list[TaskSpec]:
        return generate_tasks(self.sampling_region, count or self.eval_tasks, self.min_task_distance_m,
                              self.max_task_distance_m, seed=derive_seed(self.seed, "heldout"),
                              epoch=self.epoch)

    def to_dict(self) -> dict:
        def region(r: Region | None):
            return None if r is None else asdict(r)

        td3 = asdict(self.td3)
        td3["hidden"] = list(td3["hidden"])
        return {
            "seed": self.seed,
            "field": {"kind": self.field_kind, "epoch": self.epoch, "coeffs": self.coeffs},
            "region": region(self.region),
            "tasks": {"region": region(self.task_region), "min_distance_m": self.min_task_distance_m,
                      "max_distance_m": self.max_task_distance_m, "eval_count": self.eval_tasks},
            "env": {"max_step_m": self.max_step_m, "success_radius_m": self.success_radius_m},
            "reward": asdict(self.reward),
            "td3": td3,
            "baselines": {"ga": asdict(self.ga), "pso": asdict(self.pso), "afsa": asdict(self.afsa)},
            "workers": self.workers,
            "output": self.output,
        }

    def to_yaml(self, include_output: bool = False) -> str:
        d = self.to_dict()
        if not include_output:
            del d["output"]  # keeps artifacts identical across output directories
        return yaml.safe_dump(d, sort_keys=True)


FULL_PRESET = RunConfig(
    field_kind="igrf",
    region=FULL_REGION,
    task_region=None,
    min_task_distance_m=300_000.0,
    max_task_distance_m=500_000.0,
    max_step_m=50_000.0,
    success_radius_m=20_000.0,
    reward=RewardConfig(),
    td3=TD3Config(),
)
PRESETS = {"desk": RunConfig(), "full": FULL_PRESET}


# ---------------------------------------------------------------------------
# parsing


def _region(value, key: str, errs: list[str], allow_none: bool = False) -> Region | None:
    if value is None and allow_none:
        return None
    if isinstance(value, str):
        if value in REGION_PRESETS:
            return REGION_PRESETS[value]
        errs.append(f"{key}: unknown region preset {value!r} (known: {sorted(REGION_PRESETS)})")
        return None
    if isinstance(value, dict):
        want = ("lat_min", "lat_max", "lon_min", "lon_max")
        extra = sorted(set(value) - set(want))
        missing = [k for k in want if k not in value]
        if extra or missing:
            errs.append(f"{key}: expected keys {list(want)}, missing {missing}, unknown {extra}")
            return None
        try:
            return Region(*(float(value[k]) for k in want))
        except (TypeError, ValueError) as exc:
            errs.append(f"{key}: {exc}")
            return None
    errs.append(f"{key}: expected a preset name or a bounds mapping")
    return None


def _dataclass(cls, value, key: str, errs: list[str], base):
    if value is None:
        return base
    if not isinstance(value, dict):
        errs.append(f"{key}: expected a mapping")
        return base
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in value.items():
        if k not in known:
            errs.append(f"{key}.{k}: unknown field")
            continue
        cur = getattr(base, k)
        if v is None and "None" in str(known[k].type):
            kwargs[k] = None
            continue
        try:
            kwargs[k] = _coerce(v, cur)
        except (TypeError, ValueError):
            errs.append(f"{key}.{k}: cannot interpret {v!r} as {type(cur).__name__}")
    return replace(base, **kwargs)


def _coerce(v, like):
    if isinstance(like, bool):
        if not isinstance(v, bool):
            raise TypeError
        return v
    if isinstance(like, int):
        if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
            raise TypeError
        return int(v)
    if isinstance(like, float):
        if isinstance(v, bool) or v is None:
            raise TypeError
        return float(v)
    if isinstance(like, tuple):
        return tuple(int(x) for x in v)
    if like is None:  # optional floats default to None
        if v is None:
            return None
        if isinstance(v, bool):
            raise TypeError
        return float(v)
    return v


_TOP_KEYS = ("preset", "seed", "field", "region", "tasks", "env", "reward", "td3", "baselines",
             "workers", "output")


def config_from_dict(data: dict | None) -> RunConfig:
    """Build and validate a RunConfig; unspecified fields come from the preset."""
    data = copy.deepcopy(data or {})
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    errs: list[str] = []
    for k in sorted(set(data) - set(_TOP_KEYS)):
        errs.append(f"{k}: unknown key")
    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        errs.append(f"preset: unknown preset {preset!r} (known: {sorted(PRESETS)})")
        preset = "desk"
    cfg = PRESETS[preset]
    kw: dict[str, Any] = {}

    def scalar(key, like, target):
        if key in data:
            try:
                kw[target] = _coerce(data[key], like)
            except (TypeError, ValueError):
                errs.append(f"{key}: cannot interpret {data[key]!r}")

    scalar("seed", 0, "seed")
    scalar("workers", 0, "workers")
    if "output" in data:
        kw["output"] = str(data["output"])

    fld = data.get("field") or {}
    if not isinstance(fld, dict):
        errs.append("field: expected a mapping")
        fld = {}
    for k in sorted(set(fld) - {"kind", "epoch", "coeffs"}):
        errs.append(f"field.{k}: unknown field")
    if "kind" in fld:
        kw["field_kind"] = str(fld["kind"])
    if "epoch" in fld:
        try:
            kw["epoch"] = float(fld["epoch"])
        except (TypeError, ValueError):
            errs.append(f"field.epoch: cannot interpret {fld['epoch']!r}")
    if "coeffs" in fld:
        kw["coeffs"] = None if fld["coeffs"] is None else str(fld["coeffs"])

    if "region" in data:
        r = _region(data["region"], "region", errs)
        if r is not None:
            kw["region"] = r

    tasks = data.get("tasks") or {}
    if not isinstance(tasks, dict):
        errs.append("tasks: expected a mapping")
        tasks = {}
    for k in sorted(set(tasks) - {"region", "min_distance_m", "max_distance_m", "eval_count"}):
        errs.append(f"tasks.{k}: unknown field")
    if "region" in tasks:
        kw["task_region"] = _region(tasks["region"], "tasks.region", errs, allow_none=True)
    for k, target, like in (("min_distance_m", "min_task_distance_m", 0.0),
                            ("max_distance_m", "max_task_distance_m", 0.0),
                            ("eval_count", "eval_tasks", 0)):
        if k in tasks:
            try:
                kw[target] = _coerce(tasks[k], like)
            except (TypeError, ValueError):
                errs.append(f"tasks.{k}: cannot interpret {tasks[k]!r}")

    env = data.get("env") or {}
    if not isinstance(env, dict):
        errs.append("env: expected a mapping")
        env = {}
    for k in sorted(set(env) - {"max_step_m", "success_radius_m"}):
        errs.append(f"env.{k}: unknown field")
    for k in ("max_step_m", "success_radius_m"):
        if k in env:
            try:
                kw[k] = _coerce(env[k], 0.0)
            except (TypeError, ValueError):
                errs.append(f"env.{k}: cannot interpret {env[k]!r}")

    kw["reward"] = _dataclass(RewardConfig, data.get("reward"), "reward", errs, cfg.reward)
    kw["td3"] = _dataclass(TD3Config, data.get("td3"), "td3", errs, cfg.td3)
    base = data.get("baselines") or {}
    if not isinstance(base, dict):
        errs.append("baselines: expected a mapping")
        base = {}
    for k in sorted(set(base) - {"ga", "pso", "afsa"}):
        errs.append(f"baselines.{k}: unknown baseline")
    kw["ga"] = _dataclass(GAConfig, base.get("ga"), "baselines.ga", errs, cfg.ga)
    kw["pso"] = _dataclass(PSOConfig, base.get("pso"), "baselines.pso", errs, cfg.pso)
    kw["afsa"] = _dataclass(AFSAConfig, base.get("afsa"), "baselines.afsa", errs, cfg.afsa)

    out = replace(cfg, **kw)
    errs += out.validate()
    if errs:
        raise ConfigError(errs)
    return out


def set_path(data: dict, dotted: str, value) -> None:
    """``set_path(d, "td3.episodes", 10)`` with intermediate mappings created."""
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = cur[k] = {}
        cur = nxt
    cur[keys[-1]] = value


def load_config(path: str | None, overrides: list[tuple[str, Any]] = ()) -> RunConfig:
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
    for key, value in overrides:
        set_path(data, key, value)
    return config_from_dict(data)
