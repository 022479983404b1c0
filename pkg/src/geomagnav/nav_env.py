"""Navigation MDP: kinematics, objective, composite reward and episodes.

Coordinates are meters east (x) and north (y) of the region anchor;
headings are measured counter-clockwise from east, so a move of length
``L`` along heading ``theta`` adds ``(L cos theta, L sin theta)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .field_model import FieldSource, GeoPosition, gradient_field
from .geodesy import Region

HALF_PI = math.pi / 2
EPS_DEN = 1e-12
EPS_PAR = 1e-18
PARAM_INDEX = {"d": 0, "i": 1, "b_h": 2}
TRACE_HEADER = ("step", "lat", "lon", "x_m", "y_m", "theta_rad", "L_m", "psi_rad", "F",
                "reward", "lambda_prime_rad", "done", "success")


class TaskError(ValueError):
    pass


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class VehiclePose:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    step_index: int = 0


@dataclass(frozen=True)
class NavAction:
    """Move ``distance`` meters after turning by ``yaw`` radians.

    Negative distances and yaws beyond +-pi/2 are clamped on construction;
    the upper distance bound is applied by :meth:`bounded`.
    """

    distance: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "distance", max(0.0, float(self.distance)))
        object.__setattr__(self, "yaw", min(HALF_PI, max(-HALF_PI, float(self.yaw))))

    @classmethod
    def bounded(cls, distance: float, yaw: float, max_distance: float) -> "NavAction":
        return cls(min(float(distance), max_distance), yaw)


@dataclass(frozen=True)
class NavState:
    d_cur: float
    i_cur: float
    bh_cur: float
    d_tgt: float
    i_tgt: float
    bh_tgt: float
    last_distance: float
    last_yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_cur, self.i_cur, self.bh_cur, self.d_tgt, self.i_tgt,
                         self.bh_tgt, self.last_distance, self.last_yaw])


@dataclass(frozen=True)
class StateNormalizer:
    """Min-max scaling of the 8-component state onto [0, 1]."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        if lo.shape != (8,) or hi.shape != (8,) or np.any(hi <= lo):
            raise ValueError("normalizer bounds must be 8 strictly increasing pairs")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    def normalize(self, state) -> np.ndarray:
        s = state.as_array() if isinstance(state, NavState) else np.asarray(state, dtype=float)
        return np.clip((s - self.low) / (self.high - self.low), 0.0, 1.0)

    def denormalize(self, z) -> np.ndarray:
        return self.low + np.asarray(z, dtype=float) * (self.high - self.low)


@dataclass(frozen=True)
class RewardConfig:
    zeta1: float = 200.0
    zeta2: float = 10.0
    zeta3: float = 3.0
    decay_enabled: bool = True
    success_threshold: float | None = None  # None: derive per task from success_radius_m
    n_max: int = 50
    objective_cap: float | None = None  # saturate F inside the proximity term; None keeps it raw

    def validate(self) -> list[str]:
        errs = []
        if not self.zeta1 > self.zeta2:
            errs.append("zeta1 must exceed zeta2")
        if self.zeta3 < 0 or (self.zeta3 > 0 and not self.zeta2 > self.zeta3):
            errs.append("zeta3 must satisfy zeta2 > zeta3 >= 0 (0 disables alignment)")
        if self.zeta2 <= 0:
            errs.append("zeta2 must be positive")
        if self.success_threshold is not None and not self.success_threshold > 0:
            errs.append("success_threshold must be positive")
        if self.n_max < 1:
            errs.append("n_max must be >= 1")
        if self.objective_cap is not None and not self.objective_cap >= 3.0:
            errs.append("objective_cap must be >= 3 (the objective's value at reset)")
        return errs


@dataclass(frozen=True)
class TaskSpec:
    origin: GeoPosition
    destination: GeoPosition
    epoch: float = 2020.0
    seed: int = 0


# ---------------------------------------------------------------------------
# pure pieces of the MDP


def motion_update(pose: VehiclePose, action: NavAction) -> VehiclePose:
    theta = pose.theta + action.yaw
    return VehiclePose(pose.x + action.distance * math.cos(theta),
                       pose.y + action.distance * math.sin(theta),
                       theta, pose.step_index + 1)


def objective_terms(current, target, initial, eps_den: float = EPS_DEN):
    """Per-parameter normalized squared residuals and a floor-hit mask."""
    cur = np.asarray(current, dtype=float)
    tgt = np.asarray(target, dtype=float)
    den = (tgt - np.asarray(initial, dtype=float)) ** 2
    floored = den < eps_den
    return (tgt - cur) ** 2 / np.where(floored, eps_den, den), floored


def objective(current, target, initial, eps_den: float = EPS_DEN) -> float:
    terms, _ = objective_terms(current, target, initial, eps_den)
    return float(np.sum(terms))


def wrap_abs(angle) -> float:
    """|angle| folded into [0, pi]."""
    return abs(math.remainder(float(angle), 2 * math.pi))


def theoretical_heading(current: Sequence[float], target: Sequence[float],
                        grad1, grad2, eps_par: float = EPS_PAR) -> tuple[float, str]:
    """Heading that moves two parameters toward their targets in equal ratio.

    ``current``/``target`` are the two chosen parameter values; ``grad1`` and
    ``grad2`` their (east, north) gradients.  Returns ``(heading, flag)``
    where flag is ``"ok"``, ``"degenerate"`` (already at the target values)
    or ``"parallel"`` (gradients parallel, heading undefined; caller falls
    back to a previous value).
    """
    g1x, g1y = float(grad1[0]), float(grad1[1])
    g2x, g2y = float(grad2[0]), float(grad2[1])
    det = g1x * g2y - g1y * g2x
    if abs(det) < eps_par:
        return 0.0, "parallel"
    d1 = float(current[0]) - float(target[0])
    d2 = float(current[1]) - float(target[1])
    num = d1 * g2x - d2 * g1x
    den = d2 * g1y - d1 * g2y
    if num == 0.0 and den == 0.0:
        return 0.0, "degenerate"
    # orientation of the gradient pair decides which of the two opposite
    # solutions decreases the residuals
    s = 1.0 if det > 0 else -1.0
    return math.atan2(s * num, s * den), "ok"


def compute_reward(prev_F: float, cur_F: float, pose_after: VehiclePose, lambda_prime: float,
                   step_index: int, config: RewardConfig, reached: bool) -> float:
    r_dest = config.zeta1 if reached else 0.0
    if config.objective_cap is not None:
        prev_F, cur_F = min(prev_F, config.objective_cap), min(cur_F, config.objective_cap)
    delta = cur_F - prev_F
    r_prox = -config.zeta2 * delta
    if config.decay_enabled and step_index > config.n_max / 2:
        r_prox -= config.zeta2 * max(0.0, delta) * (step_index / config.n_max)
    r_align = config.zeta3 * (math.pi / 4 - wrap_abs(pose_after.theta - lambda_prime))
    return r_dest + r_prox + r_align


# ---------------------------------------------------------------------------
# traces


@dataclass
class EpisodeTrace:
    """Per-step record of one episode; row 0 is the reset state."""

    task: TaskSpec | None = None
    zeta: float = float("nan")
    straight_distance: float = float("nan")
    target_xy: tuple[float, float] = (float("nan"), float("nan"))
    rows: list[dict] = field(default_factory=list)
    success: bool = False
    timeout: bool = False
    out_of_region: bool = False
    floored_terms: bool = False

    @property
    def steps(self) -> int:
        return len(self.rows) - 1

    def positions(self) -> np.ndarray:
        return np.array([[r["x_m"], r["y_m"]] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.rows:
            w.writerow([int(r["step"])] + [repr(float(r[k])) for k in TRACE_HEADER[1:-2]]
                       + [int(r["done"]), int(r["success"])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **meta) -> "EpisodeTrace":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            row = {k: float(v) for k, v in rec.items()}
            row["step"] = int(rec["step"])
            row["done"] = bool(int(rec["done"]))
            row["success"] = bool(int(rec["success"]))
            rows.append(row)
        tr = cls(rows=rows, **meta)
        if rows:
            tr.success = rows[-1]["success"]
        return tr


# ---------------------------------------------------------------------------
# environment


class NavEnv:
    """Single-vehicle navigation episode over a field source.

    Not thread-safe; create one instance per worker.
    """

    def __init__(self, source: FieldSource, region: Region, reward: RewardConfig | None = None,
                 max_distance: float = 50_000.0, success_radius_m: float = 10_000.0,
                 param_pair: tuple[str, str] = ("i", "b_h"), success_mode: str = "objective",
                 measurement_noise: Sequence[float] | None = None, bounds_resolution: int = 21):
        self.source = source
        self.region = region
        self.frame = region.frame
        self.reward = reward or RewardConfig()
        errs = self.reward.validate()
        if errs:
            raise ValueError("; ".join(errs))
        if success_mode not in ("objective", "distance"):
            raise ValueError(f"unknown success_mode {success_mode!r}")
        self.max_distance = float(max_distance)
        self.success_radius_m = float(success_radius_m)
        self.pair = tuple(PARAM_INDEX[p] for p in param_pair)
        self.success_mode = success_mode
        self.noise = None if measurement_noise is None else np.asarray(measurement_noise, float)
        self.normalizer = self._build_normalizer(bounds_resolution)
        self._active = False
        self.trace: EpisodeTrace | None = None

    # -- setup ------------------------------------------------------------

    def _build_normalizer(self, res: int) -> StateNormalizer:
        r = self.region
        lats = np.linspace(r.lat_min, r.lat_max, res)
        lons = np.linspace(r.lon_min, r.lon_max, res)
        LAT, LON = np.meshgrid(lats, lons, indexing="ij")
        p = self.source.params(LAT, LON)
        lo = p.reshape(-1, 3).min(axis=0)
        hi = p.reshape(-1, 3).max(axis=0)
        pad = np.maximum(0.05 * (hi - lo), 1e-9 * np.maximum(np.abs(hi), 1.0))
        lo, hi = lo - pad, hi + pad
        return StateNormalizer(np.r_[lo, lo, 0.0, -HALF_PI], np.r_[hi, hi, self.max_distance, HALF_PI])

    def _params_at_xy(self, x, y) -> np.ndarray:
        lat, lon = self.frame.to_latlon(x, y)
        return self.source.params(lat, lon)

    def _grads_at_xy(self, x: float, y: float) -> np.ndarray:
        lat, lon = self.frame.to_latlon(x, y)
        return gradient_field(self.source, float(lat), float(lon), frame=self.frame)

    def _measure(self, params: np.ndarray) -> np.ndarray:
        if self.noise is None:
            return params
        return params + self.rng.normal(0.0, self.noise)

    def success_threshold(self, target_xy: tuple[float, float]) -> float:
        """F threshold whose success ellipse has the area of the success disk."""
        if self.reward.success_threshold is not None:
            return self.reward.success_threshold
        g = self._grads_at_xy(*target_xy)  # (3, 2)
        den = np.maximum((self._target - self._initial) ** 2, EPS_DEN)
        A = sum(np.outer(g[k], g[k]) / den[k] for k in range(3))
        ev = np.linalg.eigvalsh(A)
        lam = max(math.sqrt(max(ev[0], 0.0) * ev[1]), 0.01 * ev[1])
        return lam * self.success_radius_m**2

    # -- episode ----------------------------------------------------------

    def reset(self, task: TaskSpec) -> NavState:
        o, d = task.origin, task.destination
        if not self.region.contains(o.latitude, o.longitude):
            raise TaskError(f"origin {o} outside region")
        if not self.region.contains(d.latitude, d.longitude):
            raise TaskError(f"destination {d} outside region")
        if (o.latitude, o.longitude) == (d.latitude, d.longitude):
            raise TaskError("origin equals destination")
        self.task = task
        self.rng = np.random.default_rng(task.seed)
        ox, oy = (float(v) for v in self.frame.to_xy(o.latitude, o.longitude))
        tx, ty = (float(v) for v in self.frame.to_xy(d.latitude, d.longitude))
        self._target_xy = (tx, ty)
        self._target = self.source.params(d.latitude, d.longitude).astype(float)
        self._initial = self._measure(self._params_at_xy(ox, oy).astype(float))
        self._current = self._initial
        _, floored = objective_terms(self._initial, self._target, self._initial)
        self._F = objective(self._initial, self._target, self._initial)
        self.zeta = self.success_threshold((tx, ty))
        self._lambda_prime = 0.0
        self._lambda_prime = self._heading_at(ox, oy, self._current)
        self.pose = VehiclePose(ox, oy, self._lambda_prime, 0)
        self._active = True
        self.trace = EpisodeTrace(task=task, zeta=self.zeta,
                                  straight_distance=math.hypot(tx - ox, ty - oy),
                                  target_xy=(tx, ty), floored_terms=bool(np.any(floored)))
        self._record(NavAction(0.0, 0.0), 0.0, False, False)
        return self._state(0.0, 0.0)

    def _heading_at(self, x: float, y: float, current: np.ndarray) -> float:
        g = self._grads_at_xy(x, y)
        a, b = self.pair
        lam, flag = theoretical_heading((current[a], current[b]), (self._target[a], self._target[b]),
                                        g[a], g[b])
        return self._lambda_prime if flag == "parallel" else lam

    def _state(self, last_distance: float, last_yaw: float) -> NavState:
        c, t = self._current, self._target
        return NavState(c[0], c[1], c[2], t[0], t[1], t[2], last_distance, last_yaw)

    def distance_to_target(self) -> float:
        return math.hypot(self._target_xy[0] - self.pose.x, self._target_xy[1] - self.pose.y)

    def step(self, action: NavAction):
        if not self._active:
            raise EpisodeFinishedError("episode finished; call reset()")
        action = NavAction.bounded(action.distance, action.yaw, self.max_distance)
        lambda_used = self._lambda_prime
        self.pose = motion_update(self.pose, action)
        lat, lon = (float(v) for v in self.frame.to_latlon(self.pose.x, self.pose.y))
        out = not self.region.contains(lat, lon)

        prev_F = self._F
        if out:
            cur_F = prev_F
        else:
            self._current = self._measure(self._params_at_xy(self.pose.x, self.pose.y).astype(float))
            cur_F = objective(self._current, self._target, self._initial)
        dist = self.distance_to_target()
        within = dist < self.success_radius_m
        reached_F = (not out) and cur_F < self.zeta
        success = within if self.success_mode == "distance" else reached_F
        timeout = self.pose.step_index >= self.reward.n_max
        done = success or out or timeout

        r = compute_reward(prev_F, cur_F, self.pose, lambda_used, self.pose.step_index,
                           self.reward, success)
        self._F = cur_F
        if not out and not done:
            self._lambda_prime = self._heading_at(self.pose.x, self.pose.y, self._current)
        self._active = not done
        tr = self.trace
        tr.success, tr.out_of_region = success, out
        tr.timeout = timeout and not success and not out
        self._record(action, r, done, success, lambda_used, lat, lon)
        info = {"pose": self.pose, "lat": lat, "lon": lon, "F": cur_F, "zeta": self.zeta,
                "lambda_prime": lambda_used, "success": success, "timeout": tr.timeout,
                "out_of_region": out, "distance_to_target": dist, "within_radius": within,
                "reached_F": reached_F}
        return self._state(action.distance, action.yaw), r, done, info

    def _record(self, action, reward, done, success, lambda_used=None, lat=None, lon=None):
        if lat is None:
            lat, lon = (float(v) for v in self.frame.to_latlon(self.pose.x, self.pose.y))
        p = self.pose
        self.trace.rows.append({
            "step": p.step_index, "lat": lat, "lon": lon, "x_m": p.x, "y_m": p.y,
            "theta_rad": p.theta, "L_m": action.distance, "psi_rad": action.yaw, "F": self._F,
            "reward": reward,
            "lambda_prime_rad": self._lambda_prime if lambda_used is None else lambda_used,
            "done": done, "success": success})

    @property
    def active(self) -> bool:
        return self._active

    @property
    def current_objective(self) -> float:
        return self._F

    # -- probing (used by the metaheuristic baselines) --------------------

    def probe(self, distances, yaws) -> np.ndarray:
        """Objective at hypothetical next positions, without moving.

        Positions outside the region score ``inf``.
        """
        L = np.clip(np.asarray(distances, dtype=float), 0.0, self.max_distance)
        psi = np.clip(np.asarray(yaws, dtype=float), -HALF_PI, HALF_PI)
        th = self.pose.theta + psi
        x = self.pose.x + L * np.cos(th)
        y = self.pose.y + L * np.sin(th)
        lat, lon = self.frame.to_latlon(x, y)
        r = self.region
        inside = (lat >= r.lat_min) & (lat <= r.lat_max) & (lon >= r.lon_min) & (lon <= r.lon_max)
        p = self.source.params(lat, lon)
        den = np.maximum((self._target - self._initial) ** 2, EPS_DEN)
        F = np.sum((self._target - p) ** 2 / den, axis=-1)
        return np.where(inside, F, np.inf)

    def action_from_normalized(self, a) -> NavAction:
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        return NavAction((a[0] + 1.0) / 2.0 * self.max_distance, a[1] * HALF_PI)

    def normalized_action(self, action: NavAction) -> np.ndarray:
        return np.array([2.0 * action.distance / self.max_distance - 1.0, action.yaw / HALF_PI])
