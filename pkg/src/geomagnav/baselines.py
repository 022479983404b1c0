"""Metaheuristic navigators: GA, PSO and AFSA over one-step actions.

At every vehicle step each method searches the (yaw, distance) box for
the action whose probed next position minimizes the objective, then
executes the best candidate.  Genes live in a unit square internally:
``u[:, 0]`` maps to yaw in [-pi/2, pi/2], ``u[:, 1]`` to distance in
[0, L_max].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nav_env import EpisodeTrace, NavAction, NavEnv, TaskSpec

METHODS = ("ga", "pso", "afsa")


@dataclass(frozen=True)
class Candidate:
    yaw: float
    distance: float
    fitness: float


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    iterations: int = 30
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    mutation_scale: float = 0.1
    tournament: int = 3

    def validate(self) -> list[str]:
        errs = []
        if self.population < 1:
            errs.append("ga.population must be >= 1")
        if self.iterations < 0:
            errs.append("ga.iterations must be >= 0")
        if not 0 <= self.crossover_rate <= 1 or not 0 <= self.mutation_rate <= 1:
            errs.append("ga rates must be in [0, 1]")
        if self.tournament < 1:
            errs.append("ga.tournament must be >= 1")
        return errs


@dataclass(frozen=True)
class PSOConfig:
    population: int = 30
    iterations: int = 50
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    velocity_clamp: float = 0.2

    def validate(self) -> list[str]:
        errs = []
        if self.population < 1:
            errs.append("pso.population must be >= 1")
        if self.iterations < 0:
            errs.append("pso.iterations must be >= 0")
        if not 0 <= self.inertia < 1.5 or self.cognitive < 0 or self.social < 0:
            errs.append("pso coefficients out of range")
        if self.velocity_clamp <= 0:
            errs.append("pso.velocity_clamp must be positive")
        return errs


@dataclass(frozen=True)
class AFSAConfig:
    population: int = 30
    iterations: int = 30
    visual: float = 1.0 / 6.0  # pi/6 of the yaw span, same fraction of the distance span
    step: float = 0.1
    try_number: int = 5
    crowding: float = 0.618

    def validate(self) -> list[str]:
        errs = []
        if self.population < 1:
            errs.append("afsa.population must be >= 1")
        if self.iterations < 0:
            errs.append("afsa.iterations must be >= 0")
        if not self.visual > 0 or not self.step > 0:
            errs.append("afsa.visual and afsa.step must be positive")
        if self.try_number < 1:
            errs.append("afsa.try_number must be >= 1")
        if not 0 < self.crowding <= 1:
            errs.append("afsa.crowding must be in (0, 1]")
        return errs


DEFAULT_CONFIGS = {"ga": GAConfig(), "pso": PSOConfig(), "afsa": AFSAConfig()}


@dataclass
class SearchResult:
    action: NavAction
    best: Candidate
    history: list[float]  # best fitness after initialization and after each iteration


def _fitness(env: NavEnv, u: np.ndarray) -> np.ndarray:
    yaw = (u[:, 0] - 0.5) * math.pi
    dist = u[:, 1] * env.max_distance
    return env.probe(dist, yaw)


def _result(env: NavEnv, u_best: np.ndarray, f_best: float, history) -> SearchResult:
    yaw = float((u_best[0] - 0.5) * math.pi)
    dist = float(u_best[1] * env.max_distance)
    action = NavAction.bounded(dist, yaw, env.max_distance)
    return SearchResult(action, Candidate(action.yaw, action.distance, float(f_best)), list(history))


def _init(rng, n, initial):
    if initial is not None:
        return np.clip(np.array(initial, dtype=float).reshape(-1, 2), 0.0, 1.0)
    return rng.uniform(0.0, 1.0, (n, 2))


def to_unit(yaw, distance, max_distance):
    """(yaw, distance) pairs to the internal unit-square genes."""
    return np.column_stack([np.asarray(yaw) / math.pi + 0.5, np.asarray(distance) / max_distance])


def propose_action_ga(env: NavEnv, config: GAConfig, rng: np.random.Generator,
                      initial=None) -> SearchResult:
    pop = _init(rng, config.population, initial)
    fit = _fitness(env, pop)
    k = int(np.argmin(fit))
    best_u, best_f = pop[k].copy(), fit[k]
    history = [best_f]
    n = len(pop)
    for _ in range(config.iterations):
        t = min(config.tournament, n)
        contenders = rng.integers(0, n, size=(2 * n, t))
        winners = contenders[np.arange(2 * n), np.argmin(fit[contenders], axis=1)]
        p1, p2 = pop[winners[:n]], pop[winners[n:]]
        alpha = rng.uniform(0.0, 1.0, (n, 1))
        cross = rng.uniform(size=(n, 1)) < config.crossover_rate
        child = np.where(cross, alpha * p1 + (1.0 - alpha) * p2, p1)
        mutate = rng.uniform(size=child.shape) < config.mutation_rate
        child = child + mutate * rng.normal(0.0, config.mutation_scale, child.shape)
        child = np.clip(child, 0.0, 1.0)
        child[0] = best_u  # elitism
        pop = child
        fit = _fitness(env, pop)
        k = int(np.argmin(fit))
        if fit[k] < best_f:
            best_u, best_f = pop[k].copy(), fit[k]
        history.append(best_f)
    return _result(env, best_u, best_f, history)


def propose_action_pso(env: NavEnv, config: PSOConfig, rng: np.random.Generator,
                       initial=None, initial_velocity=None) -> SearchResult:
    x = _init(rng, config.population, initial)
    vmax = config.velocity_clamp
    if initial_velocity is not None:
        v = np.array(initial_velocity, dtype=float).reshape(x.shape)
    else:
        v = rng.uniform(-vmax, vmax, x.shape)
    fit = _fitness(env, x)
    pbest, pbest_f = x.copy(), fit.copy()
    k = int(np.argmin(fit))
    gbest, gbest_f = x[k].copy(), fit[k]
    history = [gbest_f]
    for _ in range(config.iterations):
        r1 = rng.uniform(size=x.shape)
        r2 = rng.uniform(size=x.shape)
        v = config.inertia * v + config.cognitive * r1 * (pbest - x) + config.social * r2 * (gbest - x)
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, 0.0, 1.0)
        fit = _fitness(env, x)
        better = fit < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = fit[better]
        k = int(np.argmin(pbest_f))
        if pbest_f[k] < gbest_f:
            gbest, gbest_f = pbest[k].copy(), pbest_f[k]
        history.append(gbest_f)
    return _result(env, gbest, gbest_f, history)


def _move_toward(x, target, step, rng):
    d = target - x
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    moved = x + rng.uniform(size=(len(x), 1)) * step * d / safe
    return np.clip(np.where(norm > 0, moved, x), 0.0, 1.0)


def propose_action_afsa(env: NavEnv, config: AFSAConfig, rng: np.random.Generator,
                        initial=None) -> SearchResult:
    """Synchronous AFSA: every fish tries swarm and follow, else prey, else a random move."""
    x = _init(rng, config.population, initial)
    n = len(x)
    fit = _fitness(env, x)
    k = int(np.argmin(fit))
    best_u, best_f = x[k].copy(), fit[k]
    history = [best_f]
    vis, step = config.visual, config.step
    for _ in range(config.iterations):
        dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        nb = (dist < vis) & ~np.eye(n, dtype=bool)
        nf = nb.sum(axis=1)
        uncrowded = (nf > 0) & (nf < config.crowding * n)

        # swarm: head for the neighborhood center if it is better and not crowded
        center = np.where(nf[:, None] > 0, (nb @ x) / np.maximum(nf, 1)[:, None], x)
        fc = _fitness(env, center)
        swarm_ok = uncrowded & (fc < fit)
        # follow: head for the best visible neighbor
        masked = np.where(nb, fit[None, :], np.inf)
        jbest = np.argmin(masked, axis=1)
        fj = masked[np.arange(n), jbest]
        follow_ok = uncrowded & (fj < fit)

        x_swarm = _move_toward(x, center, step, rng)
        x_follow = _move_toward(x, x[jbest], step, rng)
        f_swarm = np.where(swarm_ok, _fitness(env, x_swarm), np.inf)
        f_follow = np.where(follow_ok, _fitness(env, x_follow), np.inf)
        use_follow = f_follow < f_swarm
        new_x = np.where(use_follow[:, None], x_follow, x_swarm)
        new_f = np.where(use_follow, f_follow, f_swarm)
        moved = np.isfinite(new_f)

        # prey for fish that could not swarm or follow
        prey = ~moved
        if np.any(prey):
            idx = np.flatnonzero(prey)
            tries = x[idx, None, :] + vis * rng.uniform(-1.0, 1.0, (len(idx), config.try_number, 2))
            tries = np.clip(tries, 0.0, 1.0)
            ft = _fitness(env, tries.reshape(-1, 2)).reshape(len(idx), config.try_number)
            better = ft < fit[idx, None]
            first = np.argmax(better, axis=1)
            found = better[np.arange(len(idx)), first]
            goal = tries[np.arange(len(idx)), first]
            toward = _move_toward(x[idx], goal, step, rng)
            rand = np.clip(x[idx] + step * rng.uniform(-1.0, 1.0, (len(idx), 2)), 0.0, 1.0)
            px = np.where(found[:, None], toward, rand)
            new_x[idx] = px
            new_f[idx] = _fitness(env, px)
        x, fit = new_x, new_f
        k = int(np.argmin(fit))
        if fit[k] < best_f:
            best_u, best_f = x[k].copy(), fit[k]
        history.append(best_f)
    return _result(env, best_u, best_f, history)


PROPOSERS = {"ga": propose_action_ga, "pso": propose_action_pso, "afsa": propose_action_afsa}


def run_baseline_episode(method: str, task: TaskSpec, env: NavEnv, config=None,
                         rng: np.random.Generator | None = None) -> EpisodeTrace:
    """Propose-and-execute until the episode ends.

    The per-step search histories are attached as ``trace.search_histories``.
    """
    if method not in PROPOSERS:
        raise ValueError(f"unknown baseline {method!r}")
    config = config or DEFAULT_CONFIGS[method]
    rng = rng if rng is not None else np.random.default_rng(task.seed)
    env.reset(task)
    histories = []
    done = False
    while not done:
        res = PROPOSERS[method](env, config, rng)
        histories.append(res.history)
        _, _, done, _ = env.step(res.action)
    trace = env.trace
    trace.search_histories = histories
    return trace
