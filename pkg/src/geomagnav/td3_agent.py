"""TD3 with twin critics, target-policy smoothing and delayed actor updates."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .nav_env import NavAction, NavEnv, TaskError, TaskSpec
from .neural import (MLP, AdamState, NonFiniteError, adam_step, dump_checkpoint,
                     load_checkpoint, soft_update)

log = logging.getLogger(__name__)

STATE_DIM = 8
ACTION_DIM = 2
LOG_HEADER = ("episode", "steps", "return", "success", "window_return", "window_sr")


def derive_seed(seed: int, tag: str) -> int:
    """Stable 63-bit seed for a component: sha256 of ``"{seed}:{tag}"``."""
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored as parallel arrays."""

    def __init__(self, capacity: int = 50_000, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.cursor = 0
        self.size = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> int:
        if not math.isfinite(t.reward):
            raise ValueError("non-finite reward")
        k = self.cursor
        self.states[k] = t.state
        self.actions[k] = t.action
        self.rewards[k] = t.reward
        self.next_states[k] = t.next_state
        self.dones[k] = float(t.done)
        self.ids[k] = self.inserted
        self.inserted += 1
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return int(self.ids[k])

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
                self.dones[idx], self.ids[idx])


@dataclass(frozen=True)
class TD3Config:
    gamma: float = 0.995
    tau: float = 0.005
    policy_delay: int = 2
    batch_size: int = 256
    exploration_noise: float = 0.2
    policy_noise: float = 0.1
    noise_clip: float = 0.2
    episodes: int = 20_000
    warmup_steps: int = 1_000
    buffer_capacity: int = 50_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (512, 512, 512)
    window: int = 200
    checkpoint_every: int = 0
    updates_per_step: int = 1

    def validate(self) -> list[str]:
        errs = []
        if not 0.0 < self.gamma < 1.0:
            errs.append("gamma must be in (0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            errs.append("tau must be in [0, 1]")
        if self.policy_delay < 1:
            errs.append("policy_delay must be >= 1")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            errs.append("batch_size must be in [1, buffer_capacity]")
        if self.exploration_noise < 0 or self.policy_noise < 0 or self.noise_clip < 0:
            errs.append("noise scales must be non-negative")
        if self.episodes < 0 or self.warmup_steps < 0:
            errs.append("episodes and warmup_steps must be non-negative")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            errs.append("learning rates must be positive")
        if not self.hidden or min(self.hidden) < 1:
            errs.append("hidden sizes must be positive")
        if self.window < 1:
            errs.append("window must be >= 1")
        if self.updates_per_step < 1:
            errs.append("updates_per_step must be >= 1")
        return errs


# ---------------------------------------------------------------------------
# functional pieces


def to_nav_action(a: np.ndarray, max_distance: float) -> NavAction:
    a = np.clip(a, -1.0, 1.0)
    return NavAction((a[0] + 1.0) / 2.0 * max_distance, a[1] * math.pi / 2)


def select_action(actor: MLP, state, explore: bool, rng: np.random.Generator,
                  sigma: float = 0.2, max_distance: float = 50_000.0) -> NavAction:
    return to_nav_action(select_normalized(actor, state, explore, rng, sigma), max_distance)


def select_normalized(actor: MLP, state, explore: bool, rng: np.random.Generator | None,
                      sigma: float = 0.2) -> np.ndarray:
    a = actor(np.asarray(state, dtype=float))
    if explore:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def smoothing_noise(shape, rng: np.random.Generator, sigma: float, clip: float) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip)


def target_action(target_actor: MLP, next_states, rng: np.random.Generator,
                  sigma: float = 0.1, clip: float = 0.2) -> np.ndarray:
    a = target_actor(next_states)
    return np.clip(a + smoothing_noise(a.shape, rng, sigma, clip), -1.0, 1.0)


def compute_targets(q1_next, q2_next, rewards, dones, gamma: float) -> np.ndarray:
    q = np.minimum(np.asarray(q1_next).reshape(-1), np.asarray(q2_next).reshape(-1))
    return np.asarray(rewards, float).reshape(-1) + gamma * (1.0 - np.asarray(dones, float).reshape(-1)) * q


def critic_update(critic: MLP, adam: AdamState, states, actions, targets) -> float:
    """One Adam step on the mean squared TD error; returns the pre-update loss."""
    x = np.concatenate([states, actions], axis=1)
    q, cache = critic.forward(x)
    err = q[:, 0] - targets
    loss = float(np.mean(err**2))
    if not math.isfinite(loss):
        raise NonFiniteError(f"critic loss is {loss}")
    grad = (2.0 / len(err)) * err[:, None]
    grads, _ = critic.backward(cache, grad)
    adam_step(critic, grads, adam)
    return loss


def actor_update(actor: MLP, adam: AdamState, critic: MLP, states) -> float:
    """Ascend batch-mean Q(s, pi(s)); returns the pre-update objective."""
    a, a_cache = actor.forward(states)
    x = np.concatenate([states, a], axis=1)
    q, q_cache = critic.forward(x)
    n = len(states)
    _, dx = critic.backward(q_cache, np.full((n, 1), -1.0 / n))
    grads, _ = actor.backward(a_cache, dx[:, states.shape[1]:])
    adam_step(actor, grads, adam)
    return float(np.mean(q))


# ---------------------------------------------------------------------------
# agent


class TD3Agent:
    def __init__(self, config: TD3Config, seed: int = 0, state_dim: int = STATE_DIM,
                 action_dim: int = ACTION_DIM):
        errs = config.validate()
        if errs:
            raise ValueError("; ".join(errs))
        self.config = config
        self.seed = seed
        init = np.random.default_rng(derive_seed(seed, "init"))
        h = list(config.hidden)
        self.actor = MLP([state_dim, *h, action_dim], "tanh", init)
        self.critic1 = MLP([state_dim + action_dim, *h, 1], "linear", init)
        self.critic2 = MLP([state_dim + action_dim, *h, 1], "linear", init)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = AdamState.for_net(self.actor, config.actor_lr)
        self.critic1_opt = AdamState.for_net(self.critic1, config.critic_lr)
        self.critic2_opt = AdamState.for_net(self.critic2, config.critic_lr)
        self.rng = np.random.default_rng(derive_seed(seed, "updates"))
        self.update_count = 0
        self.actor_updates = 0
        self.episodes_done = 0
        self.total_steps = 0

    def act(self, state_norm, explore: bool = False, rng=None) -> np.ndarray:
        return select_normalized(self.actor, state_norm, explore, rng, self.config.exploration_noise)

    def update(self, buffer: ReplayBuffer) -> dict:
        c = self.config
        s, a, r, s2, d, ids = buffer.sample(c.batch_size, self.rng)
        a2 = target_action(self.actor_target, s2, self.rng, c.policy_noise, c.noise_clip)
        x2 = np.concatenate([s2, a2], axis=1)
        y = compute_targets(self.critic1_target(x2), self.critic2_target(x2), r, d, c.gamma)
        l1 = critic_update(self.critic1, self.critic1_opt, s, a, y)
        l2 = critic_update(self.critic2, self.critic2_opt, s, a, y)
        self.update_count += 1
        out = {"critic1_loss": l1, "critic2_loss": l2, "actor_updated": False, "ids": ids}
        if self.update_count % c.policy_delay == 0:
            out["actor_objective"] = actor_update(self.actor, self.actor_opt, self.critic1, s)
            self.actor_updates += 1
            for tgt, onl in ((self.actor_target, self.actor), (self.critic1_target, self.critic1),
                             (self.critic2_target, self.critic2)):
                soft_update(tgt, onl, c.tau)
            out["actor_updated"] = True
        return out

    # -- persistence --------------------------------------------------------

    _NETS = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        nets = {n: getattr(self, n) for n in self._NETS}
        adams = {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}
        meta = {"seed": self.seed, "update_count": self.update_count,
                "actor_updates": self.actor_updates, "episodes_done": self.episodes_done,
                "total_steps": self.total_steps, "rng_state": self.rng.bit_generator.state,
                "config": _config_dict(self.config)}
        meta.update(extra_meta or {})
        return dump_checkpoint(nets, adams, meta, _config_dict(self.config))

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["TD3Agent", dict]:
        nets, adams, meta, _ = load_checkpoint(data)
        cfg = dict(meta["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        agent = cls.__new__(cls)
        agent.config = TD3Config(**cfg)
        agent.seed = meta["seed"]
        for n in cls._NETS:
            setattr(agent, n, nets[n])
        agent.actor_opt, agent.critic1_opt, agent.critic2_opt = (
            adams["actor"], adams["critic1"], adams["critic2"])
        agent.rng = np.random.default_rng()
        agent.rng.bit_generator.state = meta["rng_state"]
        agent.update_count = meta["update_count"]
        agent.actor_updates = meta["actor_updates"]
        agent.episodes_done = meta["episodes_done"]
        agent.total_steps = meta["total_steps"]
        return agent, meta


def _config_dict(cfg: TD3Config) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(d["hidden"])
    return d


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingLog:
    window: int = 200
    rows: list[dict] = field(default_factory=list)

    def append(self, episode: int, steps: int, ret: float, success: bool):
        recent = self.rows[-(self.window - 1):] if self.window > 1 else []
        rets = [r["return"] for r in recent] + [ret]
        succ = [r["success"] for r in recent] + [success]
        self.rows.append({"episode": episode, "steps": steps, "return": ret, "success": bool(success),
                          "window_return": float(np.mean(rets)), "window_sr": float(np.mean(succ))})

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(LOG_HEADER)
        for r in self.rows:
            w.writerow([r["episode"], r["steps"], repr(r["return"]), int(r["success"]),
                        repr(r["window_return"]), repr(r["window_sr"])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window: int = 200) -> "TrainingLog":
        out = cls(window=window)
        for rec in csv.DictReader(io.StringIO(text)):
            out.rows.append({"episode": int(rec["episode"]), "steps": int(rec["steps"]),
                             "return": float(rec["return"]), "success": bool(int(rec["success"])),
                             "window_return": float(rec["window_return"]),
                             "window_sr": float(rec["window_sr"])})
        return out


def train(env: NavEnv, sample_task: Callable[[np.random.Generator], TaskSpec], config: TD3Config,
          seed: int = 0, agent: TD3Agent | None = None, log_: TrainingLog | None = None,
          on_episode: Callable[[TD3Agent, TrainingLog], None] | None = None):
    """Run ``config.episodes`` training episodes; resumes from ``agent`` if given.

    Returns ``(agent, training_log, buffer)``.
    """
    errs = config.validate()
    if errs:
        raise ValueError("; ".join(errs))
    agent = agent or TD3Agent(config, seed)
    log_ = log_ or TrainingLog(window=config.window)
    start = agent.episodes_done
    task_rng = np.random.default_rng(derive_seed(seed, f"tasks:{start}"))
    explore_rng = np.random.default_rng(derive_seed(seed, f"explore:{start}"))
    buffer = ReplayBuffer(config.buffer_capacity)
    norm = env.normalizer

    for ep in range(start, start + config.episodes):
        task = sample_task(task_rng)
        try:
            state = env.reset(task)
        except TaskError as exc:
            log.warning("episode %d skipped: %s", ep, exc)
            continue
        s = norm.normalize(state)
        ep_ret, steps, done, info = 0.0, 0, False, {}
        while not done:
            if agent.total_steps < config.warmup_steps:
                a = explore_rng.uniform(-1.0, 1.0, ACTION_DIM)
            else:
                a = agent.act(s, explore=True, rng=explore_rng)
            nxt, r, done, info = env.step(to_nav_action(a, env.max_distance))
            s2 = norm.normalize(nxt)
            terminal = done and not info["timeout"]
            buffer.add(Transition(s, a, r, s2, terminal))
            s = s2
            ep_ret += r
            steps += 1
            agent.total_steps += 1
            if agent.total_steps >= config.warmup_steps and len(buffer) >= config.batch_size:
                for _ in range(config.updates_per_step):
                    agent.update(buffer)
        agent.episodes_done = ep + 1
        log_.append(ep + 1, steps, ep_ret, bool(info.get("success", False)))
        if on_episode is not None:
            on_episode(agent, log_)
    return agent, log_, buffer


def greedy_policy(agent: TD3Agent, env: NavEnv):
    """Deterministic policy closure for evaluation rollouts."""
    def policy(state, _env=env):
        return to_nav_action(agent.act(env.normalizer.normalize(state)), env.max_distance)
    return policy
