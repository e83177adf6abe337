"""Double DQN agent: epsilon-greedy acting, replay, decoupled targets."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import nn
from .errors import ConfigError, NumericError, SchedRLError, StateError
from .sim import MetricsReport, SchedulingEnv
from .workload import Workload

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = [
    "episode", "loss_mean", "reward_sum", "epsilon",
    "mean_completion_ms", "throughput_tps", "mean_response_ms",
]


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    mask_next: np.ndarray | None = None


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    mask_next: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def from_transitions(cls, ts: list[Transition]) -> "Batch":
        n_actions = None
        for t in ts:
            if t.mask_next is not None:
                n_actions = len(t.mask_next)
        masks = [t.mask_next if t.mask_next is not None else np.ones(n_actions or 1, bool) for t in ts]
        return cls(
            s=np.array([t.s for t in ts], dtype=np.float64),
            a=np.array([t.a for t in ts], dtype=np.int64),
            r=np.array([t.r for t in ts], dtype=np.float64),
            s_next=np.array([t.s_next for t in ts], dtype=np.float64),
            done=np.array([t.done for t in ts], dtype=bool),
            mask_next=np.array(masks, dtype=bool) if n_actions else None,
        )


class ReplayBuffer:
    """Fixed-capacity ring of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        if capacity < 1:
            raise ConfigError("buffer_capacity: must be positive")
        self.capacity = capacity
        self.inserts = 0
        self._s = np.zeros((capacity, obs_dim))
        self._s_next = np.zeros((capacity, obs_dim))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._done = np.zeros(capacity, dtype=bool)
        self._mask = np.ones((capacity, n_actions), dtype=bool)

    def __len__(self) -> int:
        return min(self.inserts, self.capacity)

    def store(self, t: Transition) -> None:
        i = self.inserts % self.capacity
        self._s[i] = t.s
        self._s_next[i] = t.s_next
        self._a[i] = t.a
        self._r[i] = t.r
        self._done[i] = t.done
        self._mask[i] = True if t.mask_next is None else t.mask_next
        self.inserts += 1

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s_next[idx],
                     self._done[idx], self._mask[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if len(self) < batch_size or batch_size < 1:
            raise StateError(f"cannot sample {batch_size} from a buffer of {len(self)}")
        return self._gather(rng.integers(0, len(self), size=batch_size))

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        n = len(self)
        start = self.inserts - n
        out = []
        for k in range(start, self.inserts):
            i = k % self.capacity
            out.append(Transition(self._s[i].copy(), int(self._a[i]), float(self._r[i]),
                                  self._s_next[i].copy(), bool(self._done[i]), self._mask[i].copy()))
        return out


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    batch_size: int = 64
    buffer_capacity: int = 50_000
    target_sync_period: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20_000
    train_start_size: int = 1000
    seed: int = 0
    hidden: tuple[int, ...] = (128, 64)
    # restrict the next-state argmax/max to legal actions
    mask_targets: bool = True

    def validate(self) -> None:
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma: must be in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr: must be > 0")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ConfigError("eps_start/eps_end: need 0 <= eps_end <= eps_start <= 1")
        if self.target_sync_period < 1:
            raise ConfigError("target_sync_period: must be >= 1")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size: must be in [1, buffer_capacity]")
        if self.eps_decay_steps < 0:
            raise ConfigError("eps_decay_steps: must be >= 0")
        if self.train_start_size < 0:
            raise ConfigError("train_start_size: must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden: layer sizes must be positive")


def agent_config_from_dict(raw: dict) -> AgentConfig:
    known = {f.name for f in fields(AgentConfig)}
    kwargs = {}
    for key, value in (raw or {}).items():
        if key not in known:
            raise ConfigError(f"{key}: unknown agent config key")
        kwargs[key] = tuple(value) if key == "hidden" else value
    cfg = replace(AgentConfig(), **kwargs)
    cfg.validate()
    return cfg


def load_agent_config(path) -> AgentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return agent_config_from_dict(raw)


def epsilon_at(cfg: AgentConfig, step: int) -> float:
    """Linear decay from eps_start to eps_end, clamped after eps_decay_steps."""
    if step >= cfg.eps_decay_steps:
        return cfg.eps_end
    frac = step / cfg.eps_decay_steps
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def huber(err: np.ndarray, delta: float = 1.0) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


class DdqnAgent:
    def __init__(self, config: AgentConfig, obs_dim: int, n_actions: int):
        config.validate()
        self.config = config
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        sizes = (obs_dim, *config.hidden, n_actions)
        self.behavior = nn.init(sizes, config.seed)
        self.target = nn.clone(self.behavior)
        self.opt = nn.OptimizerState("adam", config.lr)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, n_actions)
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0
        self.env_steps = 0

    # -- acting

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return nn.forward(self.behavior, obs)

    def select_action(self, obs: np.ndarray, eps: float, mask: np.ndarray | None = None) -> int:
        if mask is None:
            mask = np.ones(self.n_actions, dtype=bool)
        legal = np.flatnonzero(mask)
        if legal.size == 0:
            raise ValueError("action mask has no legal action")
        if eps > 0 and self.rng.random() < eps:
            return int(legal[self.rng.integers(legal.size)])
        q = self.q_values(obs)
        return int(legal[np.argmax(q[legal])])

    # -- replay

    def store(self, t: Transition) -> None:
        self.buffer.store(t)

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> Batch:
        return self.buffer.sample(batch_size, self.rng if rng is None else rng)

    # -- learning

    def _next_values(self, batch: Batch, double: bool) -> np.ndarray:
        q_target = nn.forward(self.target, batch.s_next)
        use_mask = self.config.mask_targets and batch.mask_next is not None
        if double:
            q_sel = nn.forward(self.behavior, batch.s_next)
            if use_mask:
                q_sel = np.where(batch.mask_next, q_sel, -np.inf)
            best = np.argmax(q_sel, axis=1)
            return q_target[np.arange(len(best)), best]
        if use_mask:
            q_target = np.where(batch.mask_next, q_target, -np.inf)
        return q_target.max(axis=1)

    def _targets(self, batch: Batch, double: bool) -> np.ndarray:
        done = np.asarray(batch.done, dtype=bool)
        r = np.asarray(batch.r, dtype=np.float64)
        if done.all():
            return r.copy()
        v = self._next_values(batch, double)
        return np.where(done, r, r + self.config.gamma * np.where(done, 0.0, v))

    def compute_targets(self, batch: Batch) -> np.ndarray:
        """Double DQN: behavior net picks a*, target net scores it."""
        return self._targets(batch, double=True)

    def vanilla_targets(self, batch: Batch) -> np.ndarray:
        """Single-estimator target ``r + gamma * max_a Q_target``; comparison only."""
        return self._targets(batch, double=False)

    def td_update(self, batch: Batch) -> float:
        """One Huber-loss gradient step on the behavior net; returns the pre-update loss."""
        y = self.compute_targets(batch)
        cache = nn.forward_cache(self.behavior, batch.s)
        q = cache[-1]
        rows = np.arange(len(batch.a))
        err = q[rows, batch.a] - y
        loss = float(huber(err).mean())
        if not math.isfinite(loss):
            raise NumericError(f"non-finite TD loss {loss}")
        upstream = np.zeros_like(q)
        upstream[rows, batch.a] = np.clip(err, -1.0, 1.0) / len(rows)
        grads = nn.backward(self.behavior, batch.s, upstream, cache=cache)
        nn.apply_update(self.behavior, grads, self.opt)
        self.step_count += 1
        if self.step_count % self.config.target_sync_period == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        nn.copy_into(self.behavior, self.target)

    # -- persistence

    def save(self, path) -> None:
        cfg = asdict(self.config)
        cfg["hidden"] = list(self.config.hidden)
        nn.save_checkpoint(
            path, {"behavior": self.behavior, "target": self.target}, self.opt, self.step_count,
            {"agent": cfg, "obs_dim": self.obs_dim, "n_actions": self.n_actions, "env_steps": self.env_steps},
        )

    @classmethod
    def load(cls, path) -> "DdqnAgent":
        nets, opt, step_count, meta = nn.load_checkpoint(path)
        config = agent_config_from_dict(meta["agent"])
        agent = cls(config, meta["obs_dim"], meta["n_actions"])
        agent.behavior, agent.target = nets["behavior"], nets["target"]
        if opt is not None:
            agent.opt = opt
        agent.step_count = step_count
        agent.env_steps = meta.get("env_steps", 0)
        return agent


@dataclass
class EpisodeLog:
    episode: int
    loss_mean: float
    reward_sum: float
    epsilon: float
    metrics: MetricsReport

    def csv_row(self) -> list[str]:
        m = self.metrics
        return [str(self.episode), f"{self.loss_mean:.8f}", f"{self.reward_sum:.6f}", f"{self.epsilon:.6f}",
                f"{m.mean_completion_ms:.6f}", f"{m.throughput_tps:.6f}", f"{m.mean_response_ms:.6f}"]


def skip_forced(env: SchedulingEnv, obs: np.ndarray, done: bool) -> tuple[np.ndarray, float, bool]:
    """Step through decision points that offer no choice; return (obs, reward, done)."""
    total = 0.0
    while not done:
        a = env.forced_action()
        if a is None:
            break
        out = env.step(a)
        obs, done = out.observation, out.done
        total += out.reward
    return obs, total, done


def train(agent: DdqnAgent, env_factory: Callable[[int], tuple[SchedulingEnv, Workload]],
          episodes: int, on_episode: Callable[[EpisodeLog], None] | None = None) -> list[EpisodeLog]:
    """Run ``episodes`` training episodes; ``env_factory(i)`` supplies episode i's env and workload.

    Decision points with a single legal action are stepped automatically and
    folded into the preceding transition (rewards summed), so the buffer only
    holds real choices. One gradient step follows every stored transition once
    the buffer holds ``train_start_size`` of them. Episodes without any update
    log a NaN loss.
    """
    cfg = agent.config
    logs: list[EpisodeLog] = []
    for ep in range(episodes):
        env, workload = env_factory(ep)
        try:
            obs = env.reset(workload)
            losses: list[float] = []
            obs, reward_sum, done = skip_forced(env, obs, False)
            mask = env.mask()
            while not done:
                eps = epsilon_at(cfg, agent.env_steps)
                a = agent.select_action(obs, eps, mask)
                out = env.step(a)
                obs_next, r_extra, done = skip_forced(env, out.observation, out.done)
                r = out.reward + r_extra
                mask_next = env.mask()
                agent.store(Transition(obs, a, r, obs_next, done, mask_next))
                agent.env_steps += 1
                reward_sum += r
                if len(agent.buffer) >= max(cfg.train_start_size, cfg.batch_size):
                    losses.append(agent.td_update(agent.sample(cfg.batch_size)))
                obs, mask = obs_next, mask_next
            metrics = env.metrics()
        except SchedRLError as exc:
            raise type(exc)(f"episode {ep}: {exc}") from exc
        entry = EpisodeLog(
            episode=ep,
            loss_mean=float(np.mean(losses)) if losses else float("nan"),
            reward_sum=reward_sum,
            epsilon=epsilon_at(cfg, agent.env_steps),
            metrics=metrics,
        )
        logs.append(entry)
        if on_episode is not None:
            on_episode(entry)
    return logs


def smoothed_loss(logs: list[EpisodeLog], episode: int, window: int = 20) -> float:
    """Mean loss over the ``window`` episodes ending at 1-based ``episode``.

    Episodes without a gradient update (NaN loss) are skipped; NaN if none remain.
    """
    if not 1 <= episode <= len(logs):
        raise ValueError(f"episode {episode} outside 1..{len(logs)}")
    vals = [e.loss_mean for e in logs[max(0, episode - window):episode] if math.isfinite(e.loss_mean)]
    return float(np.mean(vals)) if vals else float("nan")


def write_train_log(path, logs: list[EpisodeLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_HEADER)
        for entry in logs:
            writer.writerow(entry.csv_row())


def greedy_policy(agent: DdqnAgent):
    """Deployed epsilon=0 policy in the ``policy(state, obs, mask)`` form."""
    def act(state, obs, mask):
        legal = np.flatnonzero(mask)
        if legal.size == 1:
            return int(legal[0])
        return agent.select_action(obs, 0.0, mask)
    return act
