"""Classical scheduling policies expressed over the simulator's action space."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError
from .sim import EnvConfig, MetricsReport, SchedulingEnv, SystemState, legal_action_mask
from .workload import Workload

Policy = Callable[[SystemState, np.ndarray, np.ndarray], int]


class PolicyKind(Enum):
    FCFS = "fcfs"
    SJF = "sjf"
    RR = "rr"


@dataclass(frozen=True)
class BaselinePolicy:
    kind: PolicyKind
    rr_quantum: int = 8

    @property
    def name(self) -> str:
        return self.kind.value

    def check(self, config: EnvConfig) -> None:
        if self.kind is PolicyKind.RR and self.rr_quantum not in config.quanta:
            raise ConfigError(f"rr_quantum: {self.rr_quantum} not in quanta {tuple(config.quanta)}")

    def __call__(self, state, obs=None, mask=None) -> int:
        return decide(self, state, mask)


def decide(policy: BaselinePolicy, s: SystemState, mask: np.ndarray | None = None) -> int:
    """Pick an action index for ``policy`` in state ``s``.

    Only tasks inside the candidate window are eligible, because those are
    the only ones an action can name. Returns the boost index, which never
    dispatches, when no dispatch is legal.
    """
    space = s.config.actions
    if mask is None:
        mask = legal_action_mask(s)
    nq = len(space.quanta)
    legal = [k for k in range(min(space.K, len(s.ready))) if mask[k * nq]]
    if not legal:
        return space.boost
    tasks = s.tasks
    kind = policy.kind
    if kind is PolicyKind.RR:
        return space.index(legal[0], policy.rr_quantum)
    if kind is PolicyKind.FCFS:
        key = lambda k: (tasks[s.ready[k]].spec.arrival, s.ready[k])
    else:
        key = lambda k: (tasks[s.ready[k]].cpu_remaining, tasks[s.ready[k]].spec.arrival, s.ready[k])
    return space.index(min(legal, key=key), space.quanta[-1])


def run_episode(policy: Policy, workload: Workload, env_config: EnvConfig | None = None,
                env: SchedulingEnv | None = None, trace: list | None = None) -> MetricsReport:
    """Drive one episode to completion and return its metrics.

    ``policy`` is called as ``policy(state, observation, mask)``. When
    ``trace`` is given, each step's info dict is appended to it.
    """
    env = env or SchedulingEnv(env_config)
    obs = env.reset(workload)
    done = False
    while not done:
        mask = env.mask()
        out = env.step(policy(env.state, obs, mask))
        obs, done = out.observation, out.done
        if trace is not None:
            trace.append(out.info)
    return env.metrics()


def run_policy(policy: BaselinePolicy, workload: Workload, env_config: EnvConfig | None = None,
               trace: list | None = None) -> MetricsReport:
    env_config = env_config or EnvConfig()
    policy.check(env_config)
    return run_episode(policy, workload, env_config, trace=trace)


FCFS = BaselinePolicy(PolicyKind.FCFS)
SJF = BaselinePolicy(PolicyKind.SJF)
RR = BaselinePolicy(PolicyKind.RR)
