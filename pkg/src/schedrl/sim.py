"""Event-compressed OS scheduling environment.

Time is measured in integer ticks (1 tick = 1 ms). Each call to
:meth:`SchedulingEnv.step` applies one scheduling action and then jumps the
clock to the next decision point: a burst completion, a quantum expiry, an
IO completion or an arrival.

Task lifecycle::

    pending -> mem_wait -> ready <-> running -> (io_wait -> in IO -> ready)* -> finished

Memory is reserved when a task is admitted (FIFO, at arrival or as soon as
enough memory is released) and held until the task finishes, so every task
in the ready queue can be dispatched as soon as a core is free. Tasks that
wait for memory or for IO are reported in the ``blocked`` lifecycle set.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, StateError
from .workload import P_MAX, TaskClass, TaskSpec, Workload

SLOT_FEATURES = 8
GLOBAL_FEATURES = 5
METRICS_HEADER = [
    "policy", "load", "mean_completion_ms", "throughput_tps", "mean_response_ms",
    "cpu_util", "mem_util", "io_util", "n_completed", "n_total",
]


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ActionSpace:
    """Dispatch actions ``(slot, quantum)`` followed by one boost action.

    Index ``slot * len(quanta) + i`` dispatches the ``slot``-th ready task
    with ``quanta[i]``; the last index declines to dispatch. If a core is
    free it also boosts the longest-waiting ready task; with no free core or
    an empty queue it is a plain no-op.
    """

    K: int = 8
    quanta: tuple[int, ...] = (2, 8, 32)

    @property
    def n(self) -> int:
        return self.K * len(self.quanta) + 1

    @property
    def boost(self) -> int:
        return self.n - 1

    def decode(self, action: int) -> tuple[int | None, int | None]:
        """Return ``(slot, quantum)``, or ``(None, None)`` for the boost action."""
        if not 0 <= action < self.n:
            raise ValueError(f"action {action} outside [0, {self.n})")
        if action == self.boost:
            return None, None
        slot, qi = divmod(action, len(self.quanta))
        return slot, self.quanta[qi]

    def index(self, slot: int, quantum: int) -> int:
        return slot * len(self.quanta) + self.quanta.index(quantum)


@dataclass(frozen=True)
class RewardWeights:
    a1: float = 1.0
    a2: float = 0.5
    a3: float = -0.5


@dataclass(frozen=True)
class EnvConfig:
    cores: int = 1
    mem_capacity: int = 100
    io_channels: int = 4
    K: int = 8
    quanta: tuple[int, ...] = (2, 8, 32)
    reward: RewardWeights = RewardWeights()
    # None means "derive from the workload at reset"
    work_norm: float | None = None
    t_norm: float | None = None
    r_norm: float | None = None
    io_norm: float = 8.0
    wait_norm: float = 200.0
    qlen_norm: float = 64.0
    load_norm: float = 32.0
    tick_limit: int = 60_000
    # ticks an idle step advances when no event is pending (None = largest quantum)
    idle_advance: int | None = None
    # "accrual": T and R accumulate over each step's elapsed time;
    # "completion": credited in full on the step a task completes / first runs
    reward_credit: str = "accrual"
    check_invariants: bool = False

    @property
    def actions(self) -> ActionSpace:
        return ActionSpace(self.K, tuple(self.quanta))

    @property
    def obs_dim(self) -> int:
        return self.K * SLOT_FEATURES + GLOBAL_FEATURES

    def validate(self) -> None:
        for name in ("cores", "io_channels", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be a positive integer")
        if self.mem_capacity <= 0:
            raise ConfigError("mem_capacity: must be > 0")
        if not self.quanta or any(q < 1 for q in self.quanta) or list(self.quanta) != sorted(set(self.quanta)):
            raise ConfigError("quanta: must be a non-empty strictly increasing list of positive ticks")
        for name in ("a1", "a2", "a3"):
            if not math.isfinite(getattr(self.reward, name)):
                raise ConfigError(f"reward.{name}: must be finite")
        for name in ("work_norm", "t_norm", "r_norm", "io_norm", "wait_norm", "qlen_norm", "load_norm"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name}: must be > 0")
        if self.tick_limit < 0:
            raise ConfigError("tick_limit: must be >= 0")
        if self.idle_advance is not None and self.idle_advance < 1:
            raise ConfigError("idle_advance: must be a positive number of ticks")
        if self.reward_credit not in ("accrual", "completion"):
            raise ConfigError("reward_credit: expected 'accrual' or 'completion'")


_ENV_KEYS = {f.name for f in fields(EnvConfig)} - {"reward"}


def env_config_from_dict(raw: dict) -> EnvConfig:
    raw = dict(raw or {})
    kwargs = {}
    weights = raw.pop("reward_weights", None)
    if weights is not None:
        if len(weights) != 3:
            raise ConfigError("reward_weights: expected [a1, a2, a3]")
        kwargs["reward"] = RewardWeights(*(float(w) for w in weights))
    for key, value in raw.items():
        if key not in _ENV_KEYS:
            raise ConfigError(f"{key}: unknown env config key")
        if key == "quanta":
            value = tuple(int(q) for q in value)
        kwargs[key] = value
    cfg = replace(EnvConfig(), **kwargs)
    cfg.validate()
    return cfg


def load_env_config(path) -> EnvConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return env_config_from_dict(raw)


def env_config_to_dict(cfg: EnvConfig) -> dict:
    d = asdict(cfg)
    d.pop("reward")
    d["quanta"] = list(cfg.quanta)
    d["reward_weights"] = [cfg.reward.a1, cfg.reward.a2, cfg.reward.a3]
    return d


@dataclass(frozen=True)
class Norms:
    work: float
    completion: float
    response: float


def resolve_norms(cfg: EnvConfig, workload: Workload) -> Norms:
    mean_work = max(workload.mean_cpu_work(), 1.0)
    mean_gap = max(workload.mean_interarrival(), 1.0)
    return Norms(
        work=cfg.work_norm or 4.0 * mean_work,
        completion=cfg.t_norm or 10.0 * mean_work,
        response=cfg.r_norm or 5.0 * mean_gap,
    )


# -- state -------------------------------------------------------------------


@dataclass
class ResourcePool:
    cpu_cores: int
    mem_capacity: int
    io_channels: int
    free_cores: int = 0
    free_mem: int = 0
    free_io: int = 0

    def __post_init__(self):
        self.free_cores = self.cpu_cores
        self.free_mem = self.mem_capacity
        self.free_io = self.io_channels


@dataclass(slots=True)
class TaskRun:
    """Per-task bookkeeping inside the simulator."""

    spec: TaskSpec
    bursts: list[int]
    cpu_remaining: int
    io_left: int
    priority: int
    wait: int = 0
    first_dispatch: int | None = None
    finish: int | None = None
    cpu_used: int = 0
    dispatches: int = 0

    @classmethod
    def from_spec(cls, spec: TaskSpec) -> "TaskRun":
        m = spec.io_ops + 1
        base, extra = divmod(spec.cpu_work, m)
        bursts = [base + (1 if i < extra else 0) for i in range(m)]
        return cls(spec, bursts, spec.cpu_work, spec.io_ops, spec.priority)


@dataclass(slots=True)
class RunSlot:
    task_id: int
    core: int
    quantum_left: int


@dataclass
class SystemState:
    config: EnvConfig
    norms: Norms
    pool: ResourcePool
    tasks: dict[int, TaskRun]
    pending: deque[int]
    clock: int = 0
    mem_wait: deque[int] = field(default_factory=deque)
    ready: list[int] = field(default_factory=list)
    running: list[RunSlot] = field(default_factory=list)
    in_io: dict[int, int] = field(default_factory=dict)
    io_wait: deque[int] = field(default_factory=deque)
    finished: list[int] = field(default_factory=list)
    done: bool = False
    busy_core_ticks: int = 0
    mem_ticks: int = 0
    io_ticks: int = 0
    io_ops_done: int = 0
    n_arrived: int = 0
    n_started: int = 0
    # task-ticks accrued during the current step (reward accrual mode)
    step_in_system: int = 0
    step_unstarted: int = 0

    @property
    def blocked(self) -> list[int]:
        """Tasks waiting on memory admission, an IO channel, or an IO burst."""
        return list(self.mem_wait) + list(self.io_wait) + list(self.in_io)

    def lifecycle(self) -> dict[str, list[int]]:
        return {
            "pending": list(self.pending),
            "ready": list(self.ready),
            "running": [r.task_id for r in self.running],
            "blocked": self.blocked,
            "finished": list(self.finished),
        }

    @property
    def mem_used(self) -> int:
        return self.pool.mem_capacity - self.pool.free_mem

    def check_invariants(self) -> None:
        """Raise AssertionError on any resource or lifecycle violation."""
        pool = self.pool
        assert 0 <= pool.free_cores <= pool.cpu_cores, "core counter out of range"
        assert 0 <= pool.free_mem <= pool.mem_capacity, "memory counter out of range"
        assert 0 <= pool.free_io <= pool.io_channels, "io counter out of range"
        assert len(self.running) + pool.free_cores == pool.cpu_cores, "core leak"
        assert len({r.core for r in self.running}) == len(self.running), "core shared"
        assert len(self.in_io) + pool.free_io == pool.io_channels, "io channel leak"

        sets = self.lifecycle()
        seen: dict[int, str] = {}
        for name, ids in sets.items():
            for tid in ids:
                assert tid not in seen, f"task {tid} in both {seen[tid]} and {name}"
                seen[tid] = name
        assert set(seen) == set(self.tasks), "task missing from lifecycle sets"

        held = [tid for tid in self.tasks if seen[tid] in ("ready", "running")]
        held += list(self.io_wait) + list(self.in_io)
        assert sum(self.tasks[t].spec.mem_demand for t in held) == self.mem_used, "memory accounting"
        assert self.mem_used <= pool.mem_capacity

        for tid in self.finished:
            run = self.tasks[tid]
            assert run.cpu_used == run.spec.cpu_work, f"task {tid} cpu ticks not conserved"


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_components: tuple[float, float, float]
    done: bool
    info: dict


@dataclass(frozen=True)
class MetricsReport:
    mean_completion_ms: float
    throughput_tps: float
    mean_response_ms: float
    cpu_util: float
    mem_util: float
    io_util: float
    n_completed: int
    n_total: int
    elapsed_ticks: int = 0
    io_ops: int = 0

    def csv_row(self, policy: str, load: str) -> list[str]:
        return [
            policy, load,
            f"{self.mean_completion_ms:.6f}", f"{self.throughput_tps:.6f}", f"{self.mean_response_ms:.6f}",
            f"{self.cpu_util:.6f}", f"{self.mem_util:.6f}", f"{self.io_util:.6f}",
            str(self.n_completed), str(self.n_total),
        ]


def write_metrics_csv(path, rows: list[tuple[str, str, MetricsReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for policy, load, report in rows:
            writer.writerow(report.csv_row(policy, load))


# -- pure functions over state ----------------------------------------------


def compute_reward(U: float, T: float, R: float, w: RewardWeights) -> float:
    return w.a1 * U - w.a2 * T + w.a3 * R


def encode_state(s: SystemState) -> np.ndarray:
    """Fixed-length observation, every feature clipped to [0, 1].

    Per candidate slot: occupied, remaining cpu work, memory demand,
    remaining IO bursts, effective priority, accumulated wait, cpu-bound
    flag, io-bound flag (memory-bound is both flags zero). Global tail:
    queue length, cpu / memory / io utilisation, and load.
    """
    cfg = s.config
    pool = s.pool
    feats: list[float] = []
    tasks = s.tasks
    for tid in s.ready[: cfg.K]:
        run = tasks[tid]
        spec = run.spec
        cls = spec.task_class
        feats += (
            1.0,
            run.cpu_remaining / s.norms.work,
            spec.mem_demand / pool.mem_capacity,
            run.io_left / cfg.io_norm,
            run.priority / P_MAX,
            run.wait / cfg.wait_norm,
            1.0 if cls is TaskClass.CPU_BOUND else 0.0,
            1.0 if cls is TaskClass.IO_BOUND else 0.0,
        )
    feats += [0.0] * (cfg.K * SLOT_FEATURES - len(feats))
    n_run = len(s.running)
    feats += (
        len(s.ready) / cfg.qlen_norm,
        n_run / pool.cpu_cores,
        s.mem_used / pool.mem_capacity,
        len(s.in_io) / pool.io_channels,
        (len(s.ready) + n_run) / cfg.load_norm,
    )
    return np.minimum(np.asarray(feats, dtype=np.float64), 1.0)


def legal_action_mask(s: SystemState) -> np.ndarray:
    space = s.config.actions
    mask = np.zeros(space.n, dtype=bool)
    if s.pool.free_cores > 0:
        nq = len(space.quanta)
        mask[: min(space.K, len(s.ready)) * nq] = True
    mask[space.boost] = True
    return mask


def finalize_metrics(s: SystemState) -> MetricsReport:
    if not s.done:
        raise StateError("finalize_metrics called before the episode is done")
    done = [s.tasks[t] for t in s.finished]
    n_done = len(done)
    elapsed = s.clock
    if n_done:
        completion = sum(r.finish - r.spec.arrival for r in done) / n_done
        response = sum(r.first_dispatch - r.spec.arrival for r in done) / n_done
    else:
        completion = response = 0.0
    pool = s.pool
    if elapsed > 0:
        cpu = s.busy_core_ticks / (pool.cpu_cores * elapsed)
        mem = s.mem_ticks / (pool.mem_capacity * elapsed)
        io = s.io_ticks / (pool.io_channels * elapsed)
        tput = n_done / (elapsed / 1000.0)
    else:
        cpu = mem = io = tput = 0.0
    return MetricsReport(
        mean_completion_ms=completion,
        throughput_tps=tput,
        mean_response_ms=response,
        cpu_util=cpu,
        mem_util=mem,
        io_util=io,
        n_completed=n_done,
        n_total=len(s.tasks),
        elapsed_ticks=elapsed,
        io_ops=s.io_ops_done,
    )


# -- environment -------------------------------------------------------------


class SchedulingEnv:
    """Single-threaded simulator instance; reuse across episodes via reset."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.actions = self.config.actions
        self.state: SystemState | None = None

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.done

    def reset(self, workload: Workload) -> np.ndarray:
        cfg = self.config
        for spec in workload:
            if spec.mem_demand > cfg.mem_capacity:
                raise ConfigError(
                    f"mem_capacity: task {spec.id} demands {spec.mem_demand} > capacity {cfg.mem_capacity}"
                )
        tasks = {spec.id: TaskRun.from_spec(spec) for spec in workload}
        order = sorted(tasks, key=lambda t: (tasks[t].spec.arrival, t))
        self.state = SystemState(
            config=cfg,
            norms=resolve_norms(cfg, workload),
            pool=ResourcePool(cfg.cores, cfg.mem_capacity, cfg.io_channels),
            tasks=tasks,
            pending=deque(order),
        )
        self._process_events([])
        return encode_state(self.state)

    def observation(self) -> np.ndarray:
        return encode_state(self.state)

    def mask(self) -> np.ndarray:
        return legal_action_mask(self.state)

    def metrics(self) -> MetricsReport:
        return finalize_metrics(self.state)

    def forced_action(self) -> int | None:
        """The only legal action if the current decision point has no choice."""
        s = self.state
        if s.pool.free_cores > 0 and s.ready:
            return None
        return self.actions.boost

    def step(self, action: int) -> StepOutcome:
        s = self.state
        if s is None:
            raise StateError("step called before reset")
        if s.done:
            raise StateError("step called on a finished episode")
        slot, quantum = self.actions.decode(int(action))
        pool = s.pool
        dispatched: list[int] = []
        completed: list[int] = []
        first: list[int] = []

        s.step_in_system = s.step_unstarted = 0
        if quantum is not None:
            if slot < len(s.ready) and pool.free_cores > 0:
                tid = s.ready.pop(slot)
                self._dispatch(tid, quantum, first)
                dispatched.append(tid)
        elif s.ready and pool.free_cores > 0:
            self._boost()

        U = len(s.running) / pool.cpu_cores
        busy_before = s.busy_core_ticks
        if not (dispatched and s.ready and pool.free_cores > 0):
            self._advance(self._next_event_time(), completed)

        tasks = s.tasks
        if s.config.reward_credit == "accrual":
            U = (s.busy_core_ticks - busy_before) / (pool.cpu_cores * s.norms.completion)
            T = s.step_in_system / s.norms.completion
            R = s.step_unstarted / s.norms.response
        else:
            T = sum(tasks[t].finish - tasks[t].spec.arrival for t in completed) / s.norms.completion
            R = sum(tasks[t].first_dispatch - tasks[t].spec.arrival for t in first) / s.norms.response
        reward = compute_reward(U, T, R, s.config.reward)

        s.done = len(s.finished) == len(tasks) or s.clock >= s.config.tick_limit
        assert len(s.running) <= pool.cpu_cores and s.mem_used <= pool.mem_capacity
        if s.config.check_invariants:
            s.check_invariants()
        info = {"clock": s.clock, "dispatched": dispatched, "completed": completed}
        return StepOutcome(encode_state(s), reward, (U, T, R), s.done, info)

    # -- internals

    def _dispatch(self, tid: int, quantum: int, first: list[int]) -> None:
        s = self.state
        used = {r.core for r in s.running}
        core = next(c for c in range(s.pool.cpu_cores) if c not in used)
        s.running.append(RunSlot(tid, core, quantum))
        s.pool.free_cores -= 1
        run = s.tasks[tid]
        run.dispatches += 1
        if run.first_dispatch is None:
            run.first_dispatch = s.clock
            s.n_started += 1
            first.append(tid)

    def _boost(self) -> None:
        s = self.state
        tasks = s.tasks
        pos = max(range(len(s.ready)), key=lambda i: (tasks[s.ready[i]].wait, -i))
        tid = s.ready.pop(pos)
        run = tasks[tid]
        run.priority = min(P_MAX, run.priority + 1)
        s.ready.insert(0, tid)

    def _next_event_time(self) -> int:
        s = self.state
        times = [s.clock + min(r.quantum_left, s.tasks[r.task_id].bursts[0]) for r in s.running]
        times += [s.clock + left for left in s.in_io.values()]
        if s.pending:
            times.append(s.tasks[s.pending[0]].spec.arrival)
        if times:
            t = min(times)
        elif len(s.finished) == len(s.tasks):
            t = s.clock
        else:
            # ready work exists but the policy left every core idle
            t = s.clock + (s.config.idle_advance or s.config.quanta[-1])
        return min(t, max(s.config.tick_limit, s.clock))

    def _advance(self, t_next: int, completed: list[int]) -> None:
        s = self.state
        dt = t_next - s.clock
        if dt <= 0:
            return
        tasks = s.tasks
        s.busy_core_ticks += len(s.running) * dt
        s.mem_ticks += s.mem_used * dt
        s.io_ticks += len(s.in_io) * dt
        s.step_in_system += (s.n_arrived - len(s.finished)) * dt
        s.step_unstarted += (s.n_arrived - s.n_started) * dt
        for r in s.running:
            run = tasks[r.task_id]
            run.bursts[0] -= dt
            run.cpu_remaining -= dt
            run.cpu_used += dt
            r.quantum_left -= dt
        for tid in s.in_io:
            s.in_io[tid] -= dt
        for tid in s.ready:
            tasks[tid].wait += dt
        s.clock = t_next
        self._process_events(completed)

    def _process_events(self, completed: list[int]) -> None:
        # same-tick order: burst ends, IO ends, arrivals/admissions, preemptions
        s = self.state
        tasks = s.tasks
        pool = s.pool
        preempted = []
        still = []
        for r in s.running:
            run = tasks[r.task_id]
            if run.bursts[0] == 0:
                run.bursts.pop(0)
                pool.free_cores += 1
                if run.bursts:
                    s.io_wait.append(r.task_id)
                else:
                    run.finish = s.clock
                    s.finished.append(r.task_id)
                    pool.free_mem += run.spec.mem_demand
                    completed.append(r.task_id)
            elif r.quantum_left == 0:
                pool.free_cores += 1
                preempted.append(r.task_id)
            else:
                still.append(r)
        s.running = still

        if s.in_io:
            for tid in [t for t, left in s.in_io.items() if left == 0]:
                del s.in_io[tid]
                pool.free_io += 1
                tasks[tid].io_left -= 1
                s.io_ops_done += 1
                s.ready.append(tid)
        while s.io_wait and pool.free_io > 0:
            tid = s.io_wait.popleft()
            s.in_io[tid] = tasks[tid].spec.io_burst_len
            pool.free_io -= 1

        while s.pending and tasks[s.pending[0]].spec.arrival <= s.clock:
            s.mem_wait.append(s.pending.popleft())
            s.n_arrived += 1
        while s.mem_wait and tasks[s.mem_wait[0]].spec.mem_demand <= pool.free_mem:
            tid = s.mem_wait.popleft()
            pool.free_mem -= tasks[tid].spec.mem_demand
            s.ready.append(tid)

        s.ready.extend(preempted)
