"""Experiment drivers: training, policy comparison, load and class sweeps.

Every command writes CSV files into the output directory. Rows are ordered
by (policy, seed) with a ``mean`` row closing each policy block, and floats
are formatted with fixed precision so re-runs are byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .agent import AgentConfig, DdqnAgent, agent_config_from_dict, greedy_policy, train, write_train_log
from .baselines import FCFS, RR, SJF, run_episode
from .errors import ConfigError
from .sim import EnvConfig, MetricsReport, SchedulingEnv, env_config_from_dict, load_env_config
from .workload import (
    CLASS_ORDER, LoadLevel, TaskClass, Workload, WorkloadConfig, generate,
    load_workload_config, read_workload, single_class_config,
)

POLICY_NAMES = ("fcfs", "sjf", "rr", "ddqn")
BASELINES = {"fcfs": FCFS, "sjf": SJF, "rr": RR}
LOAD_ORDER = (LoadLevel.LIGHT, LoadLevel.MEDIUM, LoadLevel.HEAVY)

METRIC_FIELDS = ("mean_completion_ms", "throughput_tps", "mean_response_ms",
                 "cpu_util", "mem_util", "io_util", "n_completed", "n_total")
COMPARE_HEADER = ["policy", "load", "seed", *METRIC_FIELDS]
SCATTER_HEADER = ["policy", "load", "seed", "mean_completion_ms", "cpu_util"]
CLASS_HEADER = ["policy", "class", "seed", "mean_completion_ms", "mean_response_ms",
                "cpu_util", "mem_util", "io_ops", "n_completed", "n_total"]

TRAIN_LOG_FILE = "train_log.csv"
CHECKPOINT_FILE = "checkpoint.npz"
COMPARE_FILE = "compare.csv"
SWEEP_LOAD_FILE = "sweep_load.csv"
SWEEP_LOAD_SCATTER_FILE = "sweep_load_scatter.csv"
SWEEP_CLASS_FILE = "sweep_class.csv"


class Command(Enum):
    TRAIN = "train"
    COMPARE = "compare"
    SWEEP_LOAD = "sweep-load"
    SWEEP_CLASS = "sweep-class"


@dataclass
class TrainingConfig:
    """Episode framing for training; read from the ``training`` key of the agent file."""
    episodes: int = 2000
    episode_tasks: int = 50
    # training workloads use seeds seed_base + episode, disjoint from evaluation seeds
    seed_base: int = 1_000_000

    def validate(self) -> None:
        if self.episodes < 0:
            raise ConfigError("training.episodes: must be >= 0")
        if self.episode_tasks < 1:
            raise ConfigError("training.episode_tasks: must be >= 1")
        if self.seed_base < 0:
            raise ConfigError("training.seed_base: must be >= 0")


@dataclass
class ExperimentSpec:
    command: Command
    seeds: list[int]
    out_dir: Path
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    # a generator config, or a fixed workload replayed for every seed
    workload: WorkloadConfig | Workload = field(default_factory=WorkloadConfig)
    checkpoint: Path | None = None
    policy: str | None = None
    train_first: bool = False

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds: must be non-negative")
        if self.policy is not None and self.policy not in POLICY_NAMES:
            raise ConfigError(f"policy: expected one of {POLICY_NAMES}, got {self.policy!r}")
        self.env.validate()
        self.agent.validate()
        self.training.validate()

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint if self.checkpoint is not None else self.out_dir / CHECKPOINT_FILE


# -- config loading ------------------------------------------------------------


def load_agent_file(path) -> tuple[AgentConfig, TrainingConfig]:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    raw = dict(raw)
    training = raw.pop("training", None) or {}
    try:
        tcfg = TrainingConfig(**training)
    except TypeError as exc:
        raise ConfigError(f"training: {exc}") from None
    tcfg.validate()
    return agent_config_from_dict(raw), tcfg


def load_workload_source(source: str | None) -> WorkloadConfig | Workload:
    """``generated`` (or None) → default generator; ``.csv`` → fixed workload; else YAML config."""
    if source is None or source == "generated":
        return WorkloadConfig()
    if str(source).lower().endswith(".csv"):
        return read_workload(source)
    return load_workload_config(source)


def build_spec(command: str, seeds: Sequence[int], out_dir, env_path=None, agent_path=None,
               workload=None, episodes=None, checkpoint=None, policy=None,
               train_first=False) -> ExperimentSpec:
    env = load_env_config(env_path) if env_path else env_config_from_dict({})
    if agent_path:
        agent, training = load_agent_file(agent_path)
    else:
        agent, training = AgentConfig(), TrainingConfig()
    if episodes is not None:
        training = replace(training, episodes=int(episodes))
    try:
        cmd = Command(command)
    except ValueError:
        raise ConfigError(f"command: unknown command {command!r}") from None
    spec = ExperimentSpec(
        command=cmd, seeds=[int(s) for s in seeds], out_dir=Path(out_dir), env=env, agent=agent,
        training=training, workload=load_workload_source(workload),
        checkpoint=Path(checkpoint) if checkpoint else None, policy=policy, train_first=train_first,
    )
    spec.validate()
    return spec


# -- helpers -------------------------------------------------------------------


def prepare_out_dir(path: Path) -> None:
    """Create the directory and prove it is writable; raises OSError otherwise."""
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write_probe"
    with open(probe, "w") as fh:
        fh.write("")
    probe.unlink()


def workload_for(source: WorkloadConfig | Workload, seed: int, **overrides) -> Workload:
    if isinstance(source, Workload):
        return source
    return generate(replace(source, seed=seed, **overrides))


def load_label(source: WorkloadConfig | Workload) -> str:
    return "fixed" if isinstance(source, Workload) else source.load.value


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    vals = {f: float(np.mean([getattr(r, f) for r in reports])) for f in
            ("mean_completion_ms", "throughput_tps", "mean_response_ms", "cpu_util", "mem_util",
             "io_util", "n_completed", "n_total", "elapsed_ticks", "io_ops")}
    return MetricsReport(**vals)


def _fmt(value) -> str:
    return str(value) if isinstance(value, int) else f"{value:.6f}"


def _metric_cells(r: MetricsReport) -> list[str]:
    return [_fmt(getattr(r, f)) for f in METRIC_FIELDS]


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def resolve_policies(spec: ExperimentSpec) -> dict[str, Callable]:
    """Name → policy callable, in fixed order. DDQN needs a checkpoint."""
    names = [spec.policy] if spec.policy else list(POLICY_NAMES)
    policies: dict[str, Callable] = {}
    for name in names:
        if name == "ddqn":
            policies[name] = greedy_policy(load_trained_agent(spec))
        else:
            policy = BASELINES[name]
            policy.check(spec.env)
            policies[name] = policy
    return policies


def load_trained_agent(spec: ExperimentSpec) -> DdqnAgent:
    path = spec.checkpoint_path
    if not path.exists():
        if not spec.train_first:
            raise ConfigError(f"checkpoint: {path} not found (train first or pass --train)")
        return run_training(spec)[0]
    agent = DdqnAgent.load(path)
    if (agent.obs_dim, agent.n_actions) != (spec.env.obs_dim, spec.env.actions.n):
        raise ConfigError(
            f"checkpoint: network shape ({agent.obs_dim}, {agent.n_actions}) does not match "
            f"the environment ({spec.env.obs_dim}, {spec.env.actions.n})")
    return agent


def evaluate(policies: dict[str, Callable], env_config: EnvConfig,
             workloads: Sequence[tuple[int, Workload]]) -> dict[str, list[MetricsReport]]:
    """Run each policy on literally the same workload instances."""
    env = SchedulingEnv(env_config)
    return {name: [run_episode(p, w, env=env) for _, w in workloads] for name, p in policies.items()}


# -- commands ------------------------------------------------------------------


def run_training(spec: ExperimentSpec, on_episode=None):
    """Train a fresh agent; returns (agent, logs). Writes nothing."""
    env = SchedulingEnv(spec.env)
    source = spec.workload
    tcfg = spec.training
    if isinstance(source, Workload):
        factory = lambda ep: (env, source)
    else:
        factory = lambda ep: (env, generate(replace(source, seed=tcfg.seed_base + ep,
                                                    n_tasks=tcfg.episode_tasks)))
    agent = DdqnAgent(spec.agent, spec.env.obs_dim, spec.env.actions.n)
    logs = train(agent, factory, tcfg.episodes, on_episode)
    return agent, logs


def cmd_train(spec: ExperimentSpec, on_episode=None) -> dict[str, Path]:
    prepare_out_dir(spec.out_dir)
    ckpt = spec.checkpoint_path
    prepare_out_dir(ckpt.parent)
    agent, logs = run_training(spec, on_episode)
    log_path = spec.out_dir / TRAIN_LOG_FILE
    write_train_log(log_path, logs)
    agent.save(ckpt)
    return {"train_log": log_path, "checkpoint": ckpt}


def cmd_compare(spec: ExperimentSpec) -> dict[str, Path]:
    prepare_out_dir(spec.out_dir)
    policies = resolve_policies(spec)
    label = load_label(spec.workload)
    workloads = [(s, workload_for(spec.workload, s)) for s in spec.seeds]
    results = evaluate(policies, spec.env, workloads)
    rows = []
    for name, reports in results.items():
        for (seed, _), r in zip(workloads, reports):
            rows.append([name, label, str(seed), *_metric_cells(r)])
        rows.append([name, label, "mean", *_metric_cells(mean_report(reports))])
    path = spec.out_dir / COMPARE_FILE
    _write_csv(path, COMPARE_HEADER, rows)
    return {"compare": path}


def cmd_sweep_load(spec: ExperimentSpec) -> dict[str, Path]:
    if isinstance(spec.workload, Workload):
        raise ConfigError("workload: the load sweep needs a generator config, not a fixed workload")
    prepare_out_dir(spec.out_dir)
    policies = resolve_policies(spec)
    rows, scatter = [], []
    per_load = {}
    for level in LOAD_ORDER:
        workloads = [(s, generate(replace(spec.workload, load=level, seed=s, n_tasks=None,
                                          mean_interarrival=None))) for s in spec.seeds]
        per_load[level] = evaluate(policies, spec.env, workloads)
    for name in policies:
        for level in LOAD_ORDER:
            reports = per_load[level][name]
            for seed, r in zip(spec.seeds, reports):
                rows.append([name, level.value, str(seed), *_metric_cells(r)])
                scatter.append([name, level.value, str(seed), _fmt(r.mean_completion_ms), _fmt(r.cpu_util)])
            rows.append([name, level.value, "mean", *_metric_cells(mean_report(reports))])
    main_path = spec.out_dir / SWEEP_LOAD_FILE
    scatter_path = spec.out_dir / SWEEP_LOAD_SCATTER_FILE
    _write_csv(main_path, COMPARE_HEADER, rows)
    _write_csv(scatter_path, SCATTER_HEADER, scatter)
    return {"sweep_load": main_path, "scatter": scatter_path}


def cmd_sweep_class(spec: ExperimentSpec) -> dict[str, Path]:
    if isinstance(spec.workload, Workload):
        raise ConfigError("workload: the class sweep needs a generator config, not a fixed workload")
    prepare_out_dir(spec.out_dir)
    policies = resolve_policies(spec)
    base = spec.workload
    per_class = {}
    for cls in CLASS_ORDER:
        cfg = single_class_config(cls, load=base.load, n_tasks=base.n_tasks,
                                  mean_interarrival=base.mean_interarrival,
                                  class_params=base.class_params, mem_max=base.mem_max, rng=base.rng)
        workloads = [(s, generate(replace(cfg, seed=s))) for s in spec.seeds]
        per_class[cls] = evaluate(policies, spec.env, workloads)
    rows = []
    for name in policies:
        for cls in CLASS_ORDER:
            reports = per_class[cls][name]
            for seed, r in zip(spec.seeds, reports):
                rows.append(_class_row(name, cls, str(seed), r))
            rows.append(_class_row(name, cls, "mean", mean_report(reports)))
    path = spec.out_dir / SWEEP_CLASS_FILE
    _write_csv(path, CLASS_HEADER, rows)
    return {"sweep_class": path}


def _class_row(policy: str, cls: TaskClass, seed: str, r: MetricsReport) -> list[str]:
    return [policy, cls.value, seed, _fmt(r.mean_completion_ms), _fmt(r.mean_response_ms),
            _fmt(r.cpu_util), _fmt(r.mem_util), _fmt(r.io_ops), _fmt(r.n_completed), _fmt(r.n_total)]


COMMANDS = {
    Command.TRAIN: cmd_train,
    Command.COMPARE: cmd_compare,
    Command.SWEEP_LOAD: cmd_sweep_load,
    Command.SWEEP_CLASS: cmd_sweep_class,
}


def run(spec: ExperimentSpec) -> dict[str, Path]:
    return COMMANDS[spec.command](spec)


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [dict(zip(header, row)) for row in reader]
