"""Synthetic task workloads: generation, load profiles and CSV round-tripping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ParseError, ValidationError

P_MAX = 7
CSV_HEADER = ["id", "class", "arrival", "cpu_work", "mem_demand", "io_ops", "io_burst_len", "priority"]
SUPPORTED_RNGS = ("pcg64",)


class TaskClass(Enum):
    CPU_BOUND = "cpu"
    MEMORY_BOUND = "mem"
    IO_BOUND = "io"


CLASS_ORDER = (TaskClass.CPU_BOUND, TaskClass.MEMORY_BOUND, TaskClass.IO_BOUND)


class LoadLevel(Enum):
    LIGHT = "light"
    MEDIUM = "medium"
    HEAVY = "heavy"


@dataclass(frozen=True)
class LoadProfile:
    mean_interarrival: float
    n_tasks: int


_LOAD_PROFILES = {
    LoadLevel.LIGHT: LoadProfile(40.0, 200),
    LoadLevel.MEDIUM: LoadProfile(20.0, 400),
    LoadLevel.HEAVY: LoadProfile(10.0, 800),
}


def load_profile(level: LoadLevel) -> LoadProfile:
    """Mean inter-arrival time (ticks) and default task count for a load level."""
    return _LOAD_PROFILES[LoadLevel(level)]


@dataclass(frozen=True)
class ClassParams:
    """Attribute distributions for one task class.

    cpu_work and mem_demand are rounded log-normals parameterised by their
    mean and log-space standard deviation; io_ops is Poisson.
    """

    cpu_mean: float
    mem_mean: float
    io_mean: float
    io_burst: int
    cpu_sigma: float = 0.5
    mem_sigma: float = 0.5


DEFAULT_CLASS_PARAMS: dict[TaskClass, ClassParams] = {
    TaskClass.CPU_BOUND: ClassParams(cpu_mean=30.0, mem_mean=10.0, io_mean=0.5, io_burst=2),
    TaskClass.MEMORY_BOUND: ClassParams(cpu_mean=15.0, mem_mean=40.0, io_mean=1.0, io_burst=2),
    TaskClass.IO_BOUND: ClassParams(cpu_mean=8.0, mem_mean=10.0, io_mean=6.0, io_burst=5),
}

DEFAULT_CLASS_MIX = (0.25, 0.35, 0.4)


@dataclass(frozen=True)
class TaskSpec:
    id: int
    task_class: TaskClass
    arrival: int
    cpu_work: int
    mem_demand: int
    io_ops: int
    io_burst_len: int
    priority: int

    def validate(self) -> None:
        if self.id < 0:
            raise ValidationError(f"task {self.id}: id must be non-negative")
        if self.arrival < 0:
            raise ValidationError(f"task {self.id}: arrival must be >= 0")
        if self.cpu_work < 1:
            raise ValidationError(f"task {self.id}: cpu_work must be >= 1")
        if self.mem_demand < 0:
            raise ValidationError(f"task {self.id}: mem_demand must be >= 0")
        if self.io_ops < 0:
            raise ValidationError(f"task {self.id}: io_ops must be >= 0")
        if (self.io_ops == 0) != (self.io_burst_len == 0):
            raise ValidationError(f"task {self.id}: io_burst_len must be 0 exactly when io_ops is 0")
        if self.io_burst_len < 0:
            raise ValidationError(f"task {self.id}: io_burst_len must be >= 0")
        # every CPU burst between IO bursts needs at least one tick
        if self.io_ops > self.cpu_work - 1:
            raise ValidationError(f"task {self.id}: io_ops must be <= cpu_work - 1")
        if self.task_class is TaskClass.IO_BOUND and self.io_ops < 1:
            raise ValidationError(f"task {self.id}: io-bound tasks need io_ops >= 1")
        if not 0 <= self.priority <= P_MAX:
            raise ValidationError(f"task {self.id}: priority must be in [0, {P_MAX}]")


@dataclass(frozen=True)
class Workload:
    tasks: tuple[TaskSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self) -> Iterator[TaskSpec]:
        return iter(self.tasks)

    def validate(self) -> None:
        seen = set()
        prev = None
        for t in self.tasks:
            t.validate()
            if t.id in seen:
                raise ValidationError(f"duplicate task id {t.id}")
            seen.add(t.id)
            key = (t.arrival, t.id)
            if prev is not None and key < prev:
                raise ValidationError(f"task {t.id}: tasks not sorted by (arrival, id)")
            prev = key

    def mean_cpu_work(self) -> float:
        if not self.tasks:
            return 0.0
        return sum(t.cpu_work for t in self.tasks) / len(self.tasks)

    def mean_interarrival(self) -> float:
        if not self.tasks:
            return 0.0
        return self.tasks[-1].arrival / len(self.tasks)


@dataclass
class WorkloadConfig:
    load: LoadLevel = LoadLevel.MEDIUM
    class_mix: tuple[float, float, float] = DEFAULT_CLASS_MIX
    n_tasks: int | None = None
    seed: int = 0
    mean_interarrival: float | None = None
    class_params: Mapping[TaskClass, ClassParams] = field(default_factory=lambda: dict(DEFAULT_CLASS_PARAMS))
    mem_max: int = 100
    rng: str = "pcg64"

    def resolved_n_tasks(self) -> int:
        return load_profile(self.load).n_tasks if self.n_tasks is None else self.n_tasks

    def resolved_interarrival(self) -> float:
        if self.mean_interarrival is None:
            return load_profile(self.load).mean_interarrival
        return self.mean_interarrival

    def validate(self) -> None:
        mix = tuple(self.class_mix)
        if len(mix) != 3:
            raise ConfigError("class_mix: expected three weights (cpu, mem, io)")
        if any(not math.isfinite(w) or w < 0 for w in mix):
            raise ConfigError("class_mix: weights must be finite and non-negative")
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix: weights sum to {sum(mix)!r}, expected 1")
        if self.n_tasks is not None and self.n_tasks < 0:
            raise ConfigError("n_tasks: must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be a 64-bit unsigned integer")
        if not self.resolved_interarrival() > 0:
            raise ConfigError("mean_interarrival: must be > 0")
        if self.mem_max < 1:
            raise ConfigError("mem_max: must be >= 1")
        if self.rng not in SUPPORTED_RNGS:
            raise ConfigError(f"rng: unsupported generator {self.rng!r}, expected one of {SUPPORTED_RNGS}")
        for cls in CLASS_ORDER:
            p = self.class_params.get(cls)
            if p is None:
                raise ConfigError(f"class_params.{cls.value}: missing")
            for name in ("cpu_mean", "mem_mean", "io_mean"):
                if not getattr(p, name) > 0:
                    raise ConfigError(f"class_params.{cls.value}.{name}: mean must be > 0")
            for name in ("cpu_sigma", "mem_sigma"):
                if getattr(p, name) < 0:
                    raise ConfigError(f"class_params.{cls.value}.{name}: spread must be >= 0")
            if p.io_burst < 1:
                raise ConfigError(f"class_params.{cls.value}.io_burst: must be >= 1")


def _rounded_lognormal(rng, mean, sigma):
    mu = np.log(mean) - 0.5 * sigma**2
    return np.rint(rng.lognormal(mu, sigma)).astype(np.int64)


def generate(config: WorkloadConfig) -> Workload:
    """Draw a workload; a pure function of ``config`` (seed included)."""
    config.validate()
    n = config.resolved_n_tasks()
    if n == 0:
        return Workload(())
    rng = np.random.Generator(np.random.PCG64(config.seed))

    gaps = rng.exponential(config.resolved_interarrival(), size=n)
    arrivals = np.floor(np.cumsum(gaps)).astype(np.int64)
    class_idx = rng.choice(3, size=n, p=np.asarray(config.class_mix, dtype=float))

    params = [config.class_params[c] for c in CLASS_ORDER]
    pick = lambda attr: np.array([getattr(p, attr) for p in params], dtype=float)[class_idx]

    cpu = np.maximum(_rounded_lognormal(rng, pick("cpu_mean"), pick("cpu_sigma")), 1)
    mem = np.clip(_rounded_lognormal(rng, pick("mem_mean"), pick("mem_sigma")), 0, config.mem_max)
    io = rng.poisson(pick("io_mean")).astype(np.int64)
    prio = rng.integers(0, P_MAX + 1, size=n)

    io = np.where(class_idx == 2, np.maximum(io, 1), io)
    cpu = np.maximum(cpu, io + 1)
    burst = np.where(io > 0, pick("io_burst").astype(np.int64), 0)

    tasks = tuple(
        TaskSpec(
            id=i,
            task_class=CLASS_ORDER[class_idx[i]],
            arrival=int(arrivals[i]),
            cpu_work=int(cpu[i]),
            mem_demand=int(mem[i]),
            io_ops=int(io[i]),
            io_burst_len=int(burst[i]),
            priority=int(prio[i]),
        )
        for i in range(n)
    )
    return Workload(tasks)


def single_class_config(task_class: TaskClass, **kwargs) -> WorkloadConfig:
    mix = tuple(1.0 if c is task_class else 0.0 for c in CLASS_ORDER)
    return WorkloadConfig(class_mix=mix, **kwargs)


# -- files -------------------------------------------------------------------


def write_workload(w: Workload, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t in w.tasks:
            writer.writerow([t.id, t.task_class.value, t.arrival, t.cpu_work, t.mem_demand,
                             t.io_ops, t.io_burst_len, t.priority])


def _parse_row(row: Sequence[str], line: int) -> TaskSpec:
    if len(row) != len(CSV_HEADER):
        raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line)
    try:
        cls = TaskClass(row[1].strip())
    except ValueError:
        raise ParseError(f"unknown class {row[1]!r}", line) from None
    try:
        ints = [int(row[i]) for i in (0, 2, 3, 4, 5, 6, 7)]
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    tid, arrival, cpu, mem, io, burst, prio = ints
    return TaskSpec(tid, cls, arrival, cpu, mem, io, burst, prio)


def read_workload(path) -> Workload:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"bad header, expected {','.join(CSV_HEADER)}", 1)
        tasks = []
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            task = _parse_row(row, line)
            try:
                task.validate()
            except ValidationError as exc:
                raise ValidationError(f"line {line}: {exc}") from None
            tasks.append(task)
    w = Workload(tuple(tasks))
    w.validate()
    return w


def load_workload_config(path) -> WorkloadConfig:
    """Read a YAML workload config. Unknown keys are rejected."""
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return workload_config_from_dict(raw)


def workload_config_from_dict(raw: dict) -> WorkloadConfig:
    raw = dict(raw)
    cfg = WorkloadConfig()
    params = dict(cfg.class_params)
    for cls_name, overrides in (raw.pop("class_params", None) or {}).items():
        try:
            cls = TaskClass(cls_name)
        except ValueError:
            raise ConfigError(f"class_params.{cls_name}: unknown class") from None
        try:
            params[cls] = replace(params[cls], **overrides)
        except TypeError as exc:
            raise ConfigError(f"class_params.{cls_name}: {exc}") from None
    kwargs = {"class_params": params}
    for key, value in raw.items():
        if key == "load":
            try:
                value = LoadLevel(value)
            except ValueError:
                raise ConfigError(f"load: unknown level {value!r}") from None
        elif key == "class_mix":
            value = tuple(float(v) for v in value)
        elif key not in ("n_tasks", "seed", "mean_interarrival", "mem_max", "rng"):
            raise ConfigError(f"{key}: unknown workload config key")
        kwargs[key] = value
    cfg = replace(cfg, **kwargs)
    cfg.validate()
    return cfg
