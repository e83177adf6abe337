import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schedrl.errors import ConfigError, ParseError, ValidationError
from schedrl.workload import (
    CSV_HEADER, ClassParams, LoadLevel, TaskClass, TaskSpec, Workload, WorkloadConfig,
    generate, load_profile, load_workload_config, read_workload, single_class_config,
    write_workload,
)

# relative tolerance for the "offered load ≈" oracles
LOAD_RTOL = 0.10


def test_empty_workload():
    assert generate(WorkloadConfig(n_tasks=0)).tasks == ()


def test_generate_is_deterministic():
    cfg = WorkloadConfig(n_tasks=300, seed=7)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(WorkloadConfig(n_tasks=300, seed=8))


def test_exact_count_sorted_and_ids():
    w = generate(WorkloadConfig(load=LoadLevel.HEAVY, seed=3))
    assert len(w) == 800
    keys = [(t.arrival, t.id) for t in w.tasks]
    assert keys == sorted(keys)
    assert sorted(t.id for t in w.tasks) == list(range(800))


def test_class_counts_within_three_sigma():
    n, mix = 10_000, (0.5, 0.3, 0.2)
    w = generate(WorkloadConfig(n_tasks=n, class_mix=mix, seed=42))
    counts = {c: 0 for c in TaskClass}
    for t in w.tasks:
        counts[t.task_class] += 1
    for cls, p in zip((TaskClass.CPU_BOUND, TaskClass.MEMORY_BOUND, TaskClass.IO_BOUND), mix):
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[cls] - n * p) <= 3 * sigma, (cls, counts[cls])


def test_load_profiles():
    light, medium, heavy = (load_profile(l) for l in (LoadLevel.LIGHT, LoadLevel.MEDIUM, LoadLevel.HEAVY))
    assert (light.mean_interarrival, light.n_tasks) == (40, 200)
    assert (medium.mean_interarrival, medium.n_tasks) == (20, 400)
    assert (heavy.mean_interarrival, heavy.n_tasks) == (10, 800)
    assert heavy.mean_interarrival < medium.mean_interarrival < light.mean_interarrival


@pytest.mark.parametrize("level,target", [(LoadLevel.LIGHT, 0.4), (LoadLevel.MEDIUM, 0.8), (LoadLevel.HEAVY, 1.6)])
def test_offered_load(level, target):
    w = generate(WorkloadConfig(load=level, n_tasks=10_000, seed=11))
    work = np.mean([t.cpu_work for t in w.tasks])
    gaps = np.diff([0] + [t.arrival for t in w.tasks])
    offered = work / gaps.mean()
    assert abs(offered - target) <= LOAD_RTOL * target, offered


def test_interarrival_mean_matches_profile():
    w = generate(WorkloadConfig(load=LoadLevel.LIGHT, n_tasks=10_000, seed=5))
    # floor() of the cumulative sum shifts the mean by < 1 tick over the run
    assert abs(w.tasks[-1].arrival / len(w) - 40) < 40 * 0.05


def test_class_attribute_separation():
    w = generate(WorkloadConfig(n_tasks=12_000, class_mix=(1 / 3, 1 / 3, 1 / 3), seed=1))
    by = {c: [t for t in w.tasks if t.task_class is c] for c in TaskClass}
    mean = lambda ts, attr: np.mean([getattr(t, attr) for t in ts])
    assert all(len(v) > 3000 for v in by.values())
    assert mean(by[TaskClass.CPU_BOUND], "cpu_work") > mean(by[TaskClass.MEMORY_BOUND], "cpu_work")
    io = mean(by[TaskClass.IO_BOUND], "io_ops")
    assert io > mean(by[TaskClass.CPU_BOUND], "io_ops")
    assert io > mean(by[TaskClass.MEMORY_BOUND], "io_ops")
    assert mean(by[TaskClass.MEMORY_BOUND], "mem_demand") > mean(by[TaskClass.CPU_BOUND], "mem_demand")


def test_generated_tasks_satisfy_invariants():
    w = generate(WorkloadConfig(n_tasks=5000, seed=9))
    for t in w.tasks:
        t.validate()
        assert 0 <= t.priority <= 7
        assert t.mem_demand <= 100
        if t.task_class is TaskClass.IO_BOUND:
            assert t.io_ops >= 1
        assert (t.io_burst_len == 0) == (t.io_ops == 0)


def test_single_class_config():
    w = generate(single_class_config(TaskClass.IO_BOUND, n_tasks=200, seed=0))
    assert {t.task_class for t in w.tasks} == {TaskClass.IO_BOUND}


@pytest.mark.parametrize("kwargs,field", [
    ({"class_mix": (0.5, 0.5, 0.5)}, "class_mix"),
    ({"class_mix": (1.0, 0.0)}, "class_mix"),
    ({"n_tasks": -1}, "n_tasks"),
    ({"mean_interarrival": 0.0}, "mean_interarrival"),
    ({"rng": "mt19937"}, "rng"),
])
def test_invalid_config_names_field(kwargs, field):
    with pytest.raises(ConfigError, match=field):
        generate(WorkloadConfig(**kwargs))


def test_zero_class_mean_rejected():
    cfg = WorkloadConfig()
    params = dict(cfg.class_params)
    params[TaskClass.CPU_BOUND] = ClassParams(0.0, 10, 0.5, 2)
    with pytest.raises(ConfigError, match="cpu_mean"):
        generate(WorkloadConfig(class_params=params))


def test_round_trip(tmp_path):
    w = generate(WorkloadConfig(n_tasks=500, seed=4))
    path = tmp_path / "w.csv"
    write_workload(w, path)
    assert read_workload(path) == w
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 60), seed=st.integers(0, 2**32), mix=st.sampled_from(
    [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.2, 0.3, 0.5)]))
def test_round_trip_property(tmp_path_factory, n, seed, mix):
    w = generate(WorkloadConfig(n_tasks=n, seed=seed, class_mix=mix))
    path = tmp_path_factory.mktemp("rt") / "w.csv"
    write_workload(w, path)
    assert read_workload(path) == w


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text(",".join(CSV_HEADER) + "\n")
    assert read_workload(path) == Workload(())


def _write_rows(path, rows):
    path.write_text("\n".join([",".join(CSV_HEADER), *rows]) + "\n")


def test_zero_cpu_work_is_validation_error(tmp_path):
    path = tmp_path / "w.csv"
    _write_rows(path, ["0,cpu,0,5,1,0,0,0", "1,cpu,3,0,1,0,0,0"])
    with pytest.raises(ValidationError, match="line 3"):
        read_workload(path)


def test_unsorted_arrivals_is_validation_error(tmp_path):
    path = tmp_path / "w.csv"
    _write_rows(path, ["0,cpu,5,5,1,0,0,0", "1,cpu,3,2,1,0,0,0"])
    with pytest.raises(ValidationError):
        read_workload(path)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "w.csv"
    _write_rows(path, ["0,cpu,0,5,1,0,0,0", "1,cpu,x,2,1,0,0,0"])
    with pytest.raises(ParseError, match="line 3") as info:
        read_workload(path)
    assert info.value.line == 3


def test_task_spec_invariants():
    with pytest.raises(ValidationError):
        TaskSpec(0, TaskClass.IO_BOUND, 0, 5, 0, 0, 0, 0).validate()
    with pytest.raises(ValidationError):
        TaskSpec(0, TaskClass.CPU_BOUND, 0, 5, 0, 1, 0, 0).validate()
    with pytest.raises(ValidationError):
        TaskSpec(0, TaskClass.CPU_BOUND, 0, 5, 0, 0, 0, 8).validate()


def test_yaml_config(tmp_path):
    path = tmp_path / "w.yaml"
    path.write_text("load: heavy\nn_tasks: 12\nseed: 3\nclass_mix: [0.2, 0.3, 0.5]\n"
                    "class_params:\n  io:\n    io_mean: 4\n")
    cfg = load_workload_config(path)
    assert cfg.load is LoadLevel.HEAVY and cfg.n_tasks == 12 and cfg.seed == 3
    assert cfg.class_params[TaskClass.IO_BOUND].io_mean == 4
    path.write_text("bogus: 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_workload_config(path)
