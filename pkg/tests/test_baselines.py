from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schedrl.baselines import FCFS, RR, SJF, BaselinePolicy, PolicyKind, decide, run_episode, run_policy
from schedrl.errors import ConfigError
from schedrl.sim import EnvConfig, SchedulingEnv
from schedrl.workload import TaskClass, TaskSpec, Workload, WorkloadConfig, generate

import oracle

ONE_CORE = EnvConfig(cores=1)
RR2 = BaselinePolicy(PolicyKind.RR, rr_quantum=2)

# A(arr 0, work 5), B(arr 1, work 3), C(arr 2, work 1)
ABC = Workload(tuple(TaskSpec(i, TaskClass.CPU_BOUND, a, w, 0, 0, 0, 0)
                     for i, (a, w) in enumerate([(0, 5), (1, 3), (2, 1)])))


def finish_times(policy):
    trace = []
    report = run_policy(policy, ABC, ONE_CORE, trace=trace)
    finish = {tid: info["clock"] for info in trace for tid in info["completed"]}
    return report, finish


def test_fcfs_hand_trace():
    report, finish = finish_times(FCFS)
    assert finish == {0: 5, 1: 8, 2: 9}
    assert report.mean_completion_ms == pytest.approx(19 / 3, abs=1e-12)
    assert report.mean_response_ms == pytest.approx(10 / 3, abs=1e-12)


def test_sjf_hand_trace():
    report, finish = finish_times(SJF)
    assert finish == {0: 5, 2: 6, 1: 9}
    assert report.mean_completion_ms == pytest.approx(17 / 3, abs=1e-12)


def test_rr_hand_trace():
    report, finish = finish_times(RR2)
    assert finish == {2: 5, 1: 8, 0: 9}
    assert report.mean_completion_ms == pytest.approx(19 / 3, abs=1e-12)


def test_empty_workload():
    for policy in (FCFS, SJF, RR):
        report = run_policy(policy, Workload(()), ONE_CORE)
        assert report.n_total == 0 and report.throughput_tps == 0.0


def test_deterministic_reports():
    w = generate(WorkloadConfig(n_tasks=100, seed=2))
    for policy in (FCFS, SJF, RR):
        assert run_policy(policy, w) == run_policy(policy, w)


def test_rr_quantum_must_be_in_quanta():
    with pytest.raises(ConfigError, match="rr_quantum"):
        run_policy(BaselinePolicy(PolicyKind.RR, rr_quantum=5), ABC, ONE_CORE)


def test_no_legal_dispatch_returns_noop():
    env = SchedulingEnv(ONE_CORE)
    env.reset(Workload((TaskSpec(0, TaskClass.CPU_BOUND, 3, 2, 0, 0, 0, 0),)))
    for policy in (FCFS, SJF, RR):
        assert decide(policy, env.state) == env.actions.boost


def test_oracle_equivalence_small_family_exhaustive():
    """Every workload with up to 3 tasks, work <= 6, arrivals <= 6."""
    checked, total, failures, _, complete = oracle.sweep(max_tasks=3)
    assert complete and checked == total == oracle.family_size(max_tasks=3)
    assert failures == []


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(1, 6)), min_size=4, max_size=5))
def test_oracle_equivalence_sampled_four_and_five(pairs):
    pairs = sorted(pairs, key=lambda p: p[0])
    tasks = [(i, a, w) for i, (a, w) in enumerate(pairs)]
    assert oracle.mismatches(tasks) == []


def _dispatch_log(policy, w, cfg=ONE_CORE):
    """(clock, ready snapshot, chosen task) at every dispatching step."""
    env = SchedulingEnv(cfg)
    obs = env.reset(w)
    log = []
    while not env.done:
        ready = list(env.state.ready)
        out = env.step(policy(env.state, obs, env.mask()))
        obs = out.observation
        for tid in out.info["dispatched"]:
            log.append((ready, tid))
    return env, log


def _cpu_workload(seed, n=60):
    base = generate(WorkloadConfig(n_tasks=n, seed=seed))
    return Workload(tuple(TaskSpec(t.id, TaskClass.CPU_BOUND, t.arrival, t.cpu_work, 0, 0, 0, 0)
                          for t in base.tasks))


@pytest.mark.parametrize("seed", range(5))
def test_fcfs_first_dispatches_follow_arrival_order(seed):
    w = _cpu_workload(seed)
    env, log = _dispatch_log(FCFS, w)
    firsts = []
    for _, tid in log:
        if tid not in firsts:
            firsts.append(tid)
    assert firsts == [t.id for t in w.tasks]


@pytest.mark.parametrize("seed", range(5))
def test_sjf_picks_minimal_remaining_work(seed):
    w = _cpu_workload(seed)
    env = SchedulingEnv(ONE_CORE)
    obs = env.reset(w)
    while not env.done:
        s = env.state
        a = SJF(s, obs, env.mask())
        slot, _ = env.actions.decode(a)
        if slot is not None:
            window = s.ready[: env.actions.K]
            chosen = s.tasks[s.ready[slot]].cpu_remaining
            assert chosen == min(s.tasks[t].cpu_remaining for t in window)
        obs = env.step(a).observation


@pytest.mark.parametrize("seed", range(5))
def test_rr_fairness(seed):
    """Between two dispatches of a task, a task ready the whole time runs at most once."""
    w = _cpu_workload(seed, n=40)
    env = SchedulingEnv(ONE_CORE)
    obs = env.reset(w)
    events = []  # (step, dispatched id, ready set before the step)
    step = 0
    while not env.done:
        ready = set(env.state.ready)
        out = env.step(RR(env.state, obs, env.mask()))
        obs = out.observation
        for tid in out.info["dispatched"]:
            events.append((step, tid, ready))
        step += 1
    by_task = {}
    for i, (_, tid, _) in enumerate(events):
        by_task.setdefault(tid, []).append(i)
    for tid, idx in by_task.items():
        for lo, hi in zip(idx, idx[1:]):
            between = events[lo + 1:hi]
            always_ready = set.intersection(*(e[2] for e in between)) if between else set()
            counts = {}
            for _, other, _ in between:
                counts[other] = counts.get(other, 0) + 1
            for other in always_ready:
                assert counts.get(other, 0) <= 1


def test_sjf_not_worse_on_medium_load():
    comp = {p.name: [] for p in (FCFS, SJF, RR)}
    for seed in range(20):
        w = generate(WorkloadConfig(seed=seed))
        for policy in (FCFS, SJF, RR):
            comp[policy.name].append(run_policy(policy, w).mean_completion_ms)
    means = {k: np.mean(v) for k, v in comp.items()}
    assert means["sjf"] <= means["rr"]
    assert means["sjf"] <= means["fcfs"]


def test_run_episode_accepts_callables():
    calls = []

    def first_legal(state, obs, mask):
        calls.append(1)
        return int(np.flatnonzero(mask)[0])

    report = run_episode(first_legal, ABC, ONE_CORE)
    assert report.n_completed == 3 and calls
