from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distsched import env as E
from distsched.feasibility import feasible_sets
from distsched.instance import EligibilityError, batches_required, from_dict

from conftest import micro_doc


# ---------------------------------------------------------------------------
# Independent oracle for the 2-task / 1-unit micro-instance.
# Plain Python, written from the model definition and not from the kernels.
# ---------------------------------------------------------------------------

MICRO = {
    "T": 12,
    "batch": {1: 100, 2: 100},
    "nb": {1: 2, 2: 2},
    "pt": {1: 2, 2: 1},
    "due": {1: 6, 2: 4},
    "rtt": {1: 0, 2: 1},
    "rtu": 0,
    "tcl": {(1, 2): 2, (2, 1): 1},
    "succ": {1: {2}, 2: {1}},
}
IDLE = 3


@dataclass(frozen=True)
class OState:
    inv: tuple = (0, 0)
    w: int = IDLE
    delta: int = 0
    rho: tuple = (6, 4)
    t: int = 0
    finished: frozenset = frozenset()
    active: int | None = None
    completions: tuple = ()  # remaining batch completion periods of the active campaign
    last: int | None = None
    last_finish: int = 0

    def vector(self):
        return np.array([*self.inv, self.w, self.delta, *self.rho, self.t], dtype=float)


def oracle_valid(s: OState) -> set[int]:
    if s.active is not None:
        return {s.active}
    ok = {IDLE}
    for i in (1, 2):
        if i in s.finished:
            continue
        if s.last is not None and i not in MICRO["succ"][s.last]:
            continue
        ok.add(i)
    return ok


def oracle_step(s: OState, u: int) -> tuple[OState, float, bool]:
    m = MICRO
    inv, rho = list(s.inv), list(s.rho)
    delta, active, comps = s.delta, s.active, s.completions
    last, last_finish, finished = s.last, s.last_finish, set(s.finished)
    if active is None and u != IDLE:
        setup = max(0, m["rtt"][u] - s.t, m["rtu"] - s.t)
        if last is not None:
            setup = max(setup, m["tcl"][(last, u)] + last_finish - s.t)
        comps = tuple(s.t + setup + m["pt"][u] * (k + 1) for k in range(m["nb"][u]))
        delta = setup + m["nb"][u] * m["pt"][u]
        active = u
    t1 = s.t + 1
    delta -= 1
    just = set()
    if active is not None and comps and comps[0] == t1:
        inv[active - 1] += m["batch"][active]
        comps = comps[1:]
        if comps:
            delta = len(comps) * m["pt"][active]
        else:
            finished.add(active)
            just.add(active)
            last, last_finish, active, delta = active, t1, None, 0
    for i in (1, 2):
        if i in s.finished:
            continue
        rho[i - 1] -= 1
        if i in just:
            rho[i - 1] = min(0, rho[i - 1])
    done = t1 == m["T"] or finished == {1, 2}
    nxt = OState(tuple(inv), u, delta, tuple(rho), t1, frozenset(finished), active, comps, last, last_finish)
    reward = float(sum(rho) - t1) if done else 0.0
    return nxt, reward, done


def test_micro_oracle_exhaustive(micro):
    """Every control sequence agrees with the oracle, and invalid ones are rejected."""
    scen = E.deterministic_scenario(micro)
    returns: dict[tuple[int, ...], float] = {}
    counters = {"rejected": 0, "steps": 0}

    def dfs(os_: OState, es: E.PlantState, seq: tuple[int, ...]):
        np.testing.assert_array_equal(es.vector(), os_.vector())
        valid = oracle_valid(os_)
        assert set(feasible_sets(es, micro)[1]) == valid
        for u in (1, 2, IDLE):
            child = es.copy()
            if u not in valid:
                with pytest.raises(E.ControlError):
                    E.step(child, [u], scen, micro)
                counters["rejected"] += 1
                continue
            o2, r_o, d_o = oracle_step(os_, u)
            _, r_e, d_e = E.step(child, [u], scen, micro)
            counters["steps"] += 1
            assert (r_e, d_e) == (r_o, d_o), seq + (u,)
            if d_o:
                np.testing.assert_array_equal(child.vector(), o2.vector())
                returns[seq + (u,)] = r_o
            else:
                dfs(o2, child, seq + (u,))

    dfs(OState(), E.initial_state(micro, scen), ())
    assert counters["rejected"] > 0 and counters["steps"] > 100
    best = max(returns.values())
    assert best == -10.0
    # T2 first, then T1 as soon as cleaning allows
    assert returns[(2, 2, 2, 1, 1, 1, 1, 1)] == -10.0
    # T1 first, then T2 as soon as cleaning allows
    assert returns[(1, 1, 1, 1, 2, 2, 2, 2)] == -12.0
    assert returns[(IDLE,) * 12] == -26.0
    assert min(returns.values()) == -26.0


def test_micro_optimal_trajectory_by_hand(micro):
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    assert E.setup_time(s, micro, 2, 1) == 1
    seen = []
    for u in (2, 2, 2, 1, 1, 1, 1, 1):
        s, r, done = E.step(s, [u], scen, micro)
        seen.append((s.t, s.inventory.tolist(), float(s.countdowns[0]), s.due_countdowns.tolist()))
    assert done and r == -10.0
    assert seen[:3] == [
        (1, [0, 0], 2.0, [5, 3]),
        (2, [0, 100], 1.0, [4, 2]),
        (3, [0, 200], 0.0, [3, 0]),
    ]
    makespan, tard = E.makespan_and_tardiness(s)
    assert makespan == 8 and tard.tolist() == [2, 0]


# ---------------------------------------------------------------------------
# Setup time, initial state and reward examples
# ---------------------------------------------------------------------------

def test_setup_time_after_cleaning(inst2):
    inst = inst2.without_release_times()
    scen = E.deterministic_scenario(inst)
    s = E.initial_state(inst, scen)
    idle = inst.idle_code
    assert batches_required(inst, 2, 3) * inst.proc_periods(2, 3) == 10
    while 2 not in s.finished:
        s, _, _ = E.step(s, [idle, idle, 2, idle], scen, inst)
    assert s.t == 10
    assert E.setup_time(s, inst, 3, 3) == 2


def test_setup_time_fresh_and_release(inst2):
    inst = inst2.without_release_times()
    s = E.initial_state(inst, E.deterministic_scenario(inst))
    assert E.setup_time(s, inst, 1, 1) == 0
    # task released at 4 periods on a unit released at 6: the later release wins
    doc = micro_doc()
    doc["tasks"][0]["release_days"] = 2.0
    doc["units"][0]["release_days"] = 3.0
    m = from_dict(doc)
    s = E.initial_state(m, E.deterministic_scenario(m))
    assert E.setup_time(s, m, 1, 1) == 6


def test_setup_time_errors(inst2, micro):
    s = E.initial_state(inst2, E.deterministic_scenario(inst2))
    with pytest.raises(EligibilityError):
        E.setup_time(s, inst2, 1, 2)
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    E.step(s, [1], scen, micro)
    with pytest.raises(E.EnvError):
        E.setup_time(s, micro, 2, 1)


def test_initial_state(inst1, inst2):
    s = E.initial_state(inst2, E.deterministic_scenario(inst2))
    assert s.countdowns.tolist() == [0, 6, 4, 6]
    assert s.inventory.tolist() == [0] * 15
    assert s.last_controls.tolist() == [16] * 4
    assert s.due_countdowns.tolist() == [inst2.due_periods(i) for i in range(1, 16)]
    no_rel = inst2.without_release_times()
    assert E.initial_state(no_rel, E.deterministic_scenario(no_rel)).countdowns.tolist() == [0] * 4
    assert s.vector().shape == (2 * 15 + 2 * 4 + 1,)


def test_idle_step_decrements(inst1):
    scen = E.deterministic_scenario(inst1)
    s = E.initial_state(inst1, scen)
    before = s.vector()
    s, r, done = E.step(s, [9] * 4, scen, inst1)
    after = s.vector()
    n, nu = 8, 4
    assert r == 0.0 and not done
    np.testing.assert_array_equal(after[:n], before[:n])
    np.testing.assert_array_equal(after[n + nu:n + 2 * nu], before[n + nu:n + 2 * nu] - 1)
    np.testing.assert_array_equal(after[n + 2 * nu:-1], before[n + 2 * nu:-1] - 1)
    assert after[-1] == 1


def test_reward_vector_examples():
    d = E.default_reward_vector(3, 2)
    x = np.array([5, 5, 5, 1, 2, 7, 7, -3, 0, 0, 20], dtype=float)
    assert d @ x == -23.0
    d = E.default_reward_vector(2, 1)
    assert d @ np.array([0, 0, 3, 0, -4, -2, 50], dtype=float) == -56.0
    assert d @ np.array([0, 0, 3, 0, 0, 0, 40], dtype=float) == -40.0


def test_makespan_requires_terminal(micro):
    s = E.initial_state(micro, E.deterministic_scenario(micro))
    with pytest.raises(E.EnvError):
        E.makespan_and_tardiness(s)


def test_step_errors(micro, inst1):
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    for bad in ([0], [4], [1, 1]):
        with pytest.raises(E.ControlError):
            E.step(s.copy(), bad, scen, micro)
    E.step(s, [1], scen, micro)
    with pytest.raises(E.ControlError, match="busy"):
        E.step(s.copy(), [2], scen, micro)
    with pytest.raises(E.ControlError, match="not eligible"):
        s1 = E.initial_state(inst1, E.deterministic_scenario(inst1))
        E.step(s1, [2, 9, 9, 9], E.deterministic_scenario(inst1), inst1)
    for u in [IDLE] * 11 + [IDLE]:
        if s.done:
            break
        s, _, _ = E.step(s, [u if s.active_task[0] is None else s.active_task[0]], scen, micro)
    with pytest.raises(E.EnvError):
        E.step(s, [IDLE], scen, micro)


def test_restart_rejected(micro):
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    for u in (2, 2, 2):
        E.step(s, [u], scen, micro)
    assert 2 in s.finished
    with pytest.raises(E.ControlError, match="restarts"):
        E.step(s, [2], scen, micro)


def test_preemption_voids_inventory(micro):
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    for u in (1, 1):
        E.step(s, [u], scen, micro)
    assert s.inventory.tolist() == [100, 0]
    E.step(s, [2], scen, micro, allow_preempt=True)
    assert s.inventory[0] == 0
    assert s.active_task == (2,)


def test_delta_reanchors_on_longer_batch(micro):
    pl = E.deterministic_scenario(micro).batch_periods.copy()
    pl[0, 0, 0] = 3  # first T1 batch takes one period longer than expected
    scen = E.Scenario(pl, np.array([6, 4]), np.array([0, 0]), True, False)
    s = E.initial_state(micro, scen)
    deltas = []
    for _ in range(5):
        E.step(s, [1], scen, micro)
        deltas.append(int(s.countdowns[0]))
    # estimate 4, then runs over to 1 before the late batch re-anchors it to 2
    assert deltas == [3, 2, 2, 1, 0]
    assert 1 in s.finished


def test_due_confirmation(micro):
    scen = E.Scenario(E.deterministic_scenario(micro).batch_periods, np.array([10, 2]), np.array([3, 0]))
    s = E.initial_state(micro, scen)
    assert s.due_countdowns.tolist() == [6, 2]
    for _ in range(3):
        E.step(s, [IDLE], scen, micro)
    assert s.due_countdowns.tolist() == [10 - 3, -1]


def test_scenario_round_trip(inst1):
    scen = E.sample_scenario(inst1, rng=np.random.default_rng(3))
    again = E.Scenario.from_dict(scen.to_dict())
    np.testing.assert_array_equal(again.batch_periods, scen.batch_periods)
    np.testing.assert_array_equal(again.confirmed_due_periods, scen.confirmed_due_periods)
    assert scen.batch_period(1, 1, 1) == scen.batch_periods[0, 0, 0]
    with pytest.raises(ValueError):
        E.Scenario(np.zeros((1, 1, 1)), np.zeros(1), np.zeros(1))


# ---------------------------------------------------------------------------
# Scenario sampling
# ---------------------------------------------------------------------------

def test_deterministic_processing(inst2):
    scen = E.sample_scenario(inst2, processing_uncertain=False, due_uncertain=False, rng=np.random.default_rng(0))
    assert all(scen.batch_period(1, n, 1) == 4 for n in range(1, 8))
    np.testing.assert_array_equal(scen.confirmed_due_periods, inst2.arrays.due)


def test_processing_support(inst2):
    rng = np.random.default_rng(1)
    seen, seen_mis = set(), set()
    for _ in range(200):
        seen.update(E.sample_scenario(inst2, rng=rng, due_uncertain=False).batch_periods[1, 2, :5].tolist())
        cfg = E.UncertaintyConfig(k_pt=2)
        seen_mis.update(E.sample_scenario(inst2, cfg, misspecify=True, rng=rng).batch_periods[0, 0, :7].tolist())
    assert inst2.proc_periods(2, 3) == 2 and seen == {1, 2, 3}
    assert inst2.proc_periods(1, 1) == 4 and seen_mis == set(range(1, 8))


def test_due_sampling_and_confirm_period(inst2):
    scen = E.sample_scenario(inst2, processing_uncertain=False, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(scen.confirm_at_period, np.maximum(0, inst2.arrays.due - 6))
    assert (scen.confirmed_due_periods % 2 == 0).all()
    assert (scen.batch_periods == E.deterministic_scenario(inst2).batch_periods).all()


def test_misspecified_rate_clamped(caplog):
    doc = micro_doc()
    doc["tasks"][1]["due_date_days"] = 0.5
    m = from_dict(doc)
    cfg = E.UncertaintyConfig(k_dd=20)
    rng = np.random.default_rng(0)
    with caplog.at_level(logging.WARNING, logger="distsched.env"):
        for _ in range(20):
            scen = E.sample_scenario(m, cfg, misspecify=True, rng=rng)
            assert (scen.confirmed_due_periods >= 0).all()
    assert any("clamped" in r.message for r in caplog.records)


def test_uncertainty_config_rejects_negative():
    with pytest.raises(ValueError):
        E.UncertaintyConfig(c=-1)


# ---------------------------------------------------------------------------
# Invariants over random feasible trajectories
# ---------------------------------------------------------------------------

def _random_run(inst, scen, picks):
    s = E.initial_state(inst, scen)
    rows, rewards, k = [s.vector()], [], 0
    while not s.done:
        sets = feasible_sets(s, inst)
        ctrl = []
        for l in range(1, inst.n_units + 1):
            opts = sets[l]
            ctrl.append(opts[picks[k % len(picks)] % len(opts)])
            k += 1
        s, r, _ = E.step(s, ctrl, scen, inst)
        rows.append(s.vector())
        rewards.append(r)
    return s, np.array(rows), rewards


@settings(max_examples=30, deadline=None)
@given(picks=st.lists(st.integers(0, 20), min_size=1, max_size=40), seed=st.integers(0, 2**32 - 1))
def test_trajectory_invariants(inst1, picks, seed):
    scen = E.sample_scenario(inst1, rng=np.random.default_rng(seed))
    s, rows, rewards = _random_run(inst1, scen, picks)
    n, nu = inst1.n_tasks, inst1.n_units
    inv = rows[:, :n]
    assert (np.diff(inv, axis=0) >= 0).all()
    # double allocation may run a task on several units at once
    cap = np.array([sum(batches_required(inst1, i, l) * inst1.arrays.batch[i - 1, l - 1]
                        for l in range(1, nu + 1) if inst1.is_eligible(i, l)) for i in range(1, n + 1)])
    assert (inv <= cap).all()
    np.testing.assert_array_equal(rows[:, -1], np.arange(len(rows)))
    assert all(r == 0.0 for r in rewards[:-1])
    rho = rows[-1, n + 2 * nu:-1]
    assert rewards[-1] == rho.sum() - rows[-1, -1]
    for i in s.finished:
        assert rho[i - 1] <= 0
    # finished tasks have their full order in inventory
    for i in s.finished:
        assert inv[-1, i - 1] >= inst1.task(i).order_size
    _, rows2, rewards2 = _random_run(inst1, scen, picks)
    np.testing.assert_array_equal(rows, rows2)
    assert rewards == rewards2


@settings(max_examples=20, deadline=None)
@given(picks=st.lists(st.integers(0, 20), min_size=1, max_size=30))
def test_frozen_rho_after_finish(picks):
    micro = from_dict(micro_doc())
    scen = E.deterministic_scenario(micro)
    s = E.initial_state(micro, scen)
    frozen: dict[int, float] = {}
    k = 0
    while not s.done:
        opts = feasible_sets(s, micro)[1]
        E.step(s, [opts[picks[k % len(picks)] % len(opts)]], scen, micro)
        k += 1
        for i, v in frozen.items():
            assert s.due_countdowns[i - 1] == v
        for i in s.finished:
            frozen.setdefault(i, float(s.due_countdowns[i - 1]))
