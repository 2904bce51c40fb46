import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srtd_lab import envsuite
from srtd_lab.envsuite import EnvState, TaskSpec

CENTER = TaskSpec(0, (0.5, 0.5), (0.0, 0.0))


def test_reset_deterministic():
    a, b = envsuite.reset(CENTER, 42), envsuite.reset(CENTER, 42)
    assert a.position.tolist() == b.position.tolist() and a.velocity.tolist() == [0.0, 0.0]


def test_reset_keeps_distance_from_goal():
    task = TaskSpec(3, (0.2, 0.8), (0.1, -0.1))
    starts = np.array([envsuite.reset(task, s).position for s in range(1000)])
    assert np.all(np.linalg.norm(starts - task.goal, axis=1) >= 0.2)
    assert starts.min() >= 0.05 and starts.max() <= 0.95


def test_fixed_point_at_goal():
    s, r, done, success = envsuite.step(CENTER, EnvState(np.array([0.5, 0.5]), np.zeros(2)), np.zeros(2))
    assert s.position.tolist() == [0.5, 0.5] and r == 1.0 and success and not done


def test_one_step_kinematics():
    task = TaskSpec(0, (0.1, 0.1), (0.0, 0.0))
    s, *_ = envsuite.step(task, EnvState(np.array([0.5, 0.5]), np.zeros(2)), np.array([1.0, 0.0]))
    np.testing.assert_allclose(s.velocity, [0.05, 0.0])
    np.testing.assert_allclose(s.position, [0.55, 0.5])


def test_done_at_horizon_only():
    task = TaskSpec(0, (0.5, 0.5), (0.0, 0.0), horizon=3)
    obs, acts, rews, succ = envsuite.rollout(task, lambda s: np.zeros(2), seed=0)
    assert len(acts) == 3 and len(obs) == 4


def test_expert_succeeds_without_drift():
    suite = envsuite.make_suite(5, seed=1)
    hits = 0
    for seed in range(200):
        task = TaskSpec(seed % 5, suite[seed % 5].goal, (0.0, 0.0))
        *_, succ = envsuite.rollout(task, lambda s: envsuite.expert_action(task, s), seed)
        hits += bool(succ.any())
    assert hits / 200 >= 0.95


def test_scripted_extremes():
    task = TaskSpec(0, (0.3, 0.6), (0.2, -0.1))
    state = envsuite.reset(task, 0)
    a = envsuite.scripted_policy(task, state, 1.0, np.random.default_rng(0))
    assert a.tolist() == envsuite.expert_action(task, state).tolist()
    other = EnvState(np.array([0.9, 0.1]), np.array([0.05, 0.05]))
    noise_a = envsuite.scripted_policy(task, state, 0.0, np.random.default_rng(5))
    noise_b = envsuite.scripted_policy(task, other, 0.0, np.random.default_rng(5))
    assert noise_a.tolist() == noise_b.tolist()


def test_return_monotone_in_quality():
    suite = envsuite.make_suite(3, seed=0)
    means = []
    for q in (0.0, 0.25, 0.5, 0.75, 1.0):
        total = 0.0
        for seed in range(100):
            task = suite[seed % 3]
            rng = np.random.default_rng(seed)
            _, _, rews, _ = envsuite.rollout(task, lambda s: envsuite.scripted_policy(task, s, q, rng), seed)
            total += rews.sum()
        means.append(total / 100)
    assert all(b >= a for a, b in zip(means, means[1:])), means


def test_suite_properties():
    assert len(envsuite.make_suite(1, 0)) == 1
    a, b = envsuite.make_suite(10, 7), envsuite.make_suite(10, 7)
    assert a == b
    goals = np.array([t.goal for t in a])
    d = np.linalg.norm(goals[:, None] - goals[None], axis=-1)[np.triu_indices(10, 1)]
    assert d.size == 45 and d.min() >= 0.1
    assert all(max(abs(w) for w in t.drift) <= 0.5 for t in a)


def test_crowded_suite_fails():
    with pytest.raises(envsuite.SuiteGenerationError):
        envsuite.make_suite(200, 0)


def test_taskspec_validation():
    with pytest.raises(ValueError):
        TaskSpec(0, (1.2, 0.5), (0.0, 0.0))
    with pytest.raises(ValueError):
        TaskSpec(0, (0.5, 0.5), (0.6, 0.0))


def test_observation_hides_drift():
    task = TaskSpec(0, (0.5, 0.5), (0.37, -0.21))
    obs = envsuite.observe(envsuite.reset(task, 0))
    assert obs.shape == (envsuite.OBS_DIM,)
    assert 0.37 not in obs and -0.21 not in obs


def test_suite_json_round_trip(tmp_path):
    suite = envsuite.make_suite(4, 3)
    envsuite.save_suite(suite, tmp_path / "s.json")
    assert envsuite.load_suite(tmp_path / "s.json") == suite
    assert set(json.loads(envsuite.suite_to_json(suite))["tasks"][0]) == {"task_id", "goal", "drift", "horizon"}


def test_step_counter():
    with envsuite.count_steps() as taken:
        envsuite.rollout(CENTER, lambda s: np.zeros(2), 0)
    assert taken() == CENTER.horizon


coords = st.floats(0.0, 1.0)
vel = st.floats(-0.1, 0.1)
act = st.floats(-3.0, 3.0)


@settings(max_examples=200, deadline=None)
@given(coords, coords, vel, vel, act, act, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_step_invariants(px, py, vx, vy, ax, ay, wx, wy):
    task = TaskSpec(0, (0.4, 0.7), (wx, wy))
    state = EnvState(np.array([px, py]), np.array([vx, vy]))
    nxt, r, _, _ = envsuite.step(task, state, np.array([ax, ay]))
    assert 0.0 <= r <= 1.0
    assert np.all((nxt.position >= 0) & (nxt.position <= 1))
    assert np.all(np.abs(nxt.velocity) <= envsuite.V_MAX)
    again, r2, _, _ = envsuite.step(task, state, np.array([ax, ay]))
    assert again.position.tobytes() == nxt.position.tobytes() and r2 == r
