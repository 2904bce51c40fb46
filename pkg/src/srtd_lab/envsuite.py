"""Multi-task 2-D point-mass navigation with a hidden per-task drift.

Each task has a goal in the unit square and a constant wind ``drift`` that is
never part of the observation. Behavior data comes from a PD expert blended
with uniform noise through a quality knob ``q``.
"""
from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DT = 0.05
DRAG = 0.1
V_MAX = 0.1
SUCCESS_RADIUS = 0.05
KP, KD = 4.0, 2.0
OBS_DIM = 4
ACT_DIM = 2

_step_calls = 0


def step_count() -> int:
    """Total number of :func:`step` calls made in this process."""
    return _step_calls


@contextmanager
def count_steps():
    """Yield a callable returning the environment steps taken inside the block."""
    start = _step_calls
    yield lambda: _step_calls - start


class SuiteGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    goal: tuple[float, float]
    drift: tuple[float, float]
    horizon: int = 100

    def __post_init__(self):
        g = np.asarray(self.goal)
        if g.shape != (2,) or np.any(g < 0.0) or np.any(g > 1.0):
            raise ValueError(f"goal {self.goal} outside the unit square")
        if np.max(np.abs(self.drift)) > 0.5:
            raise ValueError(f"drift {self.drift} exceeds the 0.5 bound")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    def to_dict(self):
        return {"task_id": self.task_id, "goal": list(self.goal), "drift": list(self.drift), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["task_id"]), tuple(map(float, d["goal"])), tuple(map(float, d["drift"])), int(d["horizon"]))


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    t: int = 0


def observe(state: EnvState) -> np.ndarray:
    """Agent-visible observation ``(p, v)``; the drift is never included."""
    return np.concatenate([state.position, state.velocity])


def reset(task: TaskSpec, seed: int) -> EnvState:
    rng = np.random.default_rng([int(seed), int(task.task_id)])
    goal = np.asarray(task.goal)
    while True:
        p = rng.uniform(0.05, 0.95, size=2)
        if np.linalg.norm(p - goal) >= 0.2:
            return EnvState(p, np.zeros(2), 0)


def reward_at(task: TaskSpec, position) -> np.ndarray:
    """Reward for arriving at ``position`` (vectorized over leading axes)."""
    p = np.clip(np.asarray(position, dtype=np.float64), 0.0, 1.0)
    d = np.linalg.norm(p - np.asarray(task.goal), axis=-1)
    return 1.0 - d / np.sqrt(2.0)


def step(task: TaskSpec, state: EnvState, action, *, terminate_on_success=False):
    """Advance one step; returns ``(state, reward, done, success)``.

    Episodes end at the horizon. Reaching the goal sets ``success`` and only
    ends the episode when ``terminate_on_success`` is true.
    """
    global _step_calls
    _step_calls += 1
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    w = np.asarray(task.drift)
    v = np.clip(state.velocity + DT * (a + w) - DRAG * state.velocity, -V_MAX, V_MAX)
    p = np.clip(state.position + v, 0.0, 1.0)
    dist = float(np.linalg.norm(p - np.asarray(task.goal)))
    reward = 1.0 - dist / np.sqrt(2.0)
    success = dist < SUCCESS_RADIUS
    done = state.t + 1 >= task.horizon or (terminate_on_success and success)
    return EnvState(p, v, state.t + 1), reward, done, success


def expert_action(task: TaskSpec, state: EnvState) -> np.ndarray:
    g = np.asarray(task.goal)
    raw = KP * (g - state.position) - KD * state.velocity - np.asarray(task.drift)
    return np.clip(raw, -1.0, 1.0)


def scripted_policy(task: TaskSpec, state: EnvState, quality: float, rng) -> np.ndarray:
    """Blend of the drift-aware expert and uniform noise.

    The noise draw happens for every quality so that runs with different
    ``quality`` consume the same random stream.
    """
    u = rng.uniform(-1.0, 1.0, size=2)
    return np.clip(quality * expert_action(task, state) + (1.0 - quality) * u, -1.0, 1.0)


def make_suite(num_tasks: int, seed: int, horizon: int = 100, max_drift: float = 0.5) -> list[TaskSpec]:
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    rng = np.random.default_rng(seed)
    goals: list[np.ndarray] = []
    proposals = 0
    while len(goals) < num_tasks:
        if proposals >= 10_000:
            raise SuiteGenerationError(f"could not place {num_tasks} goals 0.1 apart after 10000 proposals")
        proposals += 1
        g = rng.uniform(0.1, 0.9, size=2)
        if all(np.linalg.norm(g - other) >= 0.1 for other in goals):
            goals.append(g)
    drifts = rng.uniform(-max_drift, max_drift, size=(num_tasks, 2))
    return [
        TaskSpec(i, (float(g[0]), float(g[1])), (float(w[0]), float(w[1])), horizon)
        for i, (g, w) in enumerate(zip(goals, drifts))
    ]


def rollout(task, policy, seed, *, terminate_on_success=False):
    """Run one episode with ``policy(state) -> action``.

    Returns ``(observations, actions, rewards, successes)`` with one more
    observation than actions.
    """
    state = reset(task, seed)
    obs, acts, rews, succ = [observe(state)], [], [], []
    done = False
    while not done:
        a = np.clip(np.asarray(policy(state), dtype=np.float64), -1.0, 1.0)
        state, r, done, s = step(task, state, a, terminate_on_success=terminate_on_success)
        obs.append(observe(state))
        acts.append(a)
        rews.append(r)
        succ.append(s)
    return np.array(obs), np.array(acts), np.array(rews), np.array(succ)


def suite_to_json(suite) -> str:
    return json.dumps({"tasks": [t.to_dict() for t in suite]}, indent=2, sort_keys=True)


def suite_from_json(text: str) -> list[TaskSpec]:
    return [TaskSpec.from_dict(d) for d in json.loads(text)["tasks"]]


def save_suite(suite, path) -> None:
    Path(path).write_text(suite_to_json(suite))


def load_suite(path) -> list[TaskSpec]:
    return suite_from_json(Path(path).read_text())
