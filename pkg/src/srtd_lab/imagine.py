"""Imaginary demonstrations from the trained decoders, plus a Gaussian-noise baseline."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datastore import Dataset, TaskWindow, Trajectory, ceil_fraction, relabel_returns, task_window
from .envsuite import reward_at
from .skillspace import SkillModel, decode_action
from .taskdecomp import JointResult, TaskModel, decode_dynamics, encode_task

SELECTIONS = ("uniform", "top-quality")


@dataclass
class AugmentConfig:
    horizon: int | None = None  # None means n + 1
    fraction: float = 0.5
    selection: str = "top-quality"
    sigma: float = 0.01
    seed: int = 0
    episode_horizon: int = 100

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.horizon is not None and not 0 <= self.horizon <= self.episode_horizon:
            raise ValueError("imagined horizon must lie in [0, episode horizon]")


def imagine_rollout(task_model: TaskModel, skill_model: SkillModel, seed_window: TaskWindow, horizon: int,
                    task_id: int = -1) -> Trajectory:
    """Roll the skill decoder (as policy) through the task decoder (as world model).

    The subtask embedding is computed once from the real seed window and held
    fixed for the whole segment.
    """
    z = encode_task(task_model.encoder, seed_window)
    s = np.asarray(seed_window.states[-1], dtype=np.float64)
    obs, acts, rews = [s], [], []
    for _ in range(horizon):
        a = decode_action(skill_model.decoder, s, z)
        s_next, r = decode_dynamics(task_model.decoder, s, a, z)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s_next)) and np.isfinite(r)):
            break
        acts.append(a)
        rews.append(float(r))
        obs.append(s_next)
        s = s_next
    act_dim = skill_model.decoder.out_dim
    return Trajectory(
        task_id, np.array(obs), np.array(acts).reshape(len(acts), act_dim), np.array(rews),
        origin="imagined", latent=np.asarray(z, dtype=np.float64),
    )


def gaussian_augment(traj: Trajectory, sigma: float, rng) -> Trajectory:
    """Copy of ``traj`` with i.i.d. N(0, sigma^2) noise on every state component."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    noise = rng.standard_normal(traj.observations.shape) * sigma if sigma > 0 else 0.0
    return Trajectory(
        traj.task_id, traj.observations + noise, traj.actions.copy(), traj.rewards.copy(),
        origin="gaussian", behavior_quality=traj.behavior_quality,
    )


def _source_pool(dataset: Dataset, selection: str, n: int):
    real = [tr for tr in dataset.real() if tr.length >= n + 1]
    if selection == "uniform":
        return real
    pool = []
    for tid in dataset.task_ids:
        group = [tr for tr in real if tr.task_id == tid]
        if not group:
            continue
        med = np.median([tr.quality_weight for tr in group])
        pool += [tr for tr in group if tr.quality_weight >= med]
    return pool


def augment_dataset(dataset: Dataset, models: JointResult | None, cfg: AugmentConfig, method: str = "imagined") -> Dataset:
    """Append ``ceil(fraction * real count)`` synthetic trajectories and relabel.

    ``method="imagined"`` rolls out the trained decoders from seed windows;
    ``method="gaussian"`` adds state-noised copies of uniformly chosen real
    trajectories.
    """
    real = dataset.real()
    if any(tr.quality_weight is None for tr in real):
        raise ValueError("dataset must be relabeled before augmentation")
    count = ceil_fraction(cfg.fraction, len(real))
    if count == 0:
        return dataset
    rng = np.random.default_rng([cfg.seed, 31337])
    added = []
    if method == "gaussian":
        for i in rng.integers(len(real), size=count):
            added.append(gaussian_augment(real[i], cfg.sigma, rng))
    elif method == "imagined":
        if models is None or models.steps_done <= 0:
            raise ValueError("imagined augmentation needs trained embedding models")
        n = models.task.n
        horizon = n + 1 if cfg.horizon is None else cfg.horizon
        pool = _source_pool(dataset, cfg.selection, n)
        for _ in range(count):
            tr = pool[int(rng.integers(len(pool)))]
            t = int(rng.integers(n, tr.length))
            added.append(imagine_rollout(models.task, models.skill, task_window(tr, t, n), horizon, tr.task_id))
    else:
        raise ValueError(f"unknown augmentation method {method!r}")
    return relabel_returns(dataset.with_trajectories([*dataset.trajectories, *added]))


# -- reporting ---------------------------------------------------------------


def environment_rescorer(suite):
    """Reward of every generated state under the true task reward.

    Evaluation oracle only: it reads the task goals and is never used while
    building augmented data.
    """
    tasks = {t.task_id: t for t in suite}

    def rescore(tr: Trajectory):
        return reward_at(tasks[tr.task_id], tr.observations[1:, :2])

    return rescore


@dataclass
class ReportRow:
    origin: str
    count: int
    mean_reward: float
    std: float
    transitions: int = field(default=0)


def quality_report(dataset: Dataset, reward_fn=None) -> list[ReportRow]:
    """Mean per-step reward for each data origin (real, imagined, gaussian)."""
    rows = []
    for origin in ("real", "imagined", "gaussian"):
        group = [tr for tr in dataset.trajectories if tr.origin == origin and tr.length > 0]
        if not group:
            continue
        rewards = np.concatenate([reward_fn(tr) if reward_fn else tr.rewards for tr in group])
        rows.append(ReportRow(origin, len(group), float(rewards.mean()), float(rewards.std()), len(rewards)))
    return rows


def write_report_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "count", "mean_reward", "std"])
        for r in rows:
            w.writerow([r.origin, r.count, repr(r.mean_reward), repr(r.std)])
    return Path(path)
