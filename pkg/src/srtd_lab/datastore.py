"""Trajectory datasets: generation, quality relabeling, windows and files."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import envsuite
from .envsuite import ACT_DIM, OBS_DIM, TaskSpec

TIERS = ("MR", "RP", "ME")
TIER_QUALITY = {"MR": (0.0, 0.5), "RP": (0.0, 1.0), "ME": (0.5, 1.0)}
TIER_EPISODES = {"MR": 150, "RP": 100, "ME": 50}
ORIGINS = ("real", "imagined", "gaussian")
_MAGIC = b"SRTDDS01"


class DatasetFormatError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class Trajectory:
    task_id: int
    observations: np.ndarray  # (L + 1, obs_dim)
    actions: np.ndarray  # (L, act_dim)
    rewards: np.ndarray  # (L,)
    quality_weight: float | None = None
    origin: str = "real"
    behavior_quality: float | None = None
    latent: np.ndarray | None = None  # fixed context of an imagined segment

    def __post_init__(self):
        L = len(self.actions)
        if self.observations.shape[0] != L + 1 or self.rewards.shape != (L,):
            raise ValueError("trajectory arrays are misaligned")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def episodic_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def synthetic(self) -> bool:
        return self.origin != "real"

    def transitions(self) -> Iterator[Transition]:
        for t in range(self.length):
            yield Transition(
                self.observations[t], self.actions[t], float(self.rewards[t]),
                self.observations[t + 1], t == self.length - 1,
            )


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    task_ids: tuple[int, ...]
    seed: int | None = None
    half_width: int = 5

    def __len__(self):
        return len(self.trajectories)

    def by_task(self, task_id, origin=None) -> list[Trajectory]:
        return [
            tr for tr in self.trajectories
            if tr.task_id == task_id and (origin is None or tr.origin == origin)
        ]

    def real(self) -> list[Trajectory]:
        return [tr for tr in self.trajectories if tr.origin == "real"]

    def with_trajectories(self, trajectories) -> "Dataset":
        return replace(self, trajectories=tuple(trajectories))


@dataclass(frozen=True)
class MixConfig:
    tiers: dict[int, str]
    seed: int = 0
    episodes: dict[str, int] = field(default_factory=lambda: dict(TIER_EPISODES))

    def __post_init__(self):
        for tid, tier in self.tiers.items():
            if tier not in TIERS:
                raise ValueError(f"task {tid}: unknown tier {tier!r}")

    @classmethod
    def from_counts(cls, mr, rp, me, seed=0, episodes=None):
        """Assign tiers to task ids 0.. in MR, RP, ME order."""
        tiers = ["MR"] * mr + ["RP"] * rp + ["ME"] * me
        return cls({i: t for i, t in enumerate(tiers)}, seed, dict(episodes or TIER_EPISODES))

    @classmethod
    def scaled(cls, mix: "MixConfig", factor: float):
        """Shrink per-tier episode counts keeping their ratio."""
        eps = {k: max(1, int(round(v * factor))) for k, v in mix.episodes.items()}
        return replace(mix, episodes=eps)

    def counts(self) -> tuple[int, int, int]:
        vals = list(self.tiers.values())
        return tuple(vals.count(t) for t in TIERS)

    def descriptor(self) -> str:
        mr, rp, me = self.counts()
        return f"MR{mr}-RP{rp}-ME{me}"

    def to_json(self) -> str:
        doc = {
            "tasks": [{"id": int(k), "tier": v} for k, v in sorted(self.tiers.items())],
            "seed": self.seed,
            "episodes": self.episodes,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MixConfig":
        doc = json.loads(text)
        tiers = {int(t["id"]): t["tier"] for t in doc["tasks"]}
        return cls(tiers, int(doc.get("seed", 0)), dict(doc.get("episodes", TIER_EPISODES)))


def _episode(task, quality, seed, rng):
    return envsuite.rollout(task, lambda st: envsuite.scripted_policy(task, st, quality, rng), seed)


def generate_dataset(suite: Sequence[TaskSpec], mix: MixConfig, half_width: int = 5) -> Dataset:
    ids = {t.task_id for t in suite}
    if ids != set(mix.tiers):
        raise ValueError(f"suite tasks {sorted(ids)} do not match mix tasks {sorted(mix.tiers)}")
    trajectories = []
    for task in suite:
        tier = mix.tiers[task.task_id]
        lo, hi = TIER_QUALITY[tier]
        rng = np.random.default_rng([mix.seed, task.task_id, 7919])
        for _ in range(mix.episodes[tier]):
            q = float(rng.uniform(lo, hi))
            ep_seed = int(rng.integers(2**31 - 1))
            obs, acts, rews, _ = _episode(task, q, ep_seed, np.random.default_rng(ep_seed))
            trajectories.append(Trajectory(task.task_id, obs, acts, rews, behavior_quality=q))
    return Dataset(tuple(trajectories), tuple(t.task_id for t in suite), mix.seed, half_width)


def relabel_returns(dataset: Dataset) -> Dataset:
    """Per-task min-max normalized episodic returns as quality weights.

    Bounds come from real trajectories only; synthetic trajectories are
    scored against those bounds (their return rescaled to the task's real
    episode length) and clamped into [0, 1].
    """
    bounds = {}
    for tid in dataset.task_ids:
        real = dataset.by_task(tid, origin="real")
        if not real:
            raise ValueError(f"task {tid} has no real trajectories to normalize against")
        returns = np.array([tr.episodic_return for tr in real])
        bounds[tid] = (returns.min(), returns.max(), float(np.mean([tr.length for tr in real])))

    relabeled = []
    for tr in dataset.trajectories:
        lo, hi, ref_len = bounds[tr.task_id]
        if tr.origin == "real":
            g = tr.episodic_return
        else:
            g = float(tr.rewards.mean()) * ref_len if tr.length else lo
        w = 1.0 if hi == lo else (g - lo) / (hi - lo)
        relabeled.append(replace(tr, quality_weight=float(np.clip(w, 0.0, 1.0))))
    return dataset.with_trajectories(relabeled)


# -- windows -----------------------------------------------------------------


def flatten_skill(states, actions):
    """``(..., 2n, ds)`` states and ``(..., 2n, da)`` actions -> per-step (s, a) rows flattened."""
    both = np.concatenate([states, actions], axis=-1)
    return both.reshape(*both.shape[:-2], -1)


def flatten_task(states, actions, rewards):
    both = np.concatenate([states, actions, rewards[..., None]], axis=-1)
    return both.reshape(*both.shape[:-2], -1)


def skill_input_dim(n, obs_dim=OBS_DIM, act_dim=ACT_DIM):
    return 2 * n * (obs_dim + act_dim)


def task_input_dim(n, obs_dim=OBS_DIM, act_dim=ACT_DIM):
    return (n + 1) * (obs_dim + act_dim + 1)


@dataclass(frozen=True)
class SkillWindow:
    anchor: int
    states: np.ndarray  # s_{t-n .. t+n-1}
    actions: np.ndarray

    def flat(self):
        return flatten_skill(self.states, self.actions)


@dataclass(frozen=True)
class TaskWindow:
    anchor: int
    states: np.ndarray  # s_{t-n .. t}
    actions: np.ndarray  # a_{t-n .. t}
    rewards: np.ndarray  # r_{t-n .. t}
    next_states: np.ndarray  # s_{t-n+1 .. t+1}

    def flat(self):
        return flatten_task(self.states, self.actions, self.rewards)


def valid_anchors(length: int, n: int) -> range:
    return range(n, length - n)


def skill_window(tr: Trajectory, t: int, n: int) -> SkillWindow:
    if t not in valid_anchors(tr.length, n):
        raise WindowError(f"anchor {t} invalid for length {tr.length} and n={n}")
    return SkillWindow(t, tr.observations[t - n : t + n], tr.actions[t - n : t + n])


def task_window(tr: Trajectory, t: int, n: int) -> TaskWindow:
    if not n <= t <= tr.length - 1:
        raise WindowError(f"anchor {t} invalid for length {tr.length} and n={n}")
    sl = slice(t - n, t + 1)
    return TaskWindow(t, tr.observations[sl], tr.actions[sl], tr.rewards[sl], tr.observations[t - n + 1 : t + 2])


def padded_history(observations, actions, rewards, t: int, n: int):
    """The n+1 (s, a, r) triples preceding decision step ``t``.

    Missing entries before the episode start repeat the first observation with
    zero action and reward. Returns ``(states, actions, rewards)``.
    """
    k = n + 1
    lo = t - k
    states = np.empty((k, observations.shape[1]))
    acts = np.zeros((k, actions.shape[1] if len(actions) else ACT_DIM))
    rews = np.zeros(k)
    pad = max(0, -lo)
    states[:pad] = observations[0]
    if k - pad:
        states[pad:] = observations[max(lo, 0) : t]
        acts[pad:] = actions[max(lo, 0) : t]
        rews[pad:] = rewards[max(lo, 0) : t]
    return states, acts, rews


def history_contexts_input(tr: Trajectory, n: int) -> np.ndarray:
    """Flattened padded-history windows for every decision step 0..L."""
    rows = [flatten_task(*padded_history(tr.observations, tr.actions, tr.rewards, t, n)) for t in range(tr.length + 1)]
    return np.stack(rows)


@dataclass(frozen=True)
class WindowBatch:
    """Aligned skill and task windows at shared anchors."""

    n: int
    traj_index: np.ndarray
    anchors: np.ndarray
    task_ids: np.ndarray
    weights: np.ndarray
    states: np.ndarray  # s_{t-n .. t+max(n, 1)}
    actions: np.ndarray  # a_{t-n .. t+max(n, 1)}
    rewards: np.ndarray  # r_{t-n .. t}

    def __len__(self):
        return len(self.anchors)

    @property
    def skill_states(self):
        return self.states[:, : 2 * self.n]

    @property
    def skill_actions(self):
        return self.actions[:, : 2 * self.n]

    @property
    def task_states(self):
        return self.states[:, : self.n + 1]

    @property
    def task_actions(self):
        return self.actions[:, : self.n + 1]

    @property
    def task_rewards(self):
        return self.rewards

    @property
    def task_next_states(self):
        return self.states[:, 1 : self.n + 2]

    def skill_flat(self):
        return flatten_skill(self.skill_states, self.skill_actions)

    def task_flat(self):
        return flatten_task(self.task_states, self.task_actions, self.task_rewards)

    def with_weights(self, weights):
        return replace(self, weights=np.broadcast_to(np.asarray(weights, dtype=np.float64), self.weights.shape).copy())


class WindowIndex:
    """Flat view of a dataset for fast vectorized window sampling."""

    def __init__(self, dataset: Dataset, n: int, origins=None):
        self.n = n
        keep = [
            i for i, tr in enumerate(dataset.trajectories)
            if tr.length >= 2 * n + 1 and (origins is None or tr.origin in origins)
        ]
        if not keep:
            raise WindowError(f"no valid anchors: every episode is shorter than the minimum length {2 * n + 1}")
        trs = [dataset.trajectories[i] for i in keep]
        self.traj_ids = np.array(keep)
        self.obs = np.concatenate([tr.observations for tr in trs])
        self.act = np.concatenate([np.vstack([tr.actions, np.zeros((1, tr.actions.shape[1]))]) for tr in trs])
        self.rew = np.concatenate([np.append(tr.rewards, 0.0) for tr in trs])
        self.offsets = np.concatenate([[0], np.cumsum([tr.length + 1 for tr in trs])[:-1]])
        self.task = np.array([tr.task_id for tr in trs])
        self.weight = np.array([np.nan if tr.quality_weight is None else tr.quality_weight for tr in trs])
        counts = np.array([tr.length - 2 * n for tr in trs])
        self.cum = np.cumsum(counts)
        self.total = int(self.cum[-1])

    def locate(self, flat_idx):
        k = np.searchsorted(self.cum, flat_idx, side="right")
        start = np.where(k > 0, self.cum[k - 1], 0)
        return k, flat_idx - start + self.n

    def batch(self, local_traj, anchors) -> WindowBatch:
        n = self.n
        base = self.offsets[local_traj] + anchors
        # n = 0 still needs s_{t+1} as the dynamics target
        idx = base[:, None] + np.arange(-n, max(n, 1) + 1)[None, :]
        ridx = base[:, None] + np.arange(-n, 1)[None, :]
        return WindowBatch(
            n, self.traj_ids[local_traj], anchors, self.task[local_traj], self.weight[local_traj],
            self.obs[idx], self.act[idx], self.rew[ridx],
        )

    def sample(self, m, rng) -> WindowBatch:
        k, t = self.locate(rng.integers(self.total, size=m))
        return self.batch(k, t)

    def all(self) -> WindowBatch:
        k, t = self.locate(np.arange(self.total))
        return self.batch(k, t)


def sample_windows(dataset: Dataset, m: int, n: int, rng, origins=None) -> WindowBatch:
    return WindowIndex(dataset, n, origins).sample(m, rng)


# -- persistence -------------------------------------------------------------


def dumps_dataset(ds: Dataset) -> bytes:
    obs_dim = ds.trajectories[0].observations.shape[1] if ds.trajectories else OBS_DIM
    act_dim = ds.trajectories[0].actions.shape[1] if ds.trajectories else ACT_DIM
    latent_dim = next((len(tr.latent) for tr in ds.trajectories if tr.latent is not None), 0)
    meta, chunks = [], []
    for tr in ds.trajectories:
        meta.append({
            "task_id": int(tr.task_id), "length": tr.length, "origin": tr.origin,
            "quality_weight": tr.quality_weight, "behavior_quality": tr.behavior_quality,
            "latent": tr.latent is not None,
        })
        chunks += [tr.observations.ravel(), tr.actions.ravel(), tr.rewards]
        if tr.latent is not None:
            chunks.append(tr.latent)
    header = json.dumps({
        "obs_dim": obs_dim, "act_dim": act_dim, "latent_dim": latent_dim, "n": ds.half_width,
        "seed": ds.seed, "task_ids": list(ds.task_ids), "count": len(ds), "trajectories": meta,
    }, sort_keys=True).encode()
    payload = np.concatenate(chunks).astype("<f8").tobytes() if chunks else b""
    return _MAGIC + struct.pack("<Q", len(header)) + header + payload


def loads_dataset(blob: bytes, obs_dim=OBS_DIM, act_dim=ACT_DIM) -> Dataset:
    if len(blob) < 16 or blob[:8] != _MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        h = json.loads(blob[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"corrupted header: {exc}") from None
    if h["obs_dim"] != obs_dim or h["act_dim"] != act_dim:
        raise DatasetFormatError(
            f"dimension mismatch: file has obs_dim={h['obs_dim']}, act_dim={h['act_dim']}; "
            f"expected obs_dim={obs_dim}, act_dim={act_dim}"
        )
    od, ad, zd = h["obs_dim"], h["act_dim"], h["latent_dim"]
    need = sum((m["length"] + 1) * od + m["length"] * (ad + 1) + (zd if m["latent"] else 0) for m in h["trajectories"])
    payload = blob[16 + hlen :]
    if len(payload) != 8 * need:
        raise DatasetFormatError(f"truncated payload: {len(payload)} bytes, expected {8 * need}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    trs, k = [], 0
    for m in h["trajectories"]:
        L = m["length"]
        obs = flat[k : k + (L + 1) * od].reshape(L + 1, od); k += (L + 1) * od
        act = flat[k : k + L * ad].reshape(L, ad); k += L * ad
        rew = flat[k : k + L].copy(); k += L
        lat = None
        if m["latent"]:
            lat = flat[k : k + zd].copy(); k += zd
        trs.append(Trajectory(m["task_id"], obs.copy(), act.copy(), rew, m["quality_weight"], m["origin"], m["behavior_quality"], lat))
    return Dataset(tuple(trs), tuple(h["task_ids"]), h["seed"], h["n"])


def save(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(dataset))


def load(path, **kwargs) -> Dataset:
    return loads_dataset(Path(path).read_bytes(), **kwargs)


def checksum(dataset: Dataset) -> str:
    return hashlib.sha256(dumps_dataset(dataset)).hexdigest()


def expected_count(mix: MixConfig) -> int:
    return sum(mix.episodes[t] for t in mix.tiers.values())


def ceil_fraction(fraction: float, count: int) -> int:
    return int(math.ceil(fraction * count - 1e-12))
