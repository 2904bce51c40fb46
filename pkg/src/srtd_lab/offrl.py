"""TD3+BC agent conditioned on a task one-hot or a subtask embedding."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import envsuite
from .datastore import Dataset, flatten_task, history_contexts_input
from .envsuite import ACT_DIM, OBS_DIM
from .funcapprox import NonFiniteLossError, OptState, ParamMap, load_params, opt_step, save_params, value_and_grad
from .taskdecomp import TaskModel, encode_task

MODES = ("one-hot", "subtask-embedding")


@dataclass
class AgentConfig:
    mode: str = "subtask-embedding"
    alpha: float = 2.5
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_freq: int = 2
    batch_size: int = 256
    steps: int = 50_000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 3e-4

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.mode not in MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}")
        if not (self.alpha > 0 and 0 <= self.gamma < 1 and self.tau > 0):
            raise ValueError(f"invalid agent config {self}")


class HistoryBuffer:
    """Rolling window of the last n+1 ``(s, a, r)`` triples of the current episode."""

    def __init__(self, n, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        self.n, self.obs_dim, self.act_dim = n, obs_dim, act_dim
        self._triples = deque(maxlen=n + 1)
        self._first = None

    def reset(self, first_obs):
        self._triples.clear()
        self._first = np.asarray(first_obs, dtype=np.float64).copy()

    def push(self, s, a, r):
        self._triples.append((np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64), float(r)))

    def window(self):
        """``(states, actions, rewards)`` padded at the front with the first observation."""
        if self._first is None:
            raise RuntimeError("HistoryBuffer.reset must be called first")
        k = self.n + 1
        pad = k - len(self._triples)
        states = [self._first] * pad + [t[0] for t in self._triples]
        acts = [np.zeros(self.act_dim)] * pad + [t[1] for t in self._triples]
        rews = [0.0] * pad + [t[2] for t in self._triples]
        return np.array(states), np.array(acts), np.array(rews)

    def flat(self):
        return flatten_task(*self.window())


def one_hot(task_id, num_tasks):
    v = np.zeros(num_tasks)
    v[task_id] = 1.0
    return v


def build_state(s, context, expected_dim=None):
    context = np.asarray(context, dtype=np.float64)
    if expected_dim is not None and context.shape[-1] != expected_dim:
        raise ValueError(f"context has length {context.shape[-1]}, expected {expected_dim}")
    return np.concatenate([np.asarray(s, dtype=np.float64), context], axis=-1)


@dataclass
class TransitionArrays:
    obs: np.ndarray  # context-augmented
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.actions)


def trajectory_contexts(tr, mode, num_tasks, task_model: TaskModel | None):
    """Context for each decision step 0..L of one trajectory."""
    L = tr.length
    if mode == "one-hot":
        return np.repeat(one_hot(tr.task_id, num_tasks)[None, :], L + 1, axis=0)
    if tr.latent is not None:
        return np.repeat(np.asarray(tr.latent)[None, :], L + 1, axis=0)
    return task_model.encoder(history_contexts_input(tr, task_model.n))


def build_transitions(dataset: Dataset, mode, num_tasks=None, task_model=None) -> TransitionArrays:
    """Flatten a dataset into context-augmented transitions (contexts cached once)."""
    if mode == "subtask-embedding" and task_model is None:
        raise ValueError("embedding mode needs a trained task encoder")
    num_tasks = num_tasks or (max(dataset.task_ids) + 1)
    obs, act, rew, nxt, term = [], [], [], [], []
    for tr in dataset.trajectories:
        if tr.length == 0:
            continue
        ctx = trajectory_contexts(tr, mode, num_tasks, task_model)
        aug = np.concatenate([tr.observations, ctx], axis=1)
        obs.append(aug[:-1])
        nxt.append(aug[1:])
        act.append(tr.actions)
        rew.append(tr.rewards)
        # episodes end only by the time limit, so nothing is a true terminal
        term.append(np.zeros(tr.length))
    return TransitionArrays(*(np.concatenate(x) for x in (obs, act, rew, nxt, term)))


class Agent:
    def __init__(self, config: AgentConfig, obs_dim: int, context_dim: int, num_tasks: int,
                 task_model: TaskModel | None = None, act_dim: int = ACT_DIM):
        self.config = config
        self.obs_dim, self.context_dim, self.act_dim, self.num_tasks = obs_dim, context_dim, act_dim, num_tasks
        self.task_model = task_model
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        d = obs_dim + context_dim
        h = list(config.hidden)
        self.actor = ParamMap.create([d, *h, act_dim], "relu", "tanh", rng)
        self.critic1 = ParamMap.create([d + act_dim, *h, 1], "relu", "identity", rng)
        self.critic2 = ParamMap.create([d + act_dim, *h, 1], "relu", "identity", rng)
        self.actor_target = self.actor.with_params(self.actor.params)
        self.critic1_target = self.critic1.with_params(self.critic1.params)
        self.critic2_target = self.critic2.with_params(self.critic2.params)
        self.actor_opt = OptState.zeros(self.actor.num_params, config.learning_rate)
        self.critic_opt = OptState.zeros(self.critic1.num_params + self.critic2.num_params, config.learning_rate)
        self.obs_mean = np.zeros(d)
        self.obs_std = np.ones(d)
        self.updates = 0

    @property
    def input_dim(self):
        return self.obs_dim + self.context_dim

    def normalize(self, x):
        return (x - self.obs_mean) / self.obs_std

    def set_normalization(self, data: TransitionArrays):
        self.obs_mean = data.obs.mean(axis=0)
        self.obs_std = data.obs.std(axis=0) + 1e-3

    def act(self, augmented_obs):
        return self.actor(self.normalize(np.asarray(augmented_obs, dtype=np.float64)))

    # -- losses ------------------------------------------------------------
    def critic_targets(self, batch, rng):
        c = self.config
        s2 = self.normalize(batch["next_obs"])
        noise = np.clip(rng.standard_normal((len(s2), self.act_dim)) * c.policy_noise, -c.noise_clip, c.noise_clip)
        a2 = np.clip(self.actor_target(s2) + noise, -1.0, 1.0)
        x2 = np.concatenate([s2, a2], axis=1)
        q = np.minimum(self.critic1_target(x2), self.critic2_target(x2))[:, 0]
        return batch["rewards"] + c.gamma * (1.0 - batch["terminals"]) * q

    def critic_loss(self, batch, target, params=None):
        x = np.concatenate([self.normalize(batch["obs"]), batch["actions"]], axis=1)
        k = self.critic1.num_params
        p1, p2 = (None, None) if params is None else (params[:k], params[k:])
        if params is None:
            q1, q2 = ad.Var(self.critic1(x)), ad.Var(self.critic2(x))
        else:
            q1, q2 = self.critic1(x, p1), self.critic2(x, p2)
        t = target[:, None]
        return ((q1 - t) ** 2).mean() + ((q2 - t) ** 2).mean()

    def actor_loss(self, batch, params=None, parts=None, lmbda=None):
        """``-lambda * mean Q1(s, pi(s)) + mean ||pi(s) - a||^2`` with ``lambda = alpha / mean|Q|``.

        ``lambda`` is a constant scale (no gradient flows through it); pass
        ``lmbda`` to pin it, e.g. for finite-difference checks.
        """
        s = self.normalize(batch["obs"])
        pi = self.actor(ad.Var(s), self.actor.params if params is None else params)
        q = self.critic1(ad.concat([ad.Var(s), pi], axis=1))
        if lmbda is None:
            lmbda = self.config.alpha / (np.abs(q.value).mean() + 1e-8)
        bc = ((pi - batch["actions"]) ** 2).mean()
        loss = -lmbda * q.mean() + bc
        if parts is not None:
            parts.update(q_mean=float(q.value.mean()), bc=float(bc.value), lmbda=float(lmbda))
        return loss

    # -- update ------------------------------------------------------------
    def update(self, batch, rng):
        c = self.config
        target = self.critic_targets(batch, rng)
        critic_params = np.concatenate([self.critic1.params, self.critic2.params])
        closs, g = value_and_grad(lambda p: self.critic_loss(batch, target, p), critic_params)
        self.critic_opt, critic_params = opt_step(self.critic_opt, critic_params, g)
        k = self.critic1.num_params
        self.critic1 = self.critic1.with_params(critic_params[:k])
        self.critic2 = self.critic2.with_params(critic_params[k:])
        self.updates += 1
        diag = {"critic_loss": closs}
        if self.updates % c.policy_freq == 0:
            parts = {}
            aloss, g = value_and_grad(lambda p: self.actor_loss(batch, p, parts), self.actor.params)
            self.actor_opt, new = opt_step(self.actor_opt, self.actor.params, g)
            self.actor = self.actor.with_params(new)
            for name in ("actor", "critic1", "critic2"):
                net, tgt = getattr(self, name), getattr(self, name + "_target")
                setattr(self, name + "_target", tgt.with_params(c.tau * net.params + (1.0 - c.tau) * tgt.params))
            diag.update(actor_loss=aloss, **parts)
        return diag

    # -- evaluation hooks --------------------------------------------------
    def start_episode(self, task, first_obs):
        return _AgentEpisode(self, task.task_id, first_obs)

    # -- persistence -------------------------------------------------------
    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"):
            save_params(getattr(self, name), d / f"{name}.bin")
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        manifest = {
            "config": cfg, "mode": self.config.mode, "alpha": self.config.alpha, "gamma": self.config.gamma,
            "obs_dim": self.obs_dim, "context_dim": self.context_dim, "act_dim": self.act_dim,
            "num_tasks": self.num_tasks, "updates": self.updates,
            "obs_mean": self.obs_mean.tolist(), "obs_std": self.obs_std.tolist(),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory, task_model=None):
        d = Path(directory)
        m = json.loads((d / "manifest.json").read_text())
        agent = cls(AgentConfig(**m["config"]), m["obs_dim"], m["context_dim"], m["num_tasks"], task_model, m["act_dim"])
        for name in ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"):
            setattr(agent, name, load_params(d / f"{name}.bin"))
        agent.obs_mean, agent.obs_std = np.array(m["obs_mean"]), np.array(m["obs_std"])
        agent.updates = m["updates"]
        return agent


class _AgentEpisode:
    def __init__(self, agent: Agent, task_id, first_obs):
        self.agent = agent
        if agent.config.mode == "one-hot":
            self.task_id = task_id
            self.history = None
        else:
            # the task id is deliberately dropped in embedding mode
            self.task_id = None
            self.history = HistoryBuffer(agent.task_model.n, agent.obs_dim, agent.act_dim)
            self.history.reset(first_obs)

    def context(self):
        if self.history is None:
            return one_hot(self.task_id, self.agent.num_tasks)
        return encode_task(self.agent.task_model.encoder, self.history.flat())

    def act(self, obs):
        return self.agent.act(build_state(obs, self.context(), self.agent.context_dim))

    def record(self, obs, action, reward):
        if self.history is not None:
            self.history.push(obs, action, reward)


class ScriptedAgent:
    """Scripted behavior policy wrapped for :func:`evaluate` (reads the hidden drift)."""

    def __init__(self, quality=1.0, seed=0):
        self.quality = quality
        self.rng = np.random.default_rng(seed)

    def start_episode(self, task, first_obs):
        return _ScriptedEpisode(self, task)


class _ScriptedEpisode:
    def __init__(self, owner, task):
        self.owner, self.task = owner, task

    def act(self, obs):
        state = envsuite.EnvState(obs[:2], obs[2:4])
        return envsuite.scripted_policy(self.task, state, self.owner.quality, self.owner.rng)

    def record(self, obs, action, reward):
        pass


def sample_batch(data: TransitionArrays, size, rng):
    idx = rng.integers(len(data), size=size)
    return {
        "obs": data.obs[idx], "actions": data.actions[idx], "rewards": data.rewards[idx],
        "next_obs": data.next_obs[idx], "terminals": data.terminals[idx],
    }


def agent_update(batch, agent: Agent, rng):
    diag = agent.update(batch, rng)
    bad = {k: v for k, v in diag.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteLossError(bad, f"non-finite agent losses after update {agent.updates}: {diag}")
    return diag


def train_agent(dataset: Dataset, config: AgentConfig, task_model: TaskModel | None = None, num_tasks=None,
                log_every=1000):
    """Train on the static dataset only; the environment is never stepped."""
    num_tasks = num_tasks or (max(dataset.task_ids) + 1)
    data = build_transitions(dataset, config.mode, num_tasks, task_model)
    ctx_dim = num_tasks if config.mode == "one-hot" else task_model.dim_z
    agent = Agent(config, OBS_DIM, ctx_dim, num_tasks, task_model if config.mode != "one-hot" else None)
    agent.set_normalization(data)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    history = []
    for step in range(1, config.steps + 1):
        diag = agent_update(sample_batch(data, config.batch_size, rng), agent, rng)
        if step % log_every == 0:
            history.append({"step": step, **diag})
    return agent, history


def evaluate(agent, suite, episodes_per_task, seed, expert_returns=None):
    """Success rate and returns in the real environment.

    ``normalized_return`` divides by the scripted expert's mean return on the
    same tasks and episode seeds.
    """
    per_task = []
    expert = expert_returns if expert_returns is not None else expert_reference(suite, episodes_per_task, seed)
    for task in suite:
        returns, successes = [], 0
        for ep_seed in episode_seeds(seed, task.task_id, episodes_per_task):
            ret, succ = run_episode(agent, task, ep_seed)
            returns.append(ret)
            successes += succ
        per_task.append({
            "task_id": task.task_id, "episodes": episodes_per_task, "successes": successes,
            "mean_return": float(np.mean(returns)),
            "normalized_return": float(np.mean(returns) / expert[task.task_id]),
        })
    total = episodes_per_task * len(suite)
    mean_return = float(np.mean([r["mean_return"] for r in per_task]))
    return {
        "success_rate": sum(r["successes"] for r in per_task) / total,
        "mean_return": mean_return,
        "normalized_return": mean_return / float(np.mean([expert[t.task_id] for t in suite])),
        "per_task": per_task,
    }


def episode_seeds(seed, task_id, count):
    return np.random.default_rng([int(seed), int(task_id), 104729]).integers(2**31 - 1, size=count).tolist()


def run_episode(agent, task, ep_seed):
    state = envsuite.reset(task, ep_seed)
    obs = envsuite.observe(state)
    episode = agent.start_episode(task, obs)
    total, success, done = 0.0, False, False
    while not done:
        a = np.clip(episode.act(obs), -1.0, 1.0)
        state, r, done, s = envsuite.step(task, state, a)
        episode.record(obs, a, r)
        obs = envsuite.observe(state)
        total += r
        success = success or s
    return total, success


def expert_reference(suite, episodes_per_task, seed):
    expert = ScriptedAgent(1.0)
    return {
        t.task_id: float(np.mean([run_episode(expert, t, s)[0] for s in episode_seeds(seed, t.task_id, episodes_per_task)]))
        for t in suite
    }


def write_eval_csv(metrics, path):
    lines = ["task_id,episodes,successes,mean_return,normalized_return"]
    for r in metrics["per_task"]:
        lines.append(f"{r['task_id']},{r['episodes']},{r['successes']},{r['mean_return']!r},{r['normalized_return']!r}")
    Path(path).write_text("\n".join(lines) + "\n")
