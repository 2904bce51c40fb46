"""Tasks, behaviour tiers and quality weights on a three-task suite."""
import numpy as np

from srtd_lab import datastore, envsuite

suite = envsuite.make_suite(3, seed=0)
for task in suite:
    print(f"task {task.task_id}: goal={np.round(task.goal, 2)} drift={np.round(task.drift, 2)}")

# mean return of the scripted policy as its quality knob moves from noise to expert
for q in (0.0, 0.5, 1.0):
    returns = []
    for seed in range(20):
        task = suite[seed % 3]
        rng = np.random.default_rng(seed)
        _, _, rews, _ = envsuite.rollout(task, lambda s: envsuite.scripted_policy(task, s, q, rng), seed)
        returns.append(rews.sum())
    print(f"q={q:.1f}: mean return {np.mean(returns):.1f}")

# one task per tier, at a fifth of the default episode counts
mix = datastore.MixConfig.scaled(datastore.MixConfig.from_counts(1, 1, 1, seed=0), 0.2)
ds = datastore.relabel_returns(datastore.generate_dataset(suite, mix))
print(mix.descriptor(), "->", len(ds), "trajectories")
for tid, tier in mix.tiers.items():
    group = ds.by_task(tid)
    ret = np.array([tr.episodic_return for tr in group])
    w = np.array([tr.quality_weight for tr in group])
    q = np.array([tr.behavior_quality for tr in group])
    print(f"  task {tid} ({tier}): return {ret.min():.1f}..{ret.max():.1f}, corr(weight, q) {np.corrcoef(q, w)[0, 1]:.2f}")

batch = datastore.sample_windows(ds, 4, 5, np.random.default_rng(0))
print("skill window input:", batch.skill_flat().shape, " task window input:", batch.task_flat().shape)
