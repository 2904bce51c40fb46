"""Joint skill/task embedding training and what the codes end up encoding.

Pass a step count on the command line; the default of 1500 runs in about ten
seconds, 5000 reproduces the full setting.
"""
import sys

import numpy as np

from srtd_lab import datastore, envsuite, taskdecomp
from srtd_lab.taskdecomp import TrainingConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
suite = envsuite.make_suite(3, seed=0)
ds = datastore.relabel_returns(datastore.generate_dataset(suite, datastore.MixConfig.from_counts(1, 1, 1, seed=0)))

res = taskdecomp.train_joint(ds, TrainingConfig(steps=steps, log_every=max(steps // 10, 1)))
print(f"{'step':>6} {'L_SE':>8} {'L_TE':>8} {'L_SR':>8}")
for row in res.log:
    print(f"{row['step']:>6} {row['L_SE']:8.3f} {row['L_TE']:8.3f} {row['L_SR']:8.3f}")

top, bottom = taskdecomp.quality_distance_quartiles(ds, res.skill, res.task)
print(f"mean |z - b|: top-quality quartile {top:.3f}, bottom quartile {bottom:.3f}")

z, _, batch = taskdecomp.embedding_pairs(ds, res.skill, res.task)
centers = np.array([z[batch.task_ids == t].mean(0) for t in ds.task_ids])
print("distance between task centroids:")
print(np.round(np.linalg.norm(centers[:, None] - centers[None], axis=-1), 2))
