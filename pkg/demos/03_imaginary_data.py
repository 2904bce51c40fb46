"""Imagined segments versus noise-perturbed copies of a low-quality dataset."""
from srtd_lab import datastore, envsuite, imagine, taskdecomp
from srtd_lab.imagine import AugmentConfig
from srtd_lab.taskdecomp import TrainingConfig

suite = envsuite.make_suite(3, seed=1)
source = datastore.relabel_returns(
    datastore.generate_dataset(suite, datastore.MixConfig.from_counts(3, 0, 0, seed=1))
)
models = taskdecomp.train_joint(source, TrainingConfig(seed=1, steps=3000))

# the environment rescorer is only used here to judge the data, never to build it
rescore = imagine.environment_rescorer(suite)
for method in ("imagined", "gaussian"):
    out = imagine.augment_dataset(source, models, AugmentConfig(seed=1), method)
    for row in imagine.quality_report(out, rescore):
        print(f"{method:>9} run | {row.origin:>9}: {row.count:4d} trajectories, mean reward {row.mean_reward:.3f}")
