"""A reduced method sweep through the experiment harness, with table and chart.

Artifacts go to $SRTD_LAB_OUT (default ./srtd_runs/demo). Agent steps are
cut to 5000 so the sweep finishes in a few minutes; the full setting uses 50000.
"""
from pathlib import Path

from srtd_lab import harness
from srtd_lab.harness import ExperimentSpec
from srtd_lab.offrl import AgentConfig
from srtd_lab.taskdecomp import TrainingConfig

spec = ExperimentSpec(
    methods=["onehot-baseline", "SRTD", "SRTD+ID"],
    seeds=[0, 1],
    scale=0.2,
    training=TrainingConfig(steps=2000),
    agent=AgentConfig(steps=5000),
    eval_episodes=10,
)
out = harness.output_root() / "demo"
rows = harness.run_experiment(spec, out)
text, _ = harness.tabulate(rows)
print(text)
print("chart:", harness.plot(rows, Path(out) / "plots"))
