"""Experiment pipeline: data, embeddings, augmentation, agents, evaluation, tables and plots.

Every stage writes its artifacts plus a ``stage.json`` recording the
configuration key it was built from, so reruns reuse finished stages.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import datastore, envsuite, imagine, offrl, taskdecomp
from .datastore import MixConfig
from .imagine import AugmentConfig
from .offrl import AgentConfig
from .taskdecomp import TrainingConfig

log = logging.getLogger(__name__)

METHODS = ("onehot-baseline", "TE", "SRTD-Q", "SRTD", "SRTD+N", "SRTD+ID")
EMBED_VARIANT = {"TE": "TE", "SRTD-Q": "SRTD-Q", "SRTD": "SRTD", "SRTD+N": "SRTD", "SRTD+ID": "SRTD"}
AUGMENTATION = {"SRTD+N": "gaussian", "SRTD+ID": "imagined"}
RESULT_COLUMNS = ("method", "mix", "seed", "success_rate", "mean_return", "normalized_return")
DEFAULT_OUT = "srtd_runs"


def output_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get("SRTD_LAB_OUT") or DEFAULT_OUT)


@dataclass
class ExperimentSpec:
    num_tasks: int = 3
    suite_seed: int = 0
    horizon: int = 100
    mix: dict = field(default_factory=lambda: {"MR": 1, "RP": 1, "ME": 1})
    methods: list = field(default_factory=lambda: ["onehot-baseline", "SRTD", "SRTD+ID"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    scale: float = 1.0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_episodes: int = 20
    eval_seed: int = 10_000

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if sum(self.mix.get(t, 0) for t in datastore.TIERS) != self.num_tasks:
            raise ValueError(f"mix {self.mix} does not cover {self.num_tasks} tasks")
        if isinstance(self.training, dict):
            self.training = TrainingConfig(**self.training)
        if isinstance(self.agent, dict):
            self.agent = AgentConfig(**self.agent)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def to_dict(self):
        d = asdict(self)
        for k in ("training", "agent"):
            d[k]["hidden"] = list(d[k]["hidden"])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def mix_config(self, seed) -> MixConfig:
        mix = MixConfig.from_counts(self.mix.get("MR", 0), self.mix.get("RP", 0), self.mix.get("ME", 0), seed=seed)
        return MixConfig.scaled(mix, self.scale) if self.scale != 1.0 else mix

    @property
    def mix_descriptor(self):
        return "MR{MR}-RP{RP}-ME{ME}".format(**{t: self.mix.get(t, 0) for t in datastore.TIERS})


@dataclass
class ResultRow:
    method: str
    mix: str
    mean: float
    ci_half_width: float | None
    per_seed: list

    @property
    def ci_absent(self):
        return self.ci_half_width is None


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


# -- stage caching ------------------------------------------------------------


def _key(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _cached(stage_dir: Path, key: str) -> bool:
    f = stage_dir / "stage.json"
    return f.exists() and json.loads(f.read_text()).get("key") == key


def _mark(stage_dir: Path, name: str, key: str):
    (stage_dir / "stage.json").write_text(json.dumps({"stage": name, "key": key}, sort_keys=True))


def _run_stage(name, stage_dir: Path, key, build):
    stage_dir.mkdir(parents=True, exist_ok=True)
    if _cached(stage_dir, key):
        log.info("reusing %s (%s)", name, stage_dir)
        return
    try:
        build(stage_dir)
    except Exception as exc:
        raise StageError(name, exc) from exc
    _mark(stage_dir, name, key)


# -- pipeline -----------------------------------------------------------------


def stage_data(spec: ExperimentSpec, seed: int, out: Path) -> Path:
    suite = envsuite.make_suite(spec.num_tasks, spec.suite_seed, spec.horizon)
    mix = spec.mix_config(seed)
    d = out / f"seed{seed}" / "data"
    key = _key({"suite": envsuite.suite_to_json(suite), "mix": mix.to_json(), "n": spec.training.half_width})

    def build(d):
        ds = datastore.generate_dataset(suite, mix, spec.training.half_width)
        datastore.save(datastore.relabel_returns(ds), d / "dataset.bin")
        (d / "mix.json").write_text(mix.to_json())

    _run_stage("gen-data", d, key, build)
    return d / "dataset.bin"


def stage_embed(spec, seed, variant, data_path: Path, out: Path) -> Path:
    cfg = replace(spec.training, seed=seed, variant=variant)
    d = out / f"seed{seed}" / f"embed-{variant}"
    key = _key({"data": _file_digest(data_path), "cfg": asdict(cfg)})

    def build(d):
        res = taskdecomp.train_joint(datastore.load(data_path), cfg)
        taskdecomp.save_checkpoint(res, d)

    _run_stage("train-embed", d, key, build)
    return d


def stage_augment(spec, seed, kind, data_path: Path, embed_dir: Path | None, out: Path) -> Path:
    cfg = replace(spec.augment, seed=seed, episode_horizon=spec.horizon)
    d = out / f"seed{seed}" / f"augment-{kind}"
    deps = {"data": _file_digest(data_path), "cfg": asdict(cfg), "kind": kind}
    if kind == "imagined":
        deps["embed"] = _dir_digest(embed_dir)
    key = _key(deps)

    def build(d):
        models = taskdecomp.load_checkpoint(embed_dir) if kind == "imagined" else None
        ds = imagine.augment_dataset(datastore.load(data_path), models, cfg, kind)
        datastore.save(ds, d / "dataset.bin")
        imagine.write_report_csv(imagine.quality_report(ds), d / "quality_report.csv")

    _run_stage("augment", d, key, build)
    return d / "dataset.bin"


def stage_agent(spec, seed, method, data_path: Path, embed_dir: Path | None, out: Path) -> Path:
    mode = "one-hot" if method == "onehot-baseline" else "subtask-embedding"
    cfg = replace(spec.agent, seed=seed, mode=mode)
    d = out / f"seed{seed}" / f"agent-{method}"
    deps = {"data": _file_digest(data_path), "cfg": asdict(cfg), "num_tasks": spec.num_tasks}
    if embed_dir is not None:
        deps["embed"] = _dir_digest(embed_dir)
    key = _key(deps)

    def build(d):
        task_model = taskdecomp.load_checkpoint(embed_dir).task if embed_dir is not None else None
        agent, history = offrl.train_agent(datastore.load(data_path), cfg, task_model, spec.num_tasks)
        agent.save(d)
        (d / "train_log.json").write_text(json.dumps(history, sort_keys=True))

    _run_stage("train-agent", d, key, build)
    return d


def stage_eval(spec, seed, method, agent_dir: Path, embed_dir: Path | None, out: Path) -> dict:
    suite = envsuite.make_suite(spec.num_tasks, spec.suite_seed, spec.horizon)
    d = out / f"seed{seed}" / f"eval-{method}"
    key = _key({"agent": _dir_digest(agent_dir), "episodes": spec.eval_episodes, "eval_seed": spec.eval_seed + seed})

    def build(d):
        task_model = taskdecomp.load_checkpoint(embed_dir).task if embed_dir is not None else None
        agent = offrl.Agent.load(agent_dir, task_model)
        metrics = offrl.evaluate(agent, suite, spec.eval_episodes, spec.eval_seed + seed)
        (d / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
        offrl.write_eval_csv(metrics, d / "eval.csv")

    _run_stage("eval", d, key, build)
    return json.loads((d / "metrics.json").read_text())


def run_seed(spec: ExperimentSpec, seed: int, out: Path) -> list[dict]:
    """Full pipeline for one seed; returns one result record per method."""
    out = Path(out)
    data = stage_data(spec, seed, out)
    records, embeds = [], {}
    for method in spec.methods:
        try:
            embed_dir = None
            if method != "onehot-baseline":
                variant = EMBED_VARIANT[method]
                if variant not in embeds:
                    embeds[variant] = stage_embed(spec, seed, variant, data, out)
                embed_dir = embeds[variant]
            train_data = data
            if method in AUGMENTATION:
                train_data = stage_augment(spec, seed, AUGMENTATION[method], data, embed_dir, out)
            agent_dir = stage_agent(spec, seed, method, train_data, embed_dir, out)
            metrics = stage_eval(spec, seed, method, agent_dir, embed_dir, out)
        except StageError as err:
            log.error("seed %d method %s: %s", seed, method, err)
            _record_failure(out, seed, method, err)
            continue
        records.append({
            "method": method, "mix": spec.mix_descriptor, "seed": seed,
            "success_rate": metrics["success_rate"], "mean_return": metrics["mean_return"],
            "normalized_return": metrics["normalized_return"],
        })
    return records


def _record_failure(out: Path, seed, method, err: StageError):
    f = out / f"seed{seed}" / "failures.json"
    failures = json.loads(f.read_text()) if f.exists() else []
    failures.append({"method": method, "stage": err.stage, "error": str(err)})
    f.write_text(json.dumps(failures, indent=2))


def run_experiment(spec: ExperimentSpec, out=None, jobs: int = 1) -> list[ResultRow]:
    out = output_root(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(spec.to_json())
    envsuite.save_suite(envsuite.make_suite(spec.num_tasks, spec.suite_seed, spec.horizon), out / "suite.json")
    if jobs > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(run_seed, [spec] * len(spec.seeds), spec.seeds, [out] * len(spec.seeds)))
    else:
        per_seed = [run_seed(spec, s, out) for s in spec.seeds]
    records = [r for recs in per_seed for r in recs]
    write_results_csv(records, out / "results.csv")
    return rows_from_records(records)


def write_results_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in RESULT_COLUMNS})


def read_results_csv(path):
    with open(path) as fh:
        return [
            {**r, "seed": int(r["seed"]), **{k: float(r[k]) for k in RESULT_COLUMNS[3:]}}
            for r in csv.DictReader(fh)
        ]


def rows_from_records(records, metric="success_rate", percent=True) -> list[ResultRow]:
    """Aggregate per-seed records into one row per (method, mix)."""
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r["method"], r["mix"]), []).append(r[metric] * (100.0 if percent else 1.0))
    return [_row(m, mix, vals) for (m, mix), vals in groups.items()]


def confidence_half_width(values, level=0.95):
    k = len(values)
    if k < 2:
        return None
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.5 + level / 2.0, k - 1) * sd / np.sqrt(k))


def _row(method, mix, values):
    values = [float(v) for v in values]
    return ResultRow(method, mix, float(np.mean(values)), confidence_half_width(values), values)


# -- tables and plots ------------------------------------------------------------


TABLE_COLUMNS = ("method", "mix", "mean", "ci95_half_width", "seeds", "per_seed", "ci_absent")


def tabulate(rows: list[ResultRow]):
    """Return ``(text_table, csv_text)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    lines = [f"{'method':<16} {'mix':<14} {'mean':>8} {'95% CI':>9}  seeds"]
    for r in rows:
        ci = "" if r.ci_absent else f"{r.ci_half_width:.6g}"
        w.writerow([r.method, r.mix, f"{r.mean:.6g}", ci, len(r.per_seed),
                    " ".join(f"{v:.6g}" for v in r.per_seed), int(r.ci_absent)])
        ci_txt = "n/a" if r.ci_absent else f"±{r.ci_half_width:.2f}"
        lines.append(f"{r.method:<16} {r.mix:<14} {r.mean:>8.2f} {ci_txt:>9}  {len(r.per_seed)}")
    return "\n".join(lines), buf.getvalue()


def plot(rows: list[ResultRow], output, title="success rate (%)"):
    """Grouped bar chart (one group per mix, one bar per method) plus a CSV sidecar."""
    if not rows:
        warnings.warn("plot called with no rows; nothing written")
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    output = Path(output)
    if output.suffix != ".png":
        output = output / "results.png"
    output.parent.mkdir(parents=True, exist_ok=True)
    mixes = list(dict.fromkeys(r.mix for r in rows))
    methods = list(dict.fromkeys(r.method for r in rows))
    width = 0.8 / len(methods)
    fig, ax = plt.subplots(figsize=(1.5 + 1.6 * len(mixes), 3.5))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "method", "mean", "ci95_half_width"])
    for j, method in enumerate(methods):
        xs, ys, errs = [], [], []
        for i, mix in enumerate(mixes):
            row = next((r for r in rows if r.mix == mix and r.method == method), None)
            if row is None:
                continue
            xs.append(i + (j - (len(methods) - 1) / 2) * width)
            ys.append(row.mean)
            errs.append(0.0 if row.ci_absent else row.ci_half_width)
            w.writerow([mix, method, f"{row.mean:.6g}", "" if row.ci_absent else f"{row.ci_half_width:.6g}"])
        ax.bar(xs, ys, width, yerr=errs, capsize=3, label=method)
    ax.set_xticks(range(len(mixes)))
    ax.set_xticklabels(mixes)
    ax.set_ylabel(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(output, dpi=120, metadata={"Software": None})
    plt.close(fig)
    output.with_suffix(".csv").write_text(buf.getvalue())
    return output


# -- digests -----------------------------------------------------------------------


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dir_digest(path: Path | None) -> str | None:
    if path is None:
        return None
    h = hashlib.sha256()
    for f in sorted(Path(path).iterdir()):
        if f.name != "stage.json" and f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()
