"""Task embedding autoencoder, quality-weighted skill regularization and joint training."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datastore import Dataset, WindowBatch, WindowIndex, task_input_dim
from .envsuite import ACT_DIM, OBS_DIM
from .funcapprox import (
    DimensionError, NonFiniteLossError, OptState, ParamMap, load_params, opt_step, save_params, value_and_grad,
)
from .skillspace import KernelSpec, SkillModel, mmd_penalty, reconstruction_term, sample_prior

log = logging.getLogger(__name__)

VARIANTS = ("SRTD", "SRTD-Q", "TE")
LOG_COLUMNS = ("step", "L_SE", "L_TE", "L_SR", "L_PR_skill", "L_PR_task")


class TrainingError(RuntimeError):
    def __init__(self, step, components):
        self.step, self.components = step, components
        super().__init__(f"non-finite loss at step {step}: {components}")


@dataclass
class TaskModel:
    encoder: ParamMap  # q_theta: flattened task window -> z
    decoder: ParamMap  # p_theta: (s, a, z) -> (s_next, r)
    n: int

    @classmethod
    def create(cls, n=5, dim_z=8, hidden=(64, 64), rng=None, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        rng = np.random.default_rng(rng)
        enc = ParamMap.create([task_input_dim(n, obs_dim, act_dim), *hidden, dim_z], "tanh", "identity", rng)
        dec = ParamMap.create([obs_dim + act_dim + dim_z, *hidden, obs_dim + 1], "tanh", "identity", rng)
        return cls(enc, dec, n)

    @property
    def dim_z(self):
        return self.encoder.out_dim


def encode_task(encoder: ParamMap, window, params=None):
    x = window if isinstance(window, (np.ndarray, ad.Var, list)) else window.flat()
    if ad.value_of(x).shape[-1] != encoder.in_dim:
        raise DimensionError(f"task window has length {ad.value_of(x).shape[-1]}, encoder expects {encoder.in_dim}")
    return encoder(x, params)


def decode_dynamics(decoder: ParamMap, s, a, z, params=None):
    """Predicted ``(s_next, r)`` for one transition or a batch."""
    if any(isinstance(v, ad.Var) for v in (s, a, z)) or params is not None:
        out = decoder(ad.concat([s, a, z], axis=-1), params)
        return out[..., :-1], out[..., -1]
    out = decoder(np.concatenate([np.asarray(s), np.asarray(a), np.asarray(z)], axis=-1))
    return out[..., :-1], out[..., -1]


def _split(params, *maps):
    if params is None:
        return [None] * len(maps)
    out, k = [], 0
    for m in maps:
        out.append(params[k : k + m.num_params])
        k += m.num_params
    return out


def _te_from_z(batch: WindowBatch, decoder: ParamMap, z, dec_params=None):
    m, steps = len(batch), batch.n + 1
    s = batch.task_states.reshape(m * steps, -1)
    a = batch.task_actions.reshape(m * steps, -1)
    z = ad.as_var(z)
    z_rep = (z.reshape(m, 1, -1) + np.zeros((1, steps, 1))).reshape(m * steps, -1)
    pred = decoder(ad.concat([ad.Var(s), ad.Var(a), z_rep], axis=-1), dec_params)
    target = np.concatenate(
        [batch.task_next_states.reshape(m * steps, -1), batch.task_rewards.reshape(m * steps, 1)], axis=-1
    )
    return ad.norm(ad.Var(target) - pred, axis=-1).sum() / m


def _sr_from_z(z, b, weights):
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(~np.isfinite(weights)):
        raise ValueError("quality weights are unset; run relabel_returns first")
    dist = ad.norm(ad.as_var(z) - ad.value_of(b), axis=-1)
    return (dist * weights).sum() / len(weights)


def te_loss(batch: WindowBatch, model: TaskModel, params=None):
    enc_p, dec_p = _split(params, model.encoder, model.decoder)
    z = encode_task(model.encoder, ad.Var(batch.task_flat()), enc_p)
    return _te_from_z(batch, model.decoder, z, dec_p)


def sr_loss(batch: WindowBatch, task: TaskModel, skill: SkillModel, task_params=None, skill_params=None):
    """Quality-weighted distance between task and skill embeddings.

    Skill embeddings enter as constants: no gradient reaches ``skill_params``.
    """
    enc_p, _ = _split(task_params, task.encoder, task.decoder)
    s_enc_p, _ = _split(skill_params, skill.encoder, skill.decoder)
    if s_enc_p is not None:
        s_enc_p = ad.value_of(s_enc_p)
    b = skill.encoder(batch.skill_flat(), s_enc_p)
    z = encode_task(task.encoder, ad.Var(batch.task_flat()), enc_p)
    return _sr_from_z(z, b, batch.weights)


def srtd_terms(batch, task: TaskModel, skill: SkillModel, lam=1.0, prior=None, kernel=None, params=None,
               variant="SRTD", skill_b=None):
    """Named components of the task-side objective (``Var`` values)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    enc_p, dec_p = _split(params, task.encoder, task.decoder)
    z = encode_task(task.encoder, ad.Var(batch.task_flat()), enc_p)
    terms = {"L_TE": _te_from_z(batch, task.decoder, z, dec_p)}
    if variant != "TE":
        b = skill.encoder(batch.skill_flat()) if skill_b is None else skill_b
        weights = batch.weights if variant == "SRTD" else np.ones(len(batch))
        terms["L_SR"] = _sr_from_z(z, b, weights)
    else:
        terms["L_SR"] = ad.Var(0.0)
    if lam:
        if prior is None:
            raise ValueError("prior samples are required when lam > 0")
        terms["L_PR_task"] = mmd_penalty(z, prior, kernel or KernelSpec.default(task.dim_z))
    else:
        terms["L_PR_task"] = ad.Var(0.0)
    return terms


def srtd_loss(batch, task: TaskModel, skill: SkillModel, lam=1.0, prior=None, rng=None, kernel=None, params=None,
              variant="SRTD"):
    if len(batch) < 2:
        raise ValueError("srtd_loss needs a batch of at least 2 windows")
    if prior is None and lam:
        prior = sample_prior(np.random.default_rng(rng), len(batch), task.dim_z)
    t = srtd_terms(batch, task, skill, lam, prior, kernel, params, variant)
    return t["L_TE"] + t["L_SR"] + lam * t["L_PR_task"]


@dataclass
class TrainingConfig:
    lam: float = 1.0
    batch_size: int = 64
    learning_rate: float = 3e-4
    half_width: int = 5
    dim_z: int = 8
    steps: int = 5000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    variant: str = "SRTD"
    log_every: int = 100

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.batch_size < 2 or self.learning_rate <= 0 or self.half_width < 1 or self.dim_z < 1 or self.lam < 0:
            raise ValueError(f"invalid training config {self}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class JointResult:
    skill: SkillModel
    task: TaskModel
    config: TrainingConfig
    log: list[dict] = field(default_factory=list)
    steps_done: int = 0


def train_joint(dataset: Dataset, config: TrainingConfig, skill: SkillModel | None = None,
                task: TaskModel | None = None) -> JointResult:
    """Interleaved descent on the skill loss (skill nets) and task loss (task nets)."""
    cfg = config
    if any(tr.quality_weight is None for tr in dataset.real()):
        raise ValueError("dataset must be relabeled with quality weights before training")
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, sample_rng, prior_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    skill = skill or SkillModel.create(cfg.half_width, cfg.dim_z, cfg.hidden, init_rng)
    task = task or TaskModel.create(cfg.half_width, cfg.dim_z, cfg.hidden, init_rng)
    index = WindowIndex(dataset, cfg.half_width, origins=("real",))
    kernel = KernelSpec.default(cfg.dim_z)

    phi = np.concatenate([skill.encoder.params, skill.decoder.params])
    theta = np.concatenate([task.encoder.params, task.decoder.params])
    phi_state = OptState.zeros(phi.size, cfg.learning_rate)
    theta_state = OptState.zeros(theta.size, cfg.learning_rate)
    k_phi, k_theta = skill.encoder.num_params, task.encoder.num_params
    history = []

    for step in range(1, cfg.steps + 1):
        batch = index.sample(cfg.batch_size, sample_rng)
        prior_b = sample_prior(prior_rng, cfg.batch_size, cfg.dim_z)
        prior_z = sample_prior(prior_rng, cfg.batch_size, cfg.dim_z)
        comp = {}

        def se_closure(p):
            b = skill.encoder(ad.Var(batch.skill_flat()), p[:k_phi])
            rec = reconstruction_term(batch, skill.decoder, b, p[k_phi:])
            pr = mmd_penalty(b, prior_b, kernel)
            comp["L_SE"], comp["L_PR_skill"] = rec.value + cfg.lam * pr.value, pr.value
            comp["_b"] = b.value
            return rec + cfg.lam * pr

        def srtd_closure(p):
            t = srtd_terms(batch, task, skill, cfg.lam, prior_z, kernel, p, cfg.variant, skill_b=comp["_b"])
            comp.update({k: v.value for k, v in t.items()})
            return t["L_TE"] + t["L_SR"] + cfg.lam * t["L_PR_task"]

        try:
            _, g_phi = value_and_grad(se_closure, phi)
            _, g_theta = value_and_grad(srtd_closure, theta)
        except NonFiniteLossError:
            raise TrainingError(step, {k: float(v) for k, v in comp.items() if k != "_b"}) from None
        phi_state, phi = opt_step(phi_state, phi, g_phi)
        theta_state, theta = opt_step(theta_state, theta, g_theta)
        skill.encoder, skill.decoder = skill.encoder.with_params(phi[:k_phi]), skill.decoder.with_params(phi[k_phi:])
        task.encoder, task.decoder = task.encoder.with_params(theta[:k_theta]), task.decoder.with_params(theta[k_theta:])

        if step % cfg.log_every == 0 or step == cfg.steps:
            row = {"step": step, **{k: float(comp.get(k, 0.0)) for k in LOG_COLUMNS[1:]}}
            history.append(row)
            log.debug("step %d %s", step, row)
    return JointResult(skill, task, cfg, history, cfg.steps)


# -- diagnostics ---------------------------------------------------------------


def embedding_pairs(dataset: Dataset, skill: SkillModel, task: TaskModel):
    """Task and skill embeddings at every valid anchor of the real data."""
    batch = WindowIndex(dataset, task.n, origins=("real",)).all()
    z = task.encoder(batch.task_flat())
    b = skill.encoder(batch.skill_flat())
    return z, b, batch


def quality_distance_quartiles(dataset: Dataset, skill: SkillModel, task: TaskModel):
    """Mean ``||z - b||`` over top-quartile and bottom-quartile quality anchors."""
    z, b, batch = embedding_pairs(dataset, skill, task)
    dist = np.linalg.norm(z - b, axis=1)
    w = batch.weights
    hi, lo = np.quantile(w, 0.75), np.quantile(w, 0.25)
    return float(dist[w >= hi].mean()), float(dist[w <= lo].mean())


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(result: JointResult, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_params(result.skill.encoder, d / "skill_encoder.bin")
    save_params(result.skill.decoder, d / "skill_decoder.bin")
    save_params(result.task.encoder, d / "task_encoder.bin")
    save_params(result.task.decoder, d / "task_decoder.bin")
    with open(d / "loss_log.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in result.log:
            w.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in LOG_COLUMNS})
    cfg = asdict(result.config)
    cfg["hidden"] = list(cfg["hidden"])
    manifest = {
        "config": cfg, "steps": result.steps_done, "loss_log": "loss_log.csv",
        "dim_z": result.task.dim_z, "n": result.task.n,
        "kernel": KernelSpec.default(result.task.dim_z).to_dict(), "lam": result.config.lam,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_checkpoint(directory) -> JointResult:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cfg = TrainingConfig(**manifest["config"])
    n = manifest["n"]
    skill = SkillModel(load_params(d / "skill_encoder.bin"), load_params(d / "skill_decoder.bin"), n)
    task = TaskModel(load_params(d / "task_encoder.bin"), load_params(d / "task_decoder.bin"), n)
    rows = []
    if (d / "loss_log.csv").exists():
        with open(d / "loss_log.csv") as fh:
            rows = [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]
    return JointResult(skill, task, cfg, rows, manifest["steps"])
