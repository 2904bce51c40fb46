"""Skill embedding autoencoder with a kernel MMD prior penalty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .datastore import WindowBatch, skill_input_dim
from .envsuite import ACT_DIM, OBS_DIM
from .funcapprox import DimensionError, ParamMap

DEFAULT_DIM_Z = 8


@dataclass(frozen=True)
class KernelSpec:
    family: str = "imq"  # "imq" (inverse multiquadratic) or "rbf"
    scale: float = 2.0 * DEFAULT_DIM_Z

    def __post_init__(self):
        if self.family not in ("imq", "rbf"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("kernel scale must be positive")

    @classmethod
    def default(cls, dim_z=DEFAULT_DIM_Z, prior_var=1.0):
        return cls("imq", 2.0 * dim_z * prior_var)

    def to_dict(self):
        return {"family": self.family, "scale": self.scale}


def kernel_matrix(x, y, kernel: KernelSpec):
    d2 = ad.pairwise_sqdist(x, y)
    if kernel.family == "imq":
        return kernel.scale / (d2 + kernel.scale)
    return ad.exp(d2 * (-0.5 / kernel.scale))


def kernel_value(x, y, kernel: KernelSpec) -> float:
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    if kernel.family == "imq":
        return kernel.scale / (kernel.scale + d2)
    return float(np.exp(-0.5 * d2 / kernel.scale))


def mmd_penalty(b, b_prior, kernel: KernelSpec | None = None):
    """Kernel discrepancy between encoded embeddings and prior samples.

    Within-batch sums exclude the diagonal and use ``1/(m(m-1))``; the cross
    sum runs over all pairs with coefficient ``1/m**2``.
    """
    m = ad.value_of(b).shape[0]
    if m < 2 or ad.value_of(b_prior).shape[0] != m:
        raise ValueError(f"mmd_penalty needs two batches of equal size m >= 2, got {m} and {ad.value_of(b_prior).shape[0]}")
    kernel = kernel or KernelSpec.default(ad.value_of(b).shape[1])
    off = 1.0 - np.eye(m)
    k_bb = (kernel_matrix(b, b, kernel) * off).sum()
    k_pp = (kernel_matrix(b_prior, b_prior, kernel) * off).sum()
    k_bp = kernel_matrix(b, b_prior, kernel).sum()
    return k_bb / (m * (m - 1)) + k_pp / (m * (m - 1)) - k_bp / (m * m)


def sample_prior(rng, m, dim_z):
    return rng.standard_normal((m, dim_z))


@dataclass
class SkillModel:
    encoder: ParamMap  # q_phi: flattened skill window -> b
    decoder: ParamMap  # p_phi: (s, b) -> action in [-1, 1]
    n: int

    @classmethod
    def create(cls, n=5, dim_z=DEFAULT_DIM_Z, hidden=(64, 64), rng=None, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        rng = np.random.default_rng(rng)
        enc = ParamMap.create([skill_input_dim(n, obs_dim, act_dim), *hidden, dim_z], "tanh", "identity", rng)
        dec = ParamMap.create([obs_dim + dim_z, *hidden, act_dim], "tanh", "tanh", rng)
        return cls(enc, dec, n)

    @property
    def dim_z(self):
        return self.encoder.out_dim


def encode_skill(encoder: ParamMap, window, params=None):
    """Embedding of one window (``SkillWindow`` or flat vector) or a batch of flat rows."""
    x = window if isinstance(window, (np.ndarray, ad.Var, list)) else window.flat()
    if ad.value_of(x).shape[-1] != encoder.in_dim:
        raise DimensionError(f"skill window has length {ad.value_of(x).shape[-1]}, encoder expects {encoder.in_dim}")
    return encoder(x, params)


def decode_action(decoder: ParamMap, s, b, params=None):
    if not isinstance(s, Var) and not isinstance(b, Var) and not isinstance(params, Var):
        return decoder(np.concatenate([np.asarray(s, dtype=np.float64), np.asarray(b, dtype=np.float64)], axis=-1), params)
    return decoder(ad.concat([s, b], axis=-1), params)


def reconstruction_term(batch: WindowBatch, decoder: ParamMap, b, dec_params=None):
    """``(1/m) sum_i sum_j ||a_{t_i+j} - p_phi(s_{t_i+j}, b_i)||``, unsquared norm per step."""
    m, steps = len(batch), 2 * batch.n
    s = batch.skill_states.reshape(m * steps, -1)
    b = ad.as_var(b)
    b_rep = b.reshape(m, 1, -1) + np.zeros((1, steps, 1))
    inp = ad.concat([ad.Var(s), b_rep.reshape(m * steps, -1)], axis=-1)
    pred = decoder(inp, dec_params)
    resid = ad.Var(batch.skill_actions.reshape(m * steps, -1)) - pred
    return ad.norm(resid, axis=-1).sum() / m


def skill_loss(batch: WindowBatch, model: SkillModel, lam=1.0, prior=None, rng=None, kernel=None, params=None):
    """Skill autoencoder loss: reconstruction plus ``lam`` times the MMD penalty.

    ``params`` optionally supplies the concatenated (encoder, decoder) vector
    as a ``Var`` for differentiation. ``prior`` defaults to standard normal
    draws from ``rng``.
    """
    m = len(batch)
    if m < 2:
        raise ValueError("skill_loss needs a batch of at least 2 windows")
    enc_p = dec_p = None
    if params is not None:
        k = model.encoder.num_params
        enc_p, dec_p = params[:k], params[k:]
    b = encode_skill(model.encoder, ad.Var(batch.skill_flat()), enc_p)
    loss = reconstruction_term(batch, model.decoder, b, dec_p)
    if lam:
        if prior is None:
            prior = sample_prior(np.random.default_rng(rng), m, model.dim_z)
        loss = loss + lam * mmd_penalty(b, prior, kernel or KernelSpec.default(model.dim_z))
    return loss
