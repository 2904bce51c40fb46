import numpy as np
import pytest

from srtd_lab import autodiff as ad
from srtd_lab.funcapprox import check_grad


def _check(fn, x, tol=1e-6):
    err, _, _ = check_grad(fn, x)
    assert err < tol


def test_broadcast_ops():
    base = np.random.default_rng(0).normal(size=6)
    _check(lambda v: ((v.reshape(2, 3) * np.array([1.0, 2.0, 3.0]) + v[:3]) ** 2).sum(), base)


def test_division_and_pow():
    _check(lambda v: (1.0 / (v * v + 1.0)).sum() + (v**3).mean(), np.linspace(-1, 1, 5))


def test_fancy_index_accumulates():
    idx = np.array([0, 0, 2])
    _check(lambda v: (v[idx] ** 2).sum(), np.array([1.0, 2.0, 3.0]))


def test_concat_and_matmul():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 4))
    _check(lambda v: (ad.concat([v.reshape(3, 2), v.reshape(3, 2) * 2], axis=1) @ A.T).sum(), rng.normal(size=6))


def test_norm_gradient_and_zero_subgradient():
    _check(lambda v: ad.norm(v.reshape(2, 3), axis=-1).sum(), np.array([0.3, -1.0, 2.0, 0.1, 0.2, -0.4]))
    v = ad.Var(np.zeros(3))
    ad.norm(v).backward()
    assert not v.grad.any()


def test_pairwise_sqdist_matches_direct():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    direct = ((x[:, None] - y[None]) ** 2).sum(-1)
    np.testing.assert_allclose(ad.pairwise_sqdist(x, y).value, direct, atol=1e-12)


def test_pairwise_sqdist_gradient():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 4))
    _check(lambda v: (ad.pairwise_sqdist(v.reshape(3, 2), y) * w).sum(), rng.normal(size=6))
    _check(lambda v: (ad.pairwise_sqdist(v.reshape(3, 2), v.reshape(3, 2)) * w[:, :3]).sum(), rng.normal(size=6))


@pytest.mark.parametrize("fn", [ad.tanh, ad.exp, lambda v: ad.relu(v) * v])
def test_elementwise(fn):
    _check(lambda v: fn(v).sum(), np.array([-0.7, 0.2, 1.3]))


def test_detach_blocks_gradient():
    v = ad.Var(np.ones(3))
    (v.detach() * v).sum().backward()
    np.testing.assert_allclose(v.grad, np.ones(3))
