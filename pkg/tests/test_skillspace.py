import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from srtd_lab import autodiff as ad
from srtd_lab import datastore, envsuite
from srtd_lab.funcapprox import check_grad
from srtd_lab.skillspace import (
    KernelSpec,
    SkillModel,
    decode_action,
    encode_skill,
    kernel_matrix,
    mmd_penalty,
    reconstruction_term,
    sample_prior,
    skill_loss,
)

KERNEL = KernelSpec.default(3)


def test_zero_last_layer_gives_zero_code():
    model = SkillModel.create(n=2, dim_z=3, hidden=(8,), rng=0)
    enc = model.encoder.zero_last_layer()
    x = np.random.default_rng(0).normal(size=(5, enc.in_dim))
    assert not encode_skill(enc, x).any()


def test_identical_windows_identical_codes():
    model = SkillModel.create(rng=1)
    w = np.random.default_rng(0).normal(size=model.encoder.in_dim)
    assert encode_skill(model.encoder, w).tolist() == encode_skill(model.encoder, w.copy()).tolist()


def test_decoder_bounded_and_deterministic():
    model = SkillModel.create(rng=2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        s, b = rng.normal(size=4) * 5, rng.normal(size=8) * 5
        a = decode_action(model.decoder, s, b)
        assert np.all(np.abs(a) <= 1.0)
        assert a.tolist() == decode_action(model.decoder, s, b).tolist()


def test_mmd_degenerate_batches_equal_one():
    b = np.ones((6, 3))
    assert float(mmd_penalty(b, b.copy(), KERNEL).value) == pytest.approx(1.0, abs=1e-12)


def test_mmd_two_points_hand_expansion():
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = np.array([[0.5, 0.5], [-1.0, 2.0]])
    k = KernelSpec("imq", 4.0)

    def kv(x, y):
        return 4.0 / (4.0 + np.sum((x - y) ** 2))

    expected = (
        (kv(b[0], b[1]) + kv(b[1], b[0])) / 2
        + (kv(p[0], p[1]) + kv(p[1], p[0])) / 2
        - (kv(b[0], p[0]) + kv(b[0], p[1]) + kv(b[1], p[0]) + kv(b[1], p[1])) / 4
    )
    assert float(mmd_penalty(b, p, k).value) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("m", [3, 8])
def test_mmd_matches_double_sum(m):
    rng = np.random.default_rng(m)
    b, p = rng.normal(size=(m, 4)), rng.normal(size=(m, 4))
    kernel = KernelSpec.default(4)
    assert abs(float(mmd_penalty(b, p, kernel).value) - oracles.mmd(b.tolist(), p.tolist(), oracles.imq(8.0))) < 1e-10


def test_rbf_kernel_family():
    x = np.array([[0.0, 0.0]])
    y = np.array([[1.0, 1.0]])
    assert float(kernel_matrix(x, y, KernelSpec("rbf", 2.0)).value[0, 0]) == pytest.approx(np.exp(-0.5))


def test_mmd_input_validation():
    with pytest.raises(ValueError):
        mmd_penalty(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        mmd_penalty(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        KernelSpec("cauchy", 1.0)


batches = st.integers(2, 6).flatmap(
    lambda m: st.tuples(st.integers(0, 2**31 - 1), st.just(m))
)


@settings(max_examples=50, deadline=None)
@given(batches)
def test_mmd_symmetric_and_permutation_invariant(args):
    seed, m = args
    rng = np.random.default_rng(seed)
    b, p = rng.normal(size=(m, 3)), rng.normal(size=(m, 3))
    v = float(mmd_penalty(b, p, KERNEL).value)
    assert float(mmd_penalty(p, b, KERNEL).value) == pytest.approx(v, abs=1e-12)
    assert float(mmd_penalty(b[rng.permutation(m)], p[rng.permutation(m)], KERNEL).value) == pytest.approx(v, abs=1e-12)


def test_prior_moments():
    draws = sample_prior(np.random.default_rng(0), 100_000, 1).ravel()
    se_mean = 1 / np.sqrt(draws.size)
    se_var = np.sqrt(2 / (draws.size - 1))
    assert abs(draws.mean()) < 3 * se_mean
    assert abs(draws.var(ddof=1) - 1) < 3 * se_var


def _tiny():
    return SkillModel.create(n=2, dim_z=3, hidden=(8, 8), rng=4)


def test_perfect_decoder_leaves_only_penalty():
    model = _tiny()
    # make the encoder blind to actions so that rewriting them keeps b fixed
    W = model.encoder.params.copy()
    width = model.encoder.layer_sizes[1]
    for j in range(4):
        for col in (6 * j + 4, 6 * j + 5):
            W[col * width : (col + 1) * width] = 0.0
    model.encoder = model.encoder.with_params(W)
    rng = np.random.default_rng(0)
    batch = oracles.random_batch(4, 2, rng)
    b = encode_skill(model.encoder, batch.skill_flat())
    actions = batch.actions.copy()
    flat_states = batch.skill_states.reshape(16, 4)
    actions[:, :4] = decode_action(model.decoder, flat_states, np.repeat(b, 4, axis=0)).reshape(4, 4, 2)
    exact = type(batch)(**{**batch.__dict__, "actions": actions})
    prior = rng.normal(size=(4, 3))
    loss = float(skill_loss(exact, model, lam=0.7, prior=prior, kernel=KERNEL).value)
    assert loss == pytest.approx(0.7 * float(mmd_penalty(b, prior, KERNEL).value), abs=1e-12)


def test_lambda_zero_is_reconstruction():
    model = _tiny()
    batch = oracles.random_batch(4, 2, np.random.default_rng(1))
    b = encode_skill(model.encoder, batch.skill_flat())
    assert float(skill_loss(batch, model, lam=0.0).value) == pytest.approx(
        float(reconstruction_term(batch, model.decoder, b).value), abs=1e-14
    )


def test_skill_loss_matches_unrolled_oracle():
    model = _tiny()
    rng = np.random.default_rng(2)
    batch = oracles.random_batch(4, 2, rng)
    prior = rng.normal(size=(4, 3))
    got = float(skill_loss(batch, model, lam=1.0, prior=prior, kernel=KERNEL).value)
    assert abs(got - oracles.skill_loss(batch, model, 1.0, prior.tolist(), oracles.imq(KERNEL.scale))) < 1e-12


def test_skill_loss_gradient():
    model = _tiny()
    rng = np.random.default_rng(3)
    batch = oracles.random_batch(4, 2, rng)
    prior = rng.normal(size=(4, 3))
    params = np.concatenate([model.encoder.params, model.decoder.params])
    err, _, _ = check_grad(lambda p: skill_loss(batch, model, 1.0, prior=prior, kernel=KERNEL, params=p), params)
    assert err < 1e-3


def test_penalty_gradient():
    rng = np.random.default_rng(5)
    prior = rng.normal(size=(5, 3))
    err, _, _ = check_grad(lambda v: mmd_penalty(v.reshape(5, 3), prior, KERNEL), rng.normal(size=15))
    assert err < 1e-3


def test_window_dimension_checked():
    model = _tiny()
    with pytest.raises(ValueError):
        encode_skill(model.encoder, np.zeros(model.encoder.in_dim + 1))


# -- after training -----------------------------------------------------------------


def _quality_windows(suite, quality, count, offset):
    rows = []
    for s in range(count):
        task = suite[s % len(suite)]
        rng = np.random.default_rng(offset + s)
        o, a, r, _ = envsuite.rollout(task, lambda st: envsuite.scripted_policy(task, st, quality, rng), offset + s)
        tr = datastore.Trajectory(task.task_id, o, a, r)
        rows += [datastore.skill_window(tr, t, 5).flat() for t in range(5, 95, 9)]
    return np.array(rows)


def test_codes_separate_expert_from_random(trained):
    suite, _, res = trained
    x = np.vstack([_quality_windows(suite, 0.0, 30, 500), _quality_windows(suite, 1.0, 30, 500)])
    y = np.r_[-np.ones(len(x) // 2), np.ones(len(x) // 2)]
    feats = np.c_[res.skill.encoder(x), np.ones(len(x))]
    order = np.random.default_rng(0).permutation(len(y))
    fit, held = order[: len(y) // 2], order[len(y) // 2 :]
    w = np.linalg.lstsq(feats[fit], y[fit], rcond=None)[0]
    assert np.mean(np.sign(feats[held] @ w) == y[held]) >= 0.8


def test_heldout_reconstruction(trained):
    suite, _, res = trained
    mix = datastore.MixConfig.from_counts(1, 1, 1, seed=100, episodes={"MR": 20, "RP": 20, "ME": 20})
    b = datastore.WindowIndex(datastore.generate_dataset(suite, mix), 5).all()
    codes = res.skill.encoder(b.skill_flat())
    m = len(b)
    pred = decode_action(res.skill.decoder, b.skill_states.reshape(m * 10, -1), np.repeat(codes, 10, axis=0))
    assert np.mean((pred - b.skill_actions.reshape(m * 10, -1)) ** 2) < 0.1
