"""Independent scalar reference implementations used as test oracles.

Everything here works on plain Python floats with explicit loops, sharing no
code with the package beyond the flat parameter layout (per layer: weights
stored input-major, then biases).
"""
import math

import numpy as np

from srtd_lab.datastore import WindowBatch

ACTS = {"identity": lambda v: v, "tanh": math.tanh, "relu": lambda v: max(v, 0.0)}


def mlp(params, sizes, hidden_act, out_act, x):
    p = [float(v) for v in params]
    h = [float(v) for v in x]
    k = 0
    for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = ACTS[out_act if layer == len(sizes) - 2 else hidden_act]
        out = []
        for o in range(n_out):
            acc = p[k + n_in * n_out + o]
            for i in range(n_in):
                acc += h[i] * p[k + i * n_out + o]
            out.append(act(acc))
        k += n_in * n_out + n_out
        h = out
    return h


def dist(u, v):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))


def imq(c):
    return lambda u, v: c / (c + dist(u, v) ** 2)


def mmd(b, prior, kernel):
    m = len(b)
    within_b = sum(kernel(b[i], b[j]) for i in range(m) for j in range(m) if i != j)
    within_p = sum(kernel(prior[i], prior[j]) for i in range(m) for j in range(m) if i != j)
    cross = sum(kernel(b[i], prior[j]) for i in range(m) for j in range(m))
    return within_b / (m * (m - 1)) + within_p / (m * (m - 1)) - cross / (m * m)


def _net(pm):
    return pm.params, pm.layer_sizes, (pm.activations[0] if pm.activations else "identity"), pm.output_activation


def skill_codes(batch, encoder):
    n = batch.n
    codes = []
    for i in range(len(batch)):
        row = []
        for j in range(2 * n):
            row += list(batch.states[i, j]) + list(batch.actions[i, j])
        codes.append(mlp(*_net(encoder), row))
    return codes


def task_codes(batch, encoder):
    n = batch.n
    codes = []
    for i in range(len(batch)):
        row = []
        for j in range(n + 1):
            row += list(batch.states[i, j]) + list(batch.actions[i, j]) + [batch.rewards[i, j]]
        codes.append(mlp(*_net(encoder), row))
    return codes


def skill_loss(batch, model, lam, prior, kernel):
    m, n = len(batch), batch.n
    b = skill_codes(batch, model.encoder)
    rec = 0.0
    for i in range(m):
        for j in range(2 * n):
            pred = mlp(*_net(model.decoder), list(batch.states[i, j]) + b[i])
            rec += dist(batch.actions[i, j], pred)
    return rec / m + lam * mmd(b, prior, kernel)


def te_loss(batch, model):
    m, n = len(batch), batch.n
    z = task_codes(batch, model.encoder)
    total = 0.0
    for i in range(m):
        for j in range(n + 1):
            pred = mlp(*_net(model.decoder), list(batch.states[i, j]) + list(batch.actions[i, j]) + z[i])
            target = list(batch.states[i, j + 1]) + [batch.rewards[i, j]]
            total += dist(target, pred)
    return total / m


def sr_loss(batch, task, skill, weights=None):
    z, b = task_codes(batch, task.encoder), skill_codes(batch, skill.encoder)
    w = batch.weights if weights is None else weights
    return sum(w[i] * dist(z[i], b[i]) for i in range(len(batch))) / len(batch)


def srtd_loss(batch, task, skill, lam, prior, kernel):
    return te_loss(batch, task) + sr_loss(batch, task, skill) + lam * mmd(task_codes(batch, task.encoder), prior, kernel)


def random_batch(m, n, rng, obs_dim=4, act_dim=2):
    """Synthetic window batch with random contents (no environment needed)."""
    span = n + max(n, 1) + 1
    return WindowBatch(
        n, np.arange(m), np.full(m, n), np.zeros(m, dtype=int), rng.uniform(0, 1, m),
        rng.uniform(0, 1, (m, span, obs_dim)), rng.uniform(-1, 1, (m, span, act_dim)),
        rng.uniform(0, 1, (m, n + 1)),
    )


def t_half_width(values, t_crit):
    k = len(values)
    mean = sum(values) / k
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (k - 1))
    return t_crit * sd / math.sqrt(k)
