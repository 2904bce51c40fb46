"""Parameterized maps, analytic gradients, finite-difference checks and Adam.

A :class:`ParamMap` is a fully connected network whose weights live in a
single flat float64 vector. Its forward pass accepts either plain arrays or
:class:`~srtd_lab.autodiff.Var` objects, so any loss built from maps can be
differentiated with :func:`grad`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Var, as_var

ACTIVATIONS = ("tanh", "relu", "identity")
_MAGIC = b"SRTDMAP1"


class DimensionError(ValueError):
    """Input does not match the dimension a map or window expects."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, value, message=None):
        self.value = value
        super().__init__(message or f"loss is not finite: {value!r}")


class FormatError(ValueError):
    """A serialized file has a bad header or truncated payload."""


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(name, pre, post):
    if name == "tanh":
        return 1.0 - post**2
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    return None


@dataclass
class ParamMap:
    layer_sizes: list[int]
    activations: list[str]
    output_activation: str = "identity"
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 2:
            raise ValueError("need one activation per hidden layer")
        for a in [*self.activations, self.output_activation]:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.params is None:
            self.params = np.zeros(self.num_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} params, got {self.params.shape}")

    @classmethod
    def create(cls, layer_sizes, activation="tanh", output_activation="identity", rng=None):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        hidden = [activation] * (len(layer_sizes) - 2)
        net = cls(list(layer_sizes), hidden, output_activation)
        chunks = []
        for fan_in, fan_out in zip(net.layer_sizes[:-1], net.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        net.params = np.concatenate(chunks)
        return net

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def num_params(self):
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def with_params(self, params):
        return replace(self, params=np.array(params, dtype=np.float64))

    def zero_last_layer(self):
        p = self.params.copy()
        i, o = self.layer_sizes[-2], self.layer_sizes[-1]
        p[-(i + 1) * o :] = 0.0
        return self.with_params(p)

    def unpack(self, params=None):
        """List of ``(W, b)`` with ``W`` shaped ``(in, out)``."""
        p = self.params if params is None else params
        out, k = [], 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = p[k : k + i * o].reshape(i, o)
            k += i * o
            out.append((W, p[k : k + o]))
            k += o
        return out

    def _acts(self):
        return [*self.activations, self.output_activation]

    def __call__(self, x, params=None):
        """Apply the map to ``x`` of shape ``(in,)`` or ``(batch, in)``.

        If ``x`` or ``params`` is a :class:`Var`, the result is a ``Var``
        connected to both; otherwise a plain array is returned.
        """
        differentiable = isinstance(x, Var) or isinstance(params, Var)
        xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
        if xv.shape[-1] != self.in_dim or xv.ndim not in (1, 2):
            raise DimensionError(f"map expects input of length {self.in_dim}, got shape {xv.shape}")
        if params is None:
            params = self.params
        pv = params.value if isinstance(params, Var) else np.asarray(params, dtype=np.float64)
        if pv.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} params, got {pv.shape}")
        single = xv.ndim == 1
        h = xv[None, :] if single else xv
        layers = self.unpack(pv)
        acts = self._acts()
        if not differentiable:
            for (W, b), a in zip(layers, acts):
                h = _act(a, h @ W + b)
            return h[0] if single else h

        inputs, pres, posts = [], [], []
        for (W, b), a in zip(layers, acts):
            inputs.append(h)
            pre = h @ W + b
            h = _act(a, pre)
            pres.append(pre)
            posts.append(h)
        xs, ps = as_var(x), as_var(params)
        out = Var(h[0] if single else h, (xs, ps))

        def backward(g):
            g = g[None, :] if single else g
            pgrads = []
            for idx in range(len(layers) - 1, -1, -1):
                d = _act_grad(acts[idx], pres[idx], posts[idx])
                if d is not None:
                    g = g * d
                W = layers[idx][0]
                pgrads.append(g.sum(axis=0))
                pgrads.append((inputs[idx].T @ g).ravel())
                g = g @ W.T
            ps._accumulate(np.concatenate(pgrads[::-1]))
            xs._accumulate(g[0] if single else g)

        out._backward = backward
        return out


def forward(net: ParamMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward takes a single input vector")
    return net(x)


def grad(loss_closure, params) -> np.ndarray:
    """Gradient of a scalar loss built from ``Var`` operations."""
    p = Var(np.array(params, dtype=np.float64))
    out = loss_closure(p)
    val = float(out.value if isinstance(out, Var) else out)
    if not np.isfinite(val):
        raise NonFiniteLossError(val)
    if not isinstance(out, Var):
        return np.zeros_like(p.value)
    out.backward()
    return np.zeros_like(p.value) if p.grad is None else p.grad


def value_and_grad(loss_closure, params):
    p = Var(np.array(params, dtype=np.float64))
    out = loss_closure(p)
    val = float(out.value if isinstance(out, Var) else out)
    if not np.isfinite(val):
        raise NonFiniteLossError(val)
    if not isinstance(out, Var):
        return val, np.zeros_like(p.value)
    out.backward()
    return val, (np.zeros_like(p.value) if p.grad is None else p.grad)


def numerical_grad(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    params = np.array(params, dtype=np.float64)
    g = np.zeros_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        fp = float(loss_fn(params))
        params[i] = old - h
        fm = float(loss_fn(params))
        params[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor=1e-8):
    """Coordinate-wise ``|a-n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_grad(loss_closure, params, h=1e-5, floor=1e-6):
    """Return the largest relative error between analytic and numeric gradients.

    Coordinates where both gradients are below ``floor`` in magnitude are
    compared absolutely, since relative error is meaningless there.
    """
    analytic = grad(loss_closure, params)
    numeric = numerical_grad(lambda p: float(loss_closure(Var(p)).value), params, h=h)
    return float(relative_error(analytic, numeric, floor=floor).max()), analytic, numeric


# -- optimizer -----------------------------------------------------------


@dataclass
class OptState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, learning_rate=3e-4, betas=(0.9, 0.999), eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError("decay coefficients must lie in (0, 1)")
        return cls(0, np.zeros(size), np.zeros(size), float(learning_rate), tuple(betas), eps)


def opt_step(state: OptState, params, grads):
    """One Adam descent step; returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise DimensionError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, state {state.first_moment.shape}"
        )
    b1, b2 = state.betas
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grads
    v = b2 * state.second_moment + (1.0 - b2) * grads**2
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, step_count=t, first_moment=m, second_moment=v), new_params


# -- groups of maps sharing one flat vector --------------------------------


class ParamGroup:
    """Several named maps viewed as one flat parameter vector."""

    def __init__(self, **maps: ParamMap):
        self.names = list(maps)
        self.maps = dict(maps)
        sizes = [m.num_params for m in maps.values()]
        self._bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def size(self):
        return int(self._bounds[-1])

    def flat(self):
        return np.concatenate([self.maps[n].params for n in self.names])

    def split(self, flat):
        return {n: flat[self._bounds[i] : self._bounds[i + 1]] for i, n in enumerate(self.names)}

    def assign(self, flat):
        parts = self.split(np.asarray(flat, dtype=np.float64))
        self.maps = {n: self.maps[n].with_params(parts[n]) for n in self.names}
        return self

    def __getitem__(self, name):
        return self.maps[name]


# -- serialization ----------------------------------------------------------


def dumps_params(net: ParamMap) -> bytes:
    header = json.dumps(
        {
            "layer_sizes": net.layer_sizes,
            "activations": net.activations,
            "output_activation": net.output_activation,
            "dtype": "<f8",
            "count": net.num_params,
        },
        sort_keys=True,
    ).encode()
    return _MAGIC + struct.pack("<I", len(header)) + header + net.params.astype("<f8").tobytes()


def loads_params(blob: bytes) -> ParamMap:
    if len(blob) < 12 or blob[:8] != _MAGIC:
        raise FormatError("not a parameter file (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupted header: {exc}") from None
    if header.get("dtype") != "<f8":
        raise FormatError(f"unsupported dtype tag {header.get('dtype')!r}")
    payload = blob[12 + hlen :]
    if len(payload) != 8 * header["count"]:
        raise FormatError(f"payload has {len(payload)} bytes, expected {8 * header['count']}")
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ParamMap(header["layer_sizes"], header["activations"], header["output_activation"], params)


def save_params(net: ParamMap, path) -> None:
    Path(path).write_bytes(dumps_params(net))


def load_params(path) -> ParamMap:
    return loads_params(Path(path).read_bytes())
