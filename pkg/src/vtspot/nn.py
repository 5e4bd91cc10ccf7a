"""Small layer library on top of :mod:`vtspot.autograd`."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Parameter container; attributes holding tensors, modules or lists of modules
    are discovered by :meth:`named_parameters` in attribute-definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    """Uniform init with variance gain / fan_in (1: LeCun, 2: He for relu stacks)."""
    bound = math.sqrt(3.0 * gain / fan_in)
    return ag.parameter(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.weight = ag.parameter(np.zeros((d_in, d_out))) if zero else _uniform(rng, (d_in, d_out), d_in)
        self.bias = ag.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return ag.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = ag.parameter(np.ones(d))
        self.beta = ag.parameter(np.zeros(d))

    def __call__(self, x):
        return ag.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        self.weight = _uniform(rng, (c_out, c_in, k, k), c_in * k * k, gain=2.0)
        self.bias = ag.parameter(np.zeros(c_out))
        self._stride = stride
        self._pad = k // 2

    def __call__(self, x):
        return ag.conv2d(x, self.weight, self.bias, stride=self._stride, padding=self._pad)


class MLP(Module):
    def __init__(self, rng, d_in: int, d_hidden: int, d_out: int, zero_last: bool = False):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out, zero=zero_last)

    def __call__(self, x):
        return self.fc2(ag.relu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; q/k/v are [L, D] / [S, D] / [S, D].

    ``bias`` is an optional constant [heads, L, S] array added to the logits.
    """

    def __init__(self, rng, d_model: int, n_heads: int, zero_out: bool = False):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.q_proj = Linear(rng, d_model, d_model)
        self.k_proj = Linear(rng, d_model, d_model)
        self.v_proj = Linear(rng, d_model, d_model)
        self.out_proj = Linear(rng, d_model, d_model, zero=zero_out)
        self._h = n_heads

    def __call__(self, q, k, v, bias=None):
        h = self._h
        L, d = q.shape
        S = k.shape[0]
        dh = d // h
        qh = ag.transpose(ag.reshape(self.q_proj(q), (L, h, dh)), (1, 0, 2))
        kh = ag.transpose(ag.reshape(self.k_proj(k), (S, h, dh)), (1, 2, 0))
        vh = ag.transpose(ag.reshape(self.v_proj(v), (S, h, dh)), (1, 0, 2))
        logits = ag.mul(ag.matmul(qh, kh), 1.0 / math.sqrt(dh))
        if bias is not None:
            logits = ag.add(logits, Tensor(np.asarray(bias, dtype=np.float64)))
        att = ag.softmax(logits, axis=-1)
        ctx = ag.reshape(ag.transpose(ag.matmul(att, vh), (1, 0, 2)), (L, d))
        return self.out_proj(ctx)


class GRUCell(Module):
    def __init__(self, rng, d_in: int, d_hidden: int):
        self.w_x = Linear(rng, d_in, 3 * d_hidden)
        self.w_h = Linear(rng, d_hidden, 3 * d_hidden)
        self._d = d_hidden

    def __call__(self, x, h):
        d = self._d
        gx = self.w_x(x)
        gh = self.w_h(h)
        r = ag.sigmoid(ag.add(gx[:, :d], gh[:, :d]))
        z = ag.sigmoid(ag.add(gx[:, d:2 * d], gh[:, d:2 * d]))
        n = ag.tanh(ag.add(gx[:, 2 * d:], ag.mul(r, gh[:, 2 * d:])))
        return ag.add(ag.mul(ag.sub(1.0, z), n), ag.mul(z, h))


def sine_position_grid(h: int, w: int, d: int) -> np.ndarray:
    """2-D sinusoidal encoding, [h*w, d]: half the channels encode y, half x."""
    if d % 4:
        raise ValueError("position encoding width must be divisible by 4")
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return np.concatenate([sine_embed(ys.reshape(-1), d // 2), sine_embed(xs.reshape(-1), d // 2)], axis=1)


def sine_embed(v: np.ndarray, d: int, temperature: float = 20.0) -> np.ndarray:
    """Embed scalars in [0,1] as d sin/cos features."""
    v = np.asarray(v, dtype=np.float64).reshape(-1, 1)
    freqs = temperature ** (np.arange(d // 2) / max(1, d // 2)) * math.pi
    ang = v * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
