"""Parameterised building blocks: convolutions, linear maps, norms, LSTMs."""

from __future__ import annotations

import zlib

import numpy as np

from . import ops
from .tensor import Tensor, concat, default_dtype, layer_norm, matmul


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Independent stream per named component, so adding or removing one
    component never changes the initial weights of another."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv(Module):
    """Convolution layer; rank follows ``len(kernel)``."""

    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True,
                 padding_mode="zero", dtype=None):
        dtype = dtype or default_dtype()
        kernel = tuple(kernel)
        fan_in = c_in * int(np.prod(kernel))
        self.weight = kaiming_uniform(rng, (c_out, c_in) + kernel, fan_in, dtype)
        self.bias = zeros_param((c_out,), dtype) if bias else None
        self.stride = stride
        self.padding = padding
        self.padding_mode = padding_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv(x, self.weight, self.stride, self.padding, self.padding_mode, self.bias)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, zero_init=False, dtype=None):
        dtype = dtype or default_dtype()
        if zero_init:
            self.weight = zeros_param((d_in, d_out), dtype)
        else:
            self.weight = kaiming_uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = zeros_param((d_out,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class ChannelNorm(Module):
    """Layer normalisation across the channel axis at every position."""

    def __init__(self, channels, axis=0, eps=1e-5, dtype=None):
        dtype = dtype or default_dtype()
        self.gain = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.shift = zeros_param((channels,), dtype)
        self.axis = axis
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.axis, self.gain, self.shift, self.eps)


class LSTM(Module):
    """Single-direction LSTM over a ``(T, d_in)`` sequence; gate order i, f, g, o."""

    def __init__(self, d_in, hidden, rng, dtype=None):
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Tensor(rng.uniform(-bound, bound, (d_in, 4 * hidden)), requires_grad=True, dtype=dtype)
        self.w_hh = Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True, dtype=dtype)
        self.bias = zeros_param((4 * hidden,), dtype)
        self.hidden = hidden

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        n_t = x.shape[0]
        xw = matmul(x, self.w_ih) + self.bias
        h = Tensor(np.zeros((1, self.hidden), dtype=x.dtype))
        c = h
        outs = [None] * n_t
        steps = range(n_t - 1, -1, -1) if reverse else range(n_t)
        for t in steps:
            gates = xw[t:t + 1] + matmul(h, self.w_hh)
            state = ops.lstm_cell(gates, c)
            h, c = state[0], state[1]
            outs[t] = h
        return concat(outs, axis=0)


class BiLSTM(Module):
    """Bidirectional LSTM; ``hidden`` is the concatenated output width."""

    def __init__(self, d_in, hidden, rng, dtype=None):
        if hidden % 2:
            raise ValueError(f"BiLSTM width {hidden} must be even")
        self.fwd = LSTM(d_in, hidden // 2, rng, dtype)
        self.bwd = LSTM(d_in, hidden // 2, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return concat([self.fwd(x), self.bwd(x, reverse=True)], axis=1)


__all__ = ["BiLSTM", "ChannelNorm", "Conv", "LSTM", "Linear", "Module", "rng_for"]
