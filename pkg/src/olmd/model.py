"""Orientation-aware long-term motion decoupling network.

Feature tensors inside the backbone are laid out ``(C, T, H, W)``; every
per-frame 2D operation is expressed as a rank-3 convolution whose kernel
has temporal extent 1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layers import BiLSTM, ChannelNorm, Conv, Linear, Module, rng_for
from .ops import pool
from .tensor import (ShapeError, Tensor, default_dtype, relu, reshape, slice_axis,
                     stack, transpose, pad)

DECOUPLE_OPS = ("avg", "max", "avg+max", "none")
OMP_MODES = ("cascaded", "non-cascaded")
LMA_CONTEXTS = (None, 3, 5, 7, 9, 11)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_channels: int = 3
    input_size: int = 32
    channels: tuple = (8, 16, 32, 64)
    decouple_stages: tuple = (2, 3, 4)
    lma_context: Optional[int] = 9
    lma_reduction: int = 4
    omp_mode: str = "cascaded"
    decouple_op: str = "avg"
    ffn_mult: int = 2
    hmp: bool = True
    vmp: bool = True
    stage_coupling: bool = True
    cross_stage_coupling: bool = True
    head_width: int = 64
    lstm_hidden: int = 64
    vocab_size: int = 6

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.decouple_stages = tuple(sorted(int(s) for s in self.decouple_stages))
        self.validate()

    def validate(self) -> None:
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must list 4 positive widths, got {self.channels}")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"stage channels must be non-decreasing, got {self.channels}")
        if self.input_size % 16:
            raise ConfigError(f"input_size {self.input_size} must be divisible by 16")
        if not set(self.decouple_stages) <= {2, 3, 4}:
            raise ConfigError(f"decouple_stages must be a subset of {{2, 3, 4}}, got {self.decouple_stages}")
        if len(set(self.decouple_stages)) != len(self.decouple_stages):
            raise ConfigError(f"duplicate decoupling stages {self.decouple_stages}")
        if self.lma_context is not None and (self.lma_context < 3 or self.lma_context % 2 == 0):
            raise ConfigError(f"lma_context must be None or an odd integer >= 3, got {self.lma_context}")
        if self.decouple_op not in DECOUPLE_OPS:
            raise ConfigError(f"decouple_op must be one of {DECOUPLE_OPS}, got {self.decouple_op!r}")
        if self.omp_mode not in OMP_MODES:
            raise ConfigError(f"omp_mode must be one of {OMP_MODES}, got {self.omp_mode!r}")
        if self.lma_context is not None:
            for s in self.decouple_stages:
                c = self.channels[s - 1]
                if c % self.lma_reduction:
                    raise ConfigError(f"lma_reduction {self.lma_reduction} does not divide "
                                      f"stage {s} channels {c}")
        if self.omp_mode == "cascaded":
            for a, b in zip(self.decouple_stages, self.decouple_stages[1:]):
                if b != a + 1:
                    raise ConfigError("cascaded OMP needs consecutive decoupling stages "
                                      f"(spatial extents differing by 2), got {self.decouple_stages}")
        if self.head_width != self.lstm_hidden:
            raise ConfigError(f"the shared classifier needs head_width == lstm_hidden, "
                              f"got {self.head_width} and {self.lstm_hidden}")
        if self.lstm_hidden % 2:
            raise ConfigError(f"lstm_hidden {self.lstm_hidden} must be even")
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["decouple_stages"] = list(self.decouple_stages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DecoupledPair:
    """Horizontal (``C x T x W``) and vertical (``C x T x H``) components.

    With the ``none`` operator ``h`` carries the full ``C x T x H x W``
    block and ``v`` is unused.
    """
    h: Optional[Tensor]
    v: Optional[Tensor]
    stage: int = 0


# -- long-term motion aggregation ----------------------------------------------
class LMA(Module):
    def __init__(self, channels: int, context: int, reduction: int, rng, dtype=None):
        if channels % reduction:
            raise ConfigError(f"reduction {reduction} does not divide {channels} channels")
        self.n = (context - 1) // 2
        c = channels // reduction
        # A compress bias would cancel in every difference, so there is none.
        self.compress = Conv(channels, c, (1, 1, 1), rng, bias=False, dtype=dtype)
        self.block = [Conv(c, c, (1, 3, 3), rng, padding=(0, 1, 1), bias=False, dtype=dtype)
                      for _ in range(3)]
        self.aggregate = Conv(2 * self.n * c, c, (1, 1, 1), rng, bias=False, dtype=dtype)
        self.restore = Conv(c, channels, (1, 1, 1), rng, bias=False, dtype=dtype)

    def differences(self, xc: Tensor) -> Tensor:
        """``C0 - Ci`` for offsets ``i`` in ``[-n, n] \\ {0}``, shape ``(c, 2n, T, H, W)``.

        Frames outside the clip repeat the edge frame.
        """
        n, n_t = self.n, xc.shape[1]
        xp = pad(xc, [(0, 0), (n, n), (0, 0), (0, 0)], mode="replicate")
        shifted = stack([slice_axis(xp, 1, n + i, n + i + n_t)
                         for i in range(-n, n + 1) if i != 0], axis=1)
        center = reshape(xc, (xc.shape[0], 1) + xc.shape[1:])
        return center - shifted

    def conv_block(self, d: Tensor) -> Tensor:
        d = relu(self.block[0](d))
        d = relu(self.block[1](d))
        return self.block[2](d)

    def __call__(self, x: Tensor) -> Tensor:
        c_in, n_t, h, w = x.shape
        k = 2 * self.n
        # Differencing before the (linear) compression equals compressing first,
        # but a static clip then gives exact zeros instead of rounding noise.
        diffs = self.differences(x)
        maps = self.compress(reshape(diffs, (c_in, k * n_t, h, w)))
        c = maps.shape[0]
        maps = self.conv_block(maps)
        maps = transpose(reshape(maps, (c, k, n_t, h, w)), (1, 0, 2, 3, 4))
        agg = self.aggregate(reshape(maps, (k * c, n_t, h, w)))
        return self.restore(agg) + x


def lma_forward(x: Tensor, lma: LMA) -> Tensor:
    return lma(x)


# -- decoupling -----------------------------------------------------------------
def decouple(x: Tensor, op: str = "avg", stage: int = 0) -> DecoupledPair:
    """Pool ``C x T x H x W`` features over height (-> ``X_h``) and width (-> ``X_v``)."""
    if x.ndim != 4:
        raise ShapeError(f"decouple expects C x T x H x W, got {x.shape}")
    if op == "none":
        return DecoupledPair(x, None, stage)
    if op == "avg+max":
        return DecoupledPair(pool("avg", x, 2) + pool("max", x, 2),
                             pool("avg", x, 3) + pool("max", x, 3), stage)
    if op not in ("avg", "max"):
        raise ValueError(f"unknown decoupling operator {op!r}")
    return DecoupledPair(pool(op, x, 2), pool(op, x, 3), stage)


class MPBlock(Module):
    """Two 3x3 convolutions with channel layer norm and ReLU between, plus a residual."""

    def __init__(self, channels: int, rng, rank: int = 2, dtype=None):
        k = (3,) * rank
        self.conv1 = Conv(channels, channels, k, rng, padding=1, dtype=dtype)
        self.norm = ChannelNorm(channels, dtype=dtype)
        self.conv2 = Conv(channels, channels, k, rng, padding=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.norm(self.conv1(x)))) + x


class FFN(Module):
    def __init__(self, channels: int, hidden: int, rng, rank: int = 2, dtype=None):
        k = (1,) * rank
        self.expand = Conv(channels, hidden, k, rng, dtype=dtype)
        self.norm = ChannelNorm(hidden, dtype=dtype)
        self.project = Conv(hidden, channels, k, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(relu(self.norm(self.expand(x)))) + x


def mp_block(x: Tensor, block: MPBlock) -> Tensor:
    return block(x)


def ffn(x: Tensor, block: FFN) -> Tensor:
    return block(x)


class Purifier(Module):
    """Motion purification for one orientation (HMP or VMP)."""

    def __init__(self, channels: int, hidden: int, rng, rank: int = 2,
                 prev_channels: Optional[int] = None, dtype=None):
        self.rank = rank
        self.downsample = None
        if prev_channels is not None:
            stride = (1, 2) if rank == 2 else (1, 2, 2)
            self.downsample = Conv(prev_channels, channels, (3,) * rank, rng, stride=stride,
                                   padding=1, dtype=dtype)
        self.mp = MPBlock(channels, rng, rank, dtype)
        self.ffn = FFN(channels, hidden, rng, rank, dtype)

    def __call__(self, x: Tensor, prev: Optional[Tensor] = None) -> Tensor:
        if prev is not None and self.downsample is not None:
            if prev.shape[-1] != 2 * x.shape[-1]:
                raise ShapeError(f"cascade needs previous extent 2 x {x.shape[-1]}, got {prev.shape[-1]}")
            x = self.downsample(prev) + x
        return self.ffn(self.mp(x))


class OMP(Module):
    def __init__(self, channels: int, cfg: ModelConfig, rng, prev_channels=None, dtype=None):
        rank = 3 if cfg.decouple_op == "none" else 2
        hidden = cfg.ffn_mult * channels
        prev = prev_channels if cfg.omp_mode == "cascaded" else None
        self.cascaded = cfg.omp_mode == "cascaded"
        if cfg.decouple_op == "none":
            use_h, use_v = cfg.hmp or cfg.vmp, False
        else:
            use_h, use_v = cfg.hmp, cfg.vmp
        self.hmp = Purifier(channels, hidden, rng, rank, prev, dtype) if use_h else None
        self.vmp = Purifier(channels, hidden, rng, rank, prev, dtype) if use_v else None

    def __call__(self, pair: DecoupledPair, prev: Optional[DecoupledPair] = None) -> DecoupledPair:
        prev_h = prev.h if (prev is not None and self.cascaded) else None
        prev_v = prev.v if (prev is not None and self.cascaded) else None
        h = self.hmp(pair.h, prev_h) if self.hmp is not None else None
        v = self.vmp(pair.v, prev_v) if self.vmp is not None else None
        return DecoupledPair(h, v, pair.stage)


def omp_forward(pair: DecoupledPair, omp: OMP, prev: Optional[DecoupledPair] = None) -> DecoupledPair:
    return omp(pair, prev)


# -- coupling -------------------------------------------------------------------
class CouplingParams(Module):
    def __init__(self, dtype=None):
        dtype = dtype or default_dtype()
        self.alpha = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)


def stage_couple(x: Tensor, pair: DecoupledPair, params: CouplingParams) -> Tensor:
    """``X + alpha * US(X_h) + beta * US(X_v)`` with US = repetition along the pooled axis."""
    c, n_t, h, w = x.shape
    out = x
    if pair.h is not None:
        xh = pair.h if pair.h.ndim == 4 else reshape(pair.h, (c, n_t, 1, w))
        out = out + params.alpha * xh
    if pair.v is not None:
        out = out + params.beta * reshape(pair.v, (c, n_t, h, 1))
    return out


def cross_stage_couple(pairs: list, projections: list) -> Tensor:
    """Sum over stages of ``W_i(P_W(X_h) + P_H(X_v))``; returns ``D x T``."""
    total = None
    n_t = None
    for pair, proj in zip(pairs, projections):
        pooled = None
        if pair.h is not None:
            axes = (2, 3) if pair.h.ndim == 4 else 2
            pooled = pool("avg", pair.h, axes)
        if pair.v is not None:
            pv = pool("avg", pair.v, 2)
            pooled = pv if pooled is None else pooled + pv
        if pooled is None:
            continue
        if n_t is not None and pooled.shape[1] != n_t:
            raise ShapeError(f"cross-stage components disagree on T: {n_t} vs {pooled.shape[1]}")
        n_t = pooled.shape[1]
        y = proj(transpose(pooled))
        total = y if total is None else total + y
    if total is None:
        raise ShapeError("cross-stage coupling received no components")
    return transpose(total)


# -- backbone and temporal head -------------------------------------------------
class BackboneStage(Module):
    def __init__(self, c_in: int, c_out: int, rng, dtype=None):
        self.down = Conv(c_in, c_out, (1, 3, 3), rng, stride=(1, 2, 2), padding=(0, 1, 1), dtype=dtype)
        self.conv = Conv(c_out, c_out, (1, 3, 3), rng, padding=(0, 1, 1), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.conv(relu(self.down(x))))


class DecouplingStage(Module):
    """LMA, decoupling, purification and coupling parameters for one backbone stage."""

    def __init__(self, stage: int, cfg: ModelConfig, rng, dtype=None):
        c = cfg.channels[stage - 1]
        self.stage = stage
        self.op = cfg.decouple_op
        self.lma = (LMA(c, cfg.lma_context, cfg.lma_reduction, rng, dtype)
                    if cfg.lma_context is not None else None)
        prev_stage = stage - 1
        prev_c = cfg.channels[prev_stage - 1] if prev_stage in cfg.decouple_stages else None
        self.omp = OMP(c, cfg, rng, prev_c, dtype)
        self.coupling = CouplingParams(dtype) if cfg.stage_coupling else None

    def __call__(self, x: Tensor, prev: Optional[DecoupledPair]):
        x_agg = self.lma(x) if self.lma is not None else x
        pair = self.omp(decouple(x_agg, self.op, self.stage), prev)
        out = stage_couple(x_agg, pair, self.coupling) if self.coupling is not None else x_agg
        return out, pair


class TemporalHead(Module):
    """Two {K5, P2} 1D-CNNs, a BiLSTM and one classifier shared by all three outputs."""

    def __init__(self, d_in: int, cfg: ModelConfig, rng, dtype=None):
        w = cfg.head_width
        self.conv1 = Conv(d_in, w, (5,), rng, padding=2, dtype=dtype)
        self.conv2 = Conv(w, w, (5,), rng, padding=2, dtype=dtype)
        self.lstm = BiLSTM(w, cfg.lstm_hidden, rng, dtype)
        self.classifier = Linear(w, cfg.vocab_size + 1, rng, dtype=dtype)

    def __call__(self, frames: Tensor):
        n_t = frames.shape[0]
        if n_t % 4 or n_t == 0:
            raise ShapeError(f"temporal length {n_t} must be a positive multiple of 4")
        x = pool("max", relu(self.conv1(transpose(frames))), 1, 2)
        local1 = self.classifier(transpose(x))
        y = pool("max", relu(self.conv2(x)), 1, 2)
        seq = transpose(y)
        local2 = self.classifier(seq)
        glob = self.classifier(self.lstm(seq))
        return local1, local2, glob


class OLMD(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=None):
        self.cfg = cfg
        dtype = dtype or default_dtype()
        widths = (cfg.in_channels,) + cfg.channels
        rb = rng_for(seed, "backbone")
        self.stages = [BackboneStage(widths[i], widths[i + 1], rb, dtype) for i in range(4)]
        self.decoupling = {str(s): DecouplingStage(s, cfg, rng_for(seed, f"decouple.{s}"), dtype)
                           for s in cfg.decouple_stages}
        self.cross = {}
        if cfg.cross_stage_coupling and cfg.decouple_stages:
            self.cross = {str(s): Linear(cfg.channels[s - 1], cfg.feature_dim, None, bias=False,
                                         zero_init=True, dtype=dtype)
                          for s in cfg.decouple_stages}
        self.head = TemporalHead(cfg.feature_dim, cfg, rng_for(seed, "head"), dtype)

    def backbone_forward(self, video: Tensor):
        """Return the per-stage features and the ``T x d`` frame features."""
        if video.ndim != 4 or video.shape[0] != self.cfg.in_channels:
            raise ShapeError(f"video must be {self.cfg.in_channels} x T x H x W, got {video.shape}")
        if video.shape[2] % 16 or video.shape[3] % 16:
            raise ShapeError(f"frame size {video.shape[2:]} not divisible by 16")
        x = video
        feats, pairs = [], []
        prev = None
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            block = self.decoupling.get(str(i))
            if block is not None:
                x, prev = block(x, prev)
                pairs.append(prev)
            else:
                prev = None
            feats.append(x)
        frames = transpose(pool("avg", x, (2, 3)))
        if self.cross:
            live = [p for p in pairs if p.h is not None or p.v is not None]
            if live:
                x_cs = cross_stage_couple(live, [self.cross[str(p.stage)] for p in live])
                frames = frames + transpose(x_cs)
        return feats, frames

    def forward(self, video: Tensor):
        _, frames = self.backbone_forward(video)
        return self.head(frames)

    __call__ = forward


def model_forward(video: Tensor, model: OLMD):
    return model(video)


def temporal_head_forward(frames: Tensor, model: OLMD):
    return model.head(frames)


__all__ = [
    "ConfigError", "CouplingParams", "DecoupledPair", "FFN", "LMA", "LMA_CONTEXTS", "MPBlock",
    "ModelConfig", "OLMD", "OMP", "Purifier", "TemporalHead", "cross_stage_couple", "decouple",
    "ffn", "lma_forward", "model_forward", "mp_block", "omp_forward", "stage_couple",
    "temporal_head_forward",
]
