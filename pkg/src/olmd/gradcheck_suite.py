"""Float64 finite-difference checks over every primitive and network block."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import model as M
from .gradcheck import GradReport, check_report
from .layers import BiLSTM, Linear, rng_for
from .losses import ctc_loss, kl_distill
from .ops import conv, lstm_cell, pool
from .tensor import Tensor, layer_norm, log_softmax, no_grad, precision

TOLERANCE = 1e-4
F64 = np.float64


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=F64)


def _projected(fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    """Scalarise ``fn`` by a fixed random projection so every output matters."""
    weights = {}

    def f():
        out = fn()
        if out.shape not in weights:
            weights[out.shape] = Tensor(rng.standard_normal(out.shape), dtype=F64)
        return (out * weights[out.shape]).sum()

    return f


def _merge(reports) -> GradReport:
    total = GradReport()
    for r in reports:
        total = total.merge(r)
    return total


def _params(module) -> list:
    return module.parameters()


def _pair_scalar(pair, rng, weights) -> Tensor:
    """Project both halves of a decoupled pair onto fixed random weights."""
    total = None
    for key, t in (("h", pair.h), ("v", pair.v)):
        if t is None:
            continue
        if (key, t.shape) not in weights:
            weights[(key, t.shape)] = Tensor(rng.standard_normal(t.shape), dtype=F64)
        term = (t * weights[(key, t.shape)]).sum()
        total = term if total is None else total + term
    return total


def check_conv(rng) -> GradReport:
    errs = []
    for shape, k, stride, pad_ in [((2, 3, 7), (2, 3, 3), 1, 1),
                                   ((2, 3, 5, 6), (4, 3, 3, 3), 2, 1),
                                   ((1, 2, 3, 4, 5), (2, 2, 1, 3, 3), (1, 2, 2), (0, 1, 1))]:
        x, w, b = _leaf(rng, *shape), _leaf(rng, *k), _leaf(rng, k[0])
        f = _projected(lambda: conv(x, w, stride, pad_, bias=b), rng)
        errs.append(check_report(f, [x, w, b]))
    xr, wr = _leaf(rng, 2, 7), _leaf(rng, 3, 2, 3)
    errs.append(check_report(_projected(lambda: conv(xr, wr, 1, 1, "replicate"), rng), [xr, wr]))
    return _merge(errs)


def check_pool(rng) -> GradReport:
    x = _leaf(rng, 3, 4, 6)
    errs = []
    for kind in ("avg", "max"):
        for axes, window in [(1, None), ((1, 2), None), (2, 2), ((1, 2), (2, 3))]:
            errs.append(check_report(_projected(lambda: pool(kind, x, axes, window), rng), [x]))
    return _merge(errs)


def check_layer_norm(rng) -> GradReport:
    x, g, s = _leaf(rng, 3, 4), _leaf(rng, 4), _leaf(rng, 4)
    return check_report(_projected(lambda: layer_norm(x, 1, g, s, 1e-5), rng), [x, g, s])


def check_log_softmax(rng) -> GradReport:
    x = _leaf(rng, 3, 5)
    return check_report(_projected(lambda: log_softmax(x, 1), rng), [x])


def check_lstm_cell(rng) -> GradReport:
    gates, c = _leaf(rng, 2, 12), _leaf(rng, 2, 3)
    err = check_report(_projected(lambda: lstm_cell(gates, c), rng), [gates, c])
    lstm = BiLSTM(3, 4, rng_for(0, "gc.lstm"), dtype=F64)
    seq = _leaf(rng, 5, 3)
    return err.merge(check_report(_projected(lambda: lstm(seq), rng), [seq] + _params(lstm)))


def check_lma(rng) -> GradReport:
    lma = M.LMA(4, 3, 2, rng_for(1, "gc.lma"), dtype=F64)
    x = _leaf(rng, 4, 5, 4, 4)
    return check_report(_projected(lambda: lma(x), rng), [x] + _params(lma))


def check_decouple(rng) -> GradReport:
    x = _leaf(rng, 2, 3, 4, 5)
    errs = []
    weights = {}
    for op in ("avg", "max", "avg+max"):
        errs.append(check_report(lambda: _pair_scalar(M.decouple(x, op), rng, weights), [x]))
    return _merge(errs)


def check_mp_block(rng) -> GradReport:
    blk = M.MPBlock(2, rng_for(2, "gc.mp"), dtype=F64)
    x = _leaf(rng, 2, 3, 4)
    return check_report(_projected(lambda: blk(x), rng), [x] + _params(blk))


def check_ffn(rng) -> GradReport:
    blk = M.FFN(2, 4, rng_for(3, "gc.ffn"), dtype=F64)
    x = _leaf(rng, 2, 3, 4)
    return check_report(_projected(lambda: blk(x), rng), [x] + _params(blk))


def _omp_case(rng, mode) -> GradReport:
    cfg = M.ModelConfig(channels=(2, 2, 2, 4), input_size=16, omp_mode=mode, head_width=4,
                        lstm_hidden=4, lma_reduction=2)
    omp = M.OMP(4, cfg, rng_for(4, f"gc.omp.{mode}"), prev_channels=2, dtype=F64)
    cur = M.DecoupledPair(_leaf(rng, 4, 3, 2), _leaf(rng, 4, 3, 2))
    prev = M.DecoupledPair(_leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4))

    weights = {}
    leaves = [cur.h, cur.v] + ([prev.h, prev.v] if mode == "cascaded" else []) + _params(omp)
    return check_report(lambda: _pair_scalar(omp(cur, prev), rng, weights), leaves)


def check_omp_cascaded(rng) -> GradReport:
    return _omp_case(rng, "cascaded")


def check_omp_non_cascaded(rng) -> GradReport:
    return _omp_case(rng, "non-cascaded")


def check_stage_couple(rng) -> GradReport:
    x = _leaf(rng, 2, 3, 4, 5)
    pair = M.DecoupledPair(_leaf(rng, 2, 3, 5), _leaf(rng, 2, 3, 4))
    params = M.CouplingParams(dtype=F64)
    params.alpha.data[:] = 0.7
    params.beta.data[:] = -0.4
    f = _projected(lambda: M.stage_couple(x, pair, params), rng)
    return check_report(f, [x, pair.h, pair.v, params.alpha, params.beta])


def check_cross_stage_couple(rng) -> GradReport:
    pairs = [M.DecoupledPair(_leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)),
             M.DecoupledPair(_leaf(rng, 4, 3, 2), _leaf(rng, 4, 3, 2))]
    projs = [Linear(2, 5, rng_for(5, "gc.cs0"), bias=False, dtype=F64),
             Linear(4, 5, rng_for(5, "gc.cs1"), bias=False, dtype=F64)]
    leaves = [t for p in pairs for t in (p.h, p.v)] + [p.weight for p in projs]
    return check_report(_projected(lambda: M.cross_stage_couple(pairs, projs), rng), leaves)


def check_ctc(rng) -> GradReport:
    logits = _leaf(rng, 6, 4)
    errs = [check_report(lambda: ctc_loss(log_softmax(logits, 1), tgt), [logits])
            for tgt in ([1, 2], [3, 3], [2], [])]
    raw = _leaf(rng, 5, 3)
    errs.append(check_report(lambda: ctc_loss(raw, [1, 2, 1]), [raw]))
    return _merge(errs)


def check_kl(rng) -> GradReport:
    teacher = rng.standard_normal((4, 5))
    student = _leaf(rng, 4, 5)
    return _merge([check_report(lambda: kl_distill(teacher, student, tau), [student]) for tau in (1.0, 2.0)])


def micro_model(seed: int = 0, **overrides) -> M.OLMD:
    """A near-minimal full network: 16x16 frames, four channels per stage, context 3."""
    kw = dict(in_channels=3, input_size=16, channels=(4, 4, 4, 4), lma_context=3, lma_reduction=2,
              head_width=4, lstm_hidden=4, vocab_size=3)
    kw.update(overrides)
    return M.OLMD(M.ModelConfig(**kw), seed=seed, dtype=F64)


def check_full_model(rng, max_coords: int = 6, h: float = 1e-6) -> GradReport:
    from .losses import LossConfig, total_loss
    net = micro_model()
    # Zero biases feed exact zeros into later ReLUs (a kink, where central
    # differences disagree with any subgradient); check at a generic point instead.
    for p in net.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    for blk in net.decoupling.values():
        blk.coupling.alpha.data[:] = 0.5
        blk.coupling.beta.data[:] = -0.5
    for proj in net.cross.values():
        proj.weight.data[:] = rng.standard_normal(proj.weight.shape) * 0.5
    video = Tensor(rng.random((3, 8, 16, 16)), requires_grad=True, dtype=F64)
    target = [1, 2]
    cfg = LossConfig()
    # the teacher is a stop-gradient, so finite differences must see it frozen too
    with no_grad():
        teacher = net(video)[2].data.copy()
    f = lambda: total_loss(net(video), target, cfg, teacher=teacher)
    # With only two channels the channel norm is close to a sign function and the
    # O(h^2) term swamps the check; four channels keep gradients moderate.
    return check_report(f, [video] + net.parameters(), h=h, max_coords=max_coords, seed=11)


CHECKS = {
    "conv": check_conv,
    "pool": check_pool,
    "layer_norm": check_layer_norm,
    "log_softmax": check_log_softmax,
    "lstm-cell": check_lstm_cell,
    "lma": check_lma,
    "decouple": check_decouple,
    "mp_block": check_mp_block,
    "ffn": check_ffn,
    "omp-cascaded": check_omp_cascaded,
    "omp-non-cascaded": check_omp_non_cascaded,
    "stage_couple": check_stage_couple,
    "cross_stage_couple": check_cross_stage_couple,
    "ctc": check_ctc,
    "kl": check_kl,
    "full-model": check_full_model,
}


def select(names=None) -> list:
    if not names:
        return list(CHECKS)
    chosen = []
    for n in names:
        hits = [k for k in CHECKS if k == n or k.startswith(n + "-")]
        if not hits:
            raise KeyError(f"unknown gradcheck target {n!r}; choose from {sorted(CHECKS)}")
        chosen.extend(h for h in hits if h not in chosen)
    return chosen


def run_suite(names=None, seed: int = 0) -> list:
    """Run the selected checks; returns ``[(name, GradReport, seconds), ...]``."""
    results = []
    with precision(F64):
        for name in select(names):
            rng = np.random.default_rng([seed, len(name), sum(map(ord, name))])
            t0 = time.perf_counter()
            report = CHECKS[name](rng)
            results.append((name, report, time.perf_counter() - t0))
    return results
