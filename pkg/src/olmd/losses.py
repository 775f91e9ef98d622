"""CTC, self-distillation and the combined training objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, add, as_tensor, getitem, log_softmax, make, mul, tsum

BLANK = 0


class CTCLengthError(ValueError):
    """Target cannot be aligned to the given number of frames."""


@dataclass
class LossConfig:
    gamma1: float = 1.0
    gamma2: float = 25.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self.gamma1}, {self.gamma2}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def ctc_min_frames(target: Sequence[int]) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _ctc_tables(lp: np.ndarray, ext: np.ndarray):
    """Log-space forward and backward variables over the blank-extended target."""
    n_t, n_s = lp.shape[0], ext.size
    emit = lp[:, ext]
    skip = np.zeros(n_s, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((n_t, n_s), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if n_s > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_t):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[skip] = np.logaddexp(acc[skip], prev[:-2][skip[2:]])
        alpha[t] = acc + emit[t]

    beta = np.full((n_t, n_s), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if n_s > 1:
        beta[-1, -2] = emit[-1, -2]
    # s may jump to s+2 when s+2 is a skippable label
    fwd_skip = np.zeros(n_s, dtype=bool)
    fwd_skip[:-2] = skip[2:]
    for t in range(n_t - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[fwd_skip] = np.logaddexp(acc[fwd_skip], nxt[2:][fwd_skip[:-2]])
        beta[t] = acc + emit[t]
    return alpha, beta, emit


def ctc_loss(log_probs: Tensor, target: Sequence[int]) -> Tensor:
    """Negative log-likelihood of ``target`` under CTC.

    ``log_probs`` is ``(frames, V + 1)`` with the blank at index 0. The sum
    over alignments is computed exactly with the forward recursion in log
    space; the gradient comes from the forward-backward posteriors.
    """
    log_probs = as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise ShapeError(f"log_probs must be 2-d (frames, classes), got {log_probs.shape}")
    target = [int(t) for t in target]
    n_t, n_k = log_probs.shape
    if any(t == BLANK or not 0 < t < n_k for t in target):
        raise ValueError(f"target ids must lie in [1, {n_k - 1}], got {target}")
    need = ctc_min_frames(target)
    if need > n_t:
        raise CTCLengthError(f"target of length {len(target)} needs {need} frames, got {n_t}")

    lp = log_probs.data.astype(np.float64)
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    alpha, beta, emit = _ctc_tables(lp, ext)
    tail = alpha[-1, -2:] if ext.size > 1 else alpha[-1, -1:]
    logp = np.logaddexp.reduce(tail)

    def backward(g):
        post = np.exp(alpha + beta - emit - logp)
        grad = np.zeros_like(lp)
        for s, k in enumerate(ext):
            grad[:, k] -= post[:, s]
        return ((g * grad).astype(log_probs.dtype),)

    return make(np.asarray(-logp, dtype=log_probs.dtype), (log_probs,), backward, "ctc")


def _softmax_np(z: np.ndarray, axis=-1) -> tuple[np.ndarray, np.ndarray]:
    z = z - z.max(axis=axis, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return np.exp(logp), logp


def kl_distill(teacher_logits, student_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Frame-averaged KL(teacher || student) of temperature-scaled softmaxes.

    The teacher is treated as a constant: no gradient reaches it.
    """
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    student_logits = as_tensor(student_logits)
    if t.shape != student_logits.shape:
        raise ShapeError(f"teacher {t.shape} and student {student_logits.shape} differ")
    p, logp = _softmax_np(t.astype(np.float64) / temperature)
    logq = log_softmax(mul(student_logits, 1.0 / temperature), axis=-1)
    p = p.astype(student_logits.dtype)
    const = float((p * logp).sum())
    cross = tsum(mul(logq, Tensor(p)))
    return mul(add(mul(cross, -1.0), const), 1.0 / t.shape[0])


def align_lengths(teacher: Tensor, length: int) -> Tensor:
    """Nearest-neighbour resampling of ``teacher`` rows to ``length`` frames."""
    teacher = as_tensor(teacher)
    n = teacher.shape[0]
    if n == length:
        return teacher
    if length % n == 0:
        idx = np.arange(length) // (length // n)
    elif n % length == 0:
        idx = np.arange(length) * (n // length)
    else:
        raise ShapeError(f"cannot align {n} teacher frames to {length}")
    return getitem(teacher, idx)


def loss_terms(logits, target: Sequence[int], cfg: LossConfig, teacher=None) -> dict:
    """Every component of the objective for one sample, as tensors.

    ``teacher`` pins the distillation target to fixed values; by default it
    is the current global logits, detached.
    """
    local1, local2, glob = logits
    teacher = glob.data if teacher is None else np.asarray(teacher)
    terms = {
        "ctc_local1": ctc_loss(log_softmax(local1, -1), target),
        "ctc_local2": ctc_loss(log_softmax(local2, -1), target),
        "ctc_global": ctc_loss(log_softmax(glob, -1), target),
        "kl_g2l1": kl_distill(align_lengths(Tensor(teacher), local1.shape[0]), local1, cfg.temperature),
        "kl_g2l2": kl_distill(align_lengths(Tensor(teacher), local2.shape[0]), local2, cfg.temperature),
    }
    return terms


def combine(terms: dict, cfg: LossConfig) -> Tensor:
    ctc = terms["ctc_local1"] + terms["ctc_local2"] + terms["ctc_global"]
    distill = terms["kl_g2l1"] + terms["kl_g2l2"]
    return cfg.gamma1 * ctc + cfg.gamma2 * distill


def total_loss(logits, target: Sequence[int], cfg: LossConfig | None = None, teacher=None) -> Tensor:
    """``gamma1 * (three CTC terms) + gamma2 * (two distillation terms)``.

    ``logits`` is ``(local1, local2, global)``; the global head is the
    teacher for both distillation terms.
    """
    cfg = cfg or LossConfig()
    return combine(loss_terms(logits, target, cfg, teacher), cfg)


def greedy_decode(log_probs) -> list[int]:
    """Best-path CTC decoding: argmax, merge repeats, drop blanks."""
    arr = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    best = arr.argmax(axis=-1)
    out, prev = [], None
    for k in best.tolist():
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out
