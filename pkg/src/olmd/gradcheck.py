"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, kink_trace


def _traced(f: Callable[[], Tensor]):
    with kink_trace() as trace:
        value = float(f().data)
    return value, trace


def _same_piece(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradReport:
    worst: float = 0.0
    checked: int = 0
    on_kink: int = 0

    def merge(self, other: "GradReport") -> "GradReport":
        return GradReport(max(self.worst, other.worst), self.checked + other.checked,
                          self.on_kink + other.on_kink)


def finite_diff_report(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                       indices: Sequence[int] | None = None, max_shrink: int = 3) -> GradReport:
    """Central-difference check of ``x``'s gradient, with kink bookkeeping.

    ``f`` takes no arguments and must read ``x`` (which is perturbed in
    place). The error of one coordinate is ``|a - n| / max(1, |a|, |n|)``.

    When ``x +/- h`` lands on another branch of a ReLU or max than ``x``
    itself, the quotient straddles a kink and says nothing about the
    derivative, so the step for that coordinate is divided by 10, at most
    ``max_shrink`` times. A coordinate that still changes branch at the
    smallest step sits on the kink itself, where no derivative exists; it is
    counted in ``on_kink`` and left out of ``worst``.
    """
    if x.dtype != np.float64:
        raise TypeError(f"gradient checks need float64 tensors, got {x.dtype}")
    x.data = np.ascontiguousarray(x.data)
    x.grad = None
    x.requires_grad = True
    with kink_trace() as base:
        f().backward()
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()
    x.grad = None

    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    report = GradReport()
    for i in indices:
        orig = flat[i]
        step = h
        smooth = False
        for attempt in range(max_shrink + 1):
            flat[i] = orig + step
            fp, tp = _traced(f)
            flat[i] = orig - step
            fm, tm = _traced(f)
            flat[i] = orig
            if _same_piece(tp, base) and _same_piece(tm, base):
                smooth = True
                break
            if attempt < max_shrink:
                step /= 10
        if not smooth:
            report.on_kink += 1
            continue
        num = (fp - fm) / (2 * step)
        a = analytic[i]
        report.worst = max(report.worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        report.checked += 1
    return report


def finite_diff_check(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                      indices: Sequence[int] | None = None, max_shrink: int = 3) -> float:
    """Worst relative error of :func:`finite_diff_report`."""
    return finite_diff_report(f, x, h, indices, max_shrink).worst


def check_report(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                 max_coords: int | None = None, seed: int = 0) -> GradReport:
    """Merged report over several tensors; with ``max_coords`` set, each
    tensor is checked on at most that many randomly chosen coordinates."""
    rng = np.random.default_rng(seed)
    total = GradReport()
    for t in tensors:
        idx = None
        if max_coords is not None and t.size > max_coords:
            idx = rng.choice(t.size, size=max_coords, replace=False)
        total = total.merge(finite_diff_report(f, t, h, idx))
    return total


def check_many(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Worst :func:`finite_diff_check` error over several tensors."""
    return check_report(f, tensors, h, max_coords, seed).worst
