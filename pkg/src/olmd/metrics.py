"""Word error rate with substitution / insertion / deletion accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class EditAlignment:
    sub: int
    ins: int
    dele: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.sub + self.ins + self.dele

    @property
    def wer(self) -> float:
        if self.ref_len == 0:
            raise ZeroDivisionError("WER undefined for an empty reference")
        return self.errors / self.ref_len


def edit_alignment(ref: Sequence, hyp: Sequence) -> EditAlignment:
    """Minimum-cost alignment of ``hyp`` against ``ref`` with unit costs.

    Among equal-cost backtraces a diagonal step (match or substitution) is
    preferred, then a deletion, then an insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri, row, above = ref[i - 1], d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = above[j - 1] + (ri != hyp[j - 1])
            row[j] = min(diag, above[j] + 1, row[j - 1] + 1)

    sub = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditAlignment(int(sub), ins, dele, n)


def wer(pairs: Iterable[tuple[Sequence, Sequence]]) -> tuple[float, float, float]:
    """Corpus WER, deletion rate and insertion rate.

    Counts are summed over all pairs before dividing by the total reference
    length, so long sentences weigh more than short ones.
    """
    sub = ins = dele = ref = 0
    for r, h in pairs:
        a = edit_alignment(r, h)
        sub += a.sub
        ins += a.ins
        dele += a.dele
        ref += a.ref_len
    if ref == 0:
        raise ZeroDivisionError("corpus has zero total reference length")
    return (sub + ins + dele) / ref, dele / ref, ins / ref
