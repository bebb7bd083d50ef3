"""WER, paired bootstrap significance and real-time factor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, List, Optional, Sequence, Tuple

import numpy as np

from skmarg.lattice import EmissionLattice


class EmptyReference(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ZeroDuration(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_tokens: int
    rtf: Optional[float] = None
    p_value: Optional[float] = None

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    FIELDS = ("wer", "substitutions", "insertions", "deletions", "ref_tokens", "rtf", "p_value")

    def to_tsv(self) -> str:
        values = []
        for name in self.FIELDS:
            v = getattr(self, name)
            values.append("" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v)))
        return "\t".join(self.FIELDS) + "\n" + "\t".join(values) + "\n"

    def summary(self, name: str = "") -> str:
        head = f"== {name} ==" if name else "=="
        lines = [
            head,
            f"WER   {100.0 * self.wer:6.2f} %  ({self.errors} errors / {self.ref_tokens} tokens)",
            f"S/I/D {self.substitutions}/{self.insertions}/{self.deletions}",
        ]
        if self.rtf is not None:
            lines.append(f"RTF   {self.rtf:.4f}")
        if self.p_value is not None:
            lines.append(f"p     {self.p_value:.3g}")
        return "\n".join(lines)


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> Tuple[int, int, int, int]:
    """Levenshtein distance with unit costs, plus (S, I, D) from one backtrace.

    When several predecessors are optimal the backtrace prefers a
    substitution (or match), then an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(diag, d[i, j - 1] + 1, d[i - 1, j] + 1)
    i, j = n, m
    subs = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return int(d[n, m]), int(subs), ins, dels


def corpus_wer(pairs: Sequence[Tuple[Sequence, Sequence]]) -> EvalReport:
    """Micro-averaged WER over (ref, hyp) pairs."""
    if not pairs:
        raise ValueError("no utterances to score")
    S = I = D = N = 0
    for ref, hyp in pairs:
        _, s, i, d = edit_distance(ref, hyp)
        S, I, D, N = S + s, I + i, D + d, N + len(ref)
    if N == 0:
        raise EmptyReference("references contain no tokens")
    return EvalReport((S + I + D) / N, S, I, D, N)


def utterance_errors(pairs: Sequence[Tuple[Sequence, Sequence]]) -> List[int]:
    return [edit_distance(ref, hyp)[0] for ref, hyp in pairs]


def significance(
    errors_a: Sequence[float],
    errors_b: Sequence[float],
    resamples: int = 10_000,
    seed: int = 0,
    chunk: int = 1000,
) -> float:
    """Two-sided paired bootstrap p-value for a nonzero mean error difference.

    Utterances are resampled with replacement; the bootstrap distribution is
    centred on the observed mean to simulate the null.  Returns
    ``(1 + #{|mean* - mean| >= |mean|}) / (resamples + 1)``.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size} utterances")
    if a.size == 0:
        raise ValueError("no utterances")
    diff = b - a
    observed = diff.mean()
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    # 1e-12 guards exact ties from floating-point summation order
    threshold = abs(observed) - 1e-12
    while done < resamples:
        size = min(chunk, resamples - done)
        idx = rng.integers(0, diff.size, size=(size, diff.size))
        means = diff[idx].mean(axis=1)
        hits += int(np.count_nonzero(np.abs(means - observed) >= threshold))
        done += size
    return (1 + hits) / (resamples + 1)


def rtf(decode_wall_seconds: float, lattice: EmissionLattice) -> float:
    """Decoding wall time divided by audio duration."""
    if decode_wall_seconds < 0:
        raise ValueError("wall time must be non-negative")
    duration = lattice.duration_s
    if duration <= 0:
        raise ZeroDuration("lattice has zero duration")
    return decode_wall_seconds / duration
