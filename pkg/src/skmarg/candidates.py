"""Candidate phoneme sequences for marginalization.

Three generators feed the marginal objective: CTC prefix beam search (top-K),
a random n-subset of the top-K, and frame-level ancestral sampling with
temperature.  Every emitted candidate carries its exact log p(h|x).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from skmarg.lattice import (
    Alignment,
    EmissionLattice,
    LabelSeq,
    PhonemeVocab,
    apply_temperature,
    collapse,
    label_logprob,
)

NEG_INF = -math.inf


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = max(a, b)
    return m + math.log1p(math.exp(-abs(a - b)))


class Strategy(str, enum.Enum):
    TKM = "tkm"
    RANDOMIZED_TKM = "randomized_tkm"
    SKM = "skm"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown strategy {value!r}")


class NotEnoughCandidates(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    h: LabelSeq
    log_weight: float
    # sample count; only differs from 1 when duplicates are kept for ablation
    multiplicity: int = 1


@dataclass
class CandidateSet:
    candidates: List[Candidate]
    strategy_tag: Optional[Strategy] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i) -> Candidate:
        return self.candidates[i]

    @property
    def distinct_count(self) -> int:
        return len({c.h for c in self.candidates})

    @property
    def sequences(self) -> List[LabelSeq]:
        return [c.h for c in self.candidates]


def _rank_key(c: Candidate):
    return (-c.log_weight, len(c.h), c.h)


def dedup_merge(
    raw: Iterable[Candidate],
    strategy_tag: Optional[Strategy] = None,
    keep_multiplicity: bool = False,
) -> CandidateSet:
    """Collapse candidates with identical ``h`` into one entry.

    First-seen order is kept.  With ``keep_multiplicity`` the merged entry
    records how many times ``h`` occurred.
    """
    merged: Dict[LabelSeq, Candidate] = {}
    for c in raw:
        seen = merged.get(c.h)
        if seen is None:
            merged[c.h] = Candidate(c.h, c.log_weight, c.multiplicity if keep_multiplicity else 1)
        elif keep_multiplicity:
            merged[c.h] = Candidate(c.h, seen.log_weight, seen.multiplicity + c.multiplicity)
    return CandidateSet(list(merged.values()), strategy_tag)


def prefix_beam_search(lattice: EmissionLattice, vocab: PhonemeVocab, K: int) -> CandidateSet:
    """Top-K label sequences by CTC prefix beam search, re-scored exactly.

    Prefixes are merged by their collapsed label sequence; each keeps the log
    mass of alignments ending in blank and in its last label.  Survivors are
    re-scored with the forward algorithm and sorted by descending weight.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    lp = lattice.log_probs
    blank = vocab.blank_index
    labels = range(vocab.size)
    beam: Dict[LabelSeq, Tuple[float, float]] = {(): (0.0, NEG_INF)}

    for t in range(lattice.num_frames):
        row = lp[t].tolist()
        p_blank = row[blank]
        nxt: Dict[LabelSeq, List[float]] = {}

        def bump(prefix, which, value):
            if value == NEG_INF:
                return
            entry = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[which] = _logaddexp(entry[which], value)

        for prefix, (pb, pnb) in beam.items():
            total = _logaddexp(pb, pnb)
            bump(prefix, 0, total + p_blank)
            last = prefix[-1] if prefix else -1
            for c in labels:
                p = row[c]
                if p == NEG_INF:
                    continue
                if c == last:
                    bump(prefix, 1, pnb + p)
                    bump(prefix + (c,), 1, pb + p)
                else:
                    bump(prefix + (c,), 1, total + p)

        scored = sorted(
            ((_logaddexp(pb, pnb), prefix) for prefix, (pb, pnb) in nxt.items()),
            key=lambda item: (-item[0], len(item[1]), item[1]),
        )
        beam = {prefix: tuple(nxt[prefix]) for score, prefix in scored[:K] if score > NEG_INF}

    rescored = []
    for prefix in beam:
        w = label_logprob(lattice, prefix, vocab)
        if w > NEG_INF:
            rescored.append(Candidate(prefix, min(w, 0.0)))
    rescored.sort(key=_rank_key)
    return CandidateSet(rescored, Strategy.TKM, {"K": K})


def _cumulative(lattice: EmissionLattice) -> np.ndarray:
    cdf = np.cumsum(np.exp(lattice.log_probs), axis=1)
    return cdf / cdf[:, -1:]


def sample_alignments(lattice: EmissionLattice, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent frame-level state paths, shape (count, frames)."""
    cdf = _cumulative(lattice)
    u = rng.random((count, lattice.num_frames))
    states = np.empty(u.shape, dtype=np.int64)
    for t in range(lattice.num_frames):
        # side="right" never selects a zero-probability state
        states[:, t] = np.searchsorted(cdf[t], u[:, t], side="right")
    return np.minimum(states, lattice.num_states - 1)


def sample_alignment(lattice: EmissionLattice, rng: np.random.Generator) -> Alignment:
    return tuple(int(s) for s in sample_alignments(lattice, 1, rng)[0])


def skm_sample_candidates(
    lattice: EmissionLattice,
    vocab: PhonemeVocab,
    K: int,
    temperature: float,
    rng: np.random.Generator,
    *,
    keep_multiplicity: bool = False,
    scorer: Optional[Callable[[LabelSeq], float]] = None,
) -> CandidateSet:
    """K tempered ancestral samples, collapsed, merged, weighted on the original lattice.

    ``scorer`` may supply a memoized ``h -> log p(h|x)`` for the same lattice.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    tempered = apply_temperature(lattice, temperature)
    paths = sample_alignments(tempered, K, rng)
    score = scorer or (lambda h: label_logprob(lattice, h, vocab))
    raw = []
    weights: Dict[LabelSeq, float] = {}
    for path in paths:
        h = collapse(path, vocab)
        if h not in weights:
            weights[h] = min(score(h), 0.0)
        raw.append(Candidate(h, weights[h]))
    out = dedup_merge(raw, Strategy.SKM, keep_multiplicity)
    out.params = {"K": K, "temperature": temperature}
    return out


def randomized_subset(full: CandidateSet, n: int, rng: np.random.Generator) -> CandidateSet:
    """Uniform n-subset without replacement; rank order is preserved."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(full) < n:
        raise NotEnoughCandidates(f"need {n} candidates, have {len(full)}")
    picked = np.sort(rng.choice(len(full), size=n, replace=False))
    params = dict(full.params, n=n)
    return CandidateSet([full[i] for i in picked], Strategy.RANDOMIZED_TKM, params)


def format_candidates(cands: CandidateSet, vocab: PhonemeVocab, **meta) -> str:
    """TSV: a ``#`` header with generation settings, then weight<TAB>symbols."""
    info = dict(cands.params)
    info.update(meta)
    tag = cands.strategy_tag.value if cands.strategy_tag else "none"
    header = "# strategy=" + tag
    for key in ("K", "n", "temperature", "seed"):
        if key in info:
            header += f" {key}={info[key]}"
    lines = [header]
    for c in cands:
        lines.append(f"{c.log_weight!r}\t{' '.join(vocab.decode(c.h))}")
    return "\n".join(lines) + "\n"


def parse_candidates(text: str, vocab: PhonemeVocab) -> CandidateSet:
    tag = None
    params: Dict[str, object] = {}
    cands = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, value = item.partition("=")
                if key == "strategy":
                    tag = None if value == "none" else Strategy.parse(value)
                else:
                    params[key] = value
            continue
        weight, _, symbols = line.partition("\t")
        cands.append(Candidate(vocab.encode(symbols.split()), float(weight)))
    return CandidateSet(cands, tag, params)


def support_ranking(probs: Dict[LabelSeq, float]) -> List[Tuple[LabelSeq, float]]:
    """Enumeration output ordered like :func:`prefix_beam_search` output."""
    return sorted(probs.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))

