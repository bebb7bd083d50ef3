"""Marginalized phoneme-to-grapheme objective: scoring, training and decoding.

    log p(y|x) ~= log sum_k p(h_k|x) p(y|h_k)

over a candidate set of phoneme sequences.  Candidate weights come from the
frozen CTC lattice and are treated as constants.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from skmarg.candidates import (
    Candidate,
    CandidateSet,
    NotEnoughCandidates,
    Strategy,
    prefix_beam_search,
    randomized_subset,
    skm_sample_candidates,
)
from skmarg.lattice import EmissionLattice, LabelSeq, PhonemeVocab, label_logprob
from skmarg.scorer import (
    GraphemeSeq,
    ScorerGrad,
    ScorerParams,
    decode_y,
    seq_logprob,
    seq_logprob_grad,
)

logger = logging.getLogger(__name__)

NEG_INF = -math.inf


class ConfigError(ValueError):
    pass


class AllImpossible(ValueError):
    """Every candidate assigns zero probability to the target."""


class EmptyPool(RuntimeError):
    pass


@dataclass(frozen=True)
class MarginalConfig:
    strategy: Strategy = Strategy.SKM
    K: int = 8
    n: int = 8
    temperature: float = 1.5
    decode_K: int = 8
    decode_beam: int = 4
    resample_each_step: bool = True
    # ablations; defaults follow the plain weighted sum
    renormalize: bool = False
    merge_duplicates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        for name in ("K", "n", "decode_K", "decode_beam"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.strategy is Strategy.RANDOMIZED_TKM and not self.n < self.K:
            raise ConfigError(f"randomized_tkm needs n < K (got n={self.n}, K={self.K})")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    @classmethod
    def from_mapping(cls, data: Dict[str, object]) -> "MarginalConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            kwargs[key] = _coerce(known[key].type, value)
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out


def _coerce(type_name, value):
    if isinstance(value, str):
        value = value.strip()
        if type_name in ("bool", bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"not a boolean: {value!r}")
        if type_name in ("int", int):
            return int(value)
        if type_name in ("float", float):
            return float(value)
    return value


def parse_config_text(text: str) -> Dict[str, object]:
    """JSON object, or ``key=value`` lines (``#`` starts a comment)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        return dict(json.loads(stripped))
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 5000
    lr: float = 0.05
    batch_size: int = 4
    clip_norm: float = 5.0
    log_every: int = 100
    monitor_size: int = 64
    monitor_samples: int = 128


@dataclass(frozen=True)
class TrainRecord:
    """One logging point.

    ``loss`` is the mean negative marginal log-likelihood of the monitor
    examples, estimated on fixed Monte-Carlo reference samples shared by all
    strategies;
    ``batch_loss`` is the strategy's own objective averaged since the last
    record.
    """

    step: int
    loss: float
    wall_ms: float
    batch_loss: float = float("nan")
    skipped: int = 0


def _terms(candidates: CandidateSet, y, params, score_fn, renormalize):
    weights = np.array([c.log_weight + math.log(c.multiplicity) for c in candidates])
    if renormalize:
        weights = weights - logsumexp(weights)
    scores = np.array([score_fn(params, c.h, y) for c in candidates])
    return weights, scores


def marginal_logprob(
    candidates: CandidateSet,
    params: ScorerParams,
    y: Sequence[int],
    *,
    score_fn: Callable = seq_logprob,
    renormalize: bool = False,
) -> float:
    """log sum_k p(h_k|x) p(y|h_k); ``-inf`` if every term vanishes."""
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    weights, scores = _terms(candidates, y, params, score_fn, renormalize)
    total = weights + scores
    if np.all(total == NEG_INF):
        logger.debug("target impossible under all %d candidates", len(candidates))
        return NEG_INF
    return float(logsumexp(total))


def marginal_grad(
    candidates: CandidateSet,
    params: ScorerParams,
    y: Sequence[int],
    *,
    renormalize: bool = False,
    grad_fn: Callable = seq_logprob_grad,
) -> Tuple[float, ScorerGrad]:
    """Value and gradient of the marginal log-likelihood w.r.t. scorer params.

    The gradient is the responsibility-weighted sum of per-candidate
    gradients, responsibilities being the posterior share of each term.
    """
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    weights = np.array([c.log_weight + math.log(c.multiplicity) for c in candidates])
    if renormalize:
        weights = weights - logsumexp(weights)
    parts = [grad_fn(params, c.h, y) for c in candidates]
    total = weights + np.array([lp for lp, _ in parts])
    if np.all(total == NEG_INF):
        raise AllImpossible("target impossible under every candidate")
    value = float(logsumexp(total))
    resp = np.exp(total - value)
    grad = ScorerGrad.zeros_like(params)
    for r, (_, g) in zip(resp, parts):
        grad.add_(g, float(r))
    return value, grad


class _Example:
    """Per-utterance caches: top-K beam and memoized forward scores."""

    def __init__(self, lattice: EmissionLattice, y, vocab: PhonemeVocab):
        self.lattice = lattice
        self.y = tuple(int(g) for g in y)
        self.vocab = vocab
        self._scores: Dict[LabelSeq, float] = {}
        self._beam: Dict[int, CandidateSet] = {}

    def score(self, h: LabelSeq) -> float:
        w = self._scores.get(h)
        if w is None:
            w = label_logprob(self.lattice, h, self.vocab)
            self._scores[h] = w
        return w

    def beam(self, K: int) -> CandidateSet:
        if K not in self._beam:
            self._beam[K] = prefix_beam_search(self.lattice, self.vocab, K)
        return self._beam[K]


def candidates_for(
    ex: _Example,
    config: MarginalConfig,
    rng: np.random.Generator,
    cached: Optional[CandidateSet] = None,
) -> CandidateSet:
    if config.strategy is Strategy.TKM:
        return ex.beam(config.K)
    if config.strategy is Strategy.RANDOMIZED_TKM:
        full = ex.beam(config.K)
        try:
            return randomized_subset(full, config.n, rng)
        except NotEnoughCandidates:
            return full
    if cached is not None and not config.resample_each_step:
        return cached
    return skm_sample_candidates(
        ex.lattice,
        ex.vocab,
        config.K,
        config.temperature,
        rng,
        keep_multiplicity=not config.merge_duplicates,
        scorer=ex.score,
    )


def reference_candidates(
    lattice: EmissionLattice,
    vocab: PhonemeVocab,
    samples: int,
    rng: np.random.Generator,
) -> CandidateSet:
    """Monte-Carlo reference set for monitoring: ``samples`` untempered draws.

    Each distinct sequence is weighted by its sample frequency, so the
    weighted sum estimates the full marginal E_{h~p(h|x)}[p(y|h)] without
    favouring any candidate generator.
    """
    drawn = skm_sample_candidates(lattice, vocab, samples, 1.0, rng, keep_multiplicity=True)
    cands = [Candidate(c.h, math.log(c.multiplicity / samples)) for c in drawn]
    return CandidateSet(cands, None, {"samples": samples})


def train(
    corpus: Sequence[Tuple[EmissionLattice, Sequence[int]]],
    vocab: PhonemeVocab,
    num_graphemes: int,
    config: MarginalConfig,
    settings: TrainSettings = TrainSettings(),
    seed: int = 0,
    init: Optional[ScorerParams] = None,
    progress: Optional[Callable[[TrainRecord], None]] = None,
) -> Tuple[ScorerParams, List[TrainRecord]]:
    """Mini-batch gradient ascent on the mean marginal log-likelihood.

    Top-K beams are computed once per utterance; randomized-TKM draws a fresh
    n-subset of them at every step and SKM draws fresh samples at every step
    (unless ``resample_each_step`` is off, in which case the first draw is
    reused).
    """
    if not corpus:
        raise ValueError("corpus is empty")
    examples = [_Example(lat, y, vocab) for lat, y in corpus]
    params = init if init is not None else ScorerParams.zeros(vocab.size, num_graphemes)
    root = np.random.SeedSequence(seed)
    order_rng, cand_rng, ref_rng = (np.random.default_rng(s) for s in root.spawn(3))

    monitor = examples[: settings.monitor_size]
    references = [
        reference_candidates(ex.lattice, vocab, settings.monitor_samples, ref_rng)
        for ex in monitor
    ]

    def monitor_loss(p: ScorerParams) -> float:
        vals = [-marginal_logprob(c, p, ex.y) for c, ex in zip(references, monitor)]
        return float(np.mean(vals))

    frozen: Dict[int, CandidateSet] = {}
    records = [TrainRecord(0, monitor_loss(params), 0.0)]
    if progress:
        progress(records[-1])
    start = time.perf_counter()
    batch_losses: List[float] = []
    skipped = 0
    perm = order_rng.permutation(len(examples))
    cursor = 0

    for step in range(1, settings.steps + 1):
        grad = ScorerGrad.zeros_like(params)
        used = 0
        for _ in range(settings.batch_size):
            if cursor == len(perm):
                perm = order_rng.permutation(len(examples))
                cursor = 0
            idx = int(perm[cursor])
            cursor += 1
            ex = examples[idx]
            cands = candidates_for(ex, config, cand_rng, frozen.get(idx))
            if config.strategy is Strategy.SKM and not config.resample_each_step:
                frozen.setdefault(idx, cands)
            try:
                value, g = marginal_grad(cands, params, ex.y, renormalize=config.renormalize)
            except AllImpossible:
                skipped += 1
                continue
            grad.add_(g)
            batch_losses.append(-value)
            used += 1
        if used:
            grad.scale_(1.0 / used)
            norm = grad.norm()
            if norm > settings.clip_norm:
                grad.scale_(settings.clip_norm / norm)
            if settings.lr:
                params = params.step(grad, settings.lr)
        if step % settings.log_every == 0 or step == settings.steps:
            rec = TrainRecord(
                step,
                monitor_loss(params),
                (time.perf_counter() - start) * 1000.0,
                float(np.mean(batch_losses)) if batch_losses else float("nan"),
                skipped,
            )
            records.append(rec)
            batch_losses = []
            if progress:
                progress(rec)
    return params, records


def _hyp_key(item):
    y, lp = item
    return (-lp, len(y), y)


def decode(
    lattice: EmissionLattice,
    vocab: PhonemeVocab,
    params: ScorerParams,
    config: MarginalConfig,
    max_len: Optional[int] = None,
    candidates: Optional[CandidateSet] = None,
) -> Tuple[GraphemeSeq, float]:
    """MAP transcription under the top-K marginal.

    Decoding always marginalizes over the ``decode_K`` best beam candidates,
    whatever strategy trained the scorer.  Hypotheses are pooled from a
    per-candidate grapheme beam search and re-scored against the whole set.
    """
    cands = candidates if candidates is not None else prefix_beam_search(lattice, vocab, config.decode_K)
    pool = set()
    for c in cands:
        limit = max_len if max_len is not None else 2 * len(c.h) + 2
        for y, _ in decode_y(params, c.h, config.decode_beam, limit):
            pool.add(y)
    if not pool:
        raise EmptyPool("no hypotheses produced")
    scored = [
        (y, marginal_logprob(cands, params, y, renormalize=config.renormalize))
        for y in pool
    ]
    return min(scored, key=_hyp_key)


def format_records(records: Sequence[TrainRecord]) -> str:
    lines = ["step,loss,wall_ms"]
    for r in records:
        lines.append(f"{r.step},{r.loss:.10g},{r.wall_ms:.3f}")
    return "\n".join(lines) + "\n"


def smoothed_final_loss(records: Sequence[TrainRecord], window: int = 10) -> float:
    tail = [r.loss for r in records[-window:]]
    return float(np.mean(tail))

