"""Trainable phoneme-to-grapheme scorer.

p(y|h) is the path sum of a locally normalized monotonic edit transducer.
While phonemes remain, each step picks an op from softmax(op_logits):

* substitute: emit a grapheme from row ``h_j`` of the emission table and
  consume ``h_j``;
* insert: emit a grapheme from row ``h_j`` without consuming;
* delete: consume ``h_j`` silently.

Once every phoneme is consumed, the end-context row (index ``V``, shared
with the CTC blank) emits graphemes or the end-of-sequence marker.  Phoneme
rows never emit the end marker.  Every path terminates with probability 1,
so p(.|h) is a proper distribution over finite grapheme strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from skmarg import _kernels

GraphemeSeq = Tuple[int, ...]

SUB, INS, DEL = _kernels.SUB, _kernels.INS, _kernels.DEL
OP_NAMES = ("substitute", "insert", "delete")
NEG_INF = -math.inf


class ScorerError(ValueError):
    pass


class VocabMismatch(ScorerError):
    pass


class ImpossiblePair(ScorerError):
    pass


@dataclass(frozen=True)
class GraphemeVocab:
    """Grapheme alphabet; the end-of-sequence marker sits at ``len(symbols)``."""

    symbols: Tuple[str, ...]
    eos_symbol: str = "</s>"

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("grapheme symbols must be unique")
        if self.eos_symbol in self.symbols:
            raise ValueError("end-of-sequence marker collides with a grapheme")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def eos_index(self) -> int:
        return len(self.symbols)

    def encode(self, symbols: Iterable[str]) -> GraphemeSeq:
        index = {s: i for i, s in enumerate(self.symbols)}
        return tuple(index[s] for s in symbols)

    def decode(self, graphemes: Iterable[int]) -> Tuple[str, ...]:
        return tuple(self.symbols[i] for i in graphemes)


@dataclass(frozen=True, eq=False)
class ScorerParams:
    """Logits of the edit transducer.

    ``emit_logits`` has shape (V+1, G+1): one row per phoneme plus the
    end-context row, one column per grapheme plus end-of-sequence.
    """

    emit_logits: np.ndarray
    op_logits: np.ndarray
    version: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        emit = np.array(self.emit_logits, dtype=np.float64)
        ops = np.array(self.op_logits, dtype=np.float64).reshape(-1)
        if emit.ndim != 2 or emit.shape[0] < 2 or emit.shape[1] < 2:
            raise ValueError(f"emit_logits must be (V+1, G+1), got {emit.shape}")
        if ops.shape != (3,):
            raise ValueError("op_logits must hold exactly 3 values")
        if not (np.isfinite(emit).all() and np.isfinite(ops).all()):
            raise ValueError("scorer logits must be finite")
        emit.setflags(write=False)
        ops.setflags(write=False)
        object.__setattr__(self, "emit_logits", emit)
        object.__setattr__(self, "op_logits", ops)

    @classmethod
    def zeros(cls, num_phonemes: int, num_graphemes: int) -> "ScorerParams":
        return cls(np.zeros((num_phonemes + 1, num_graphemes + 1)), np.zeros(3))

    @property
    def num_phonemes(self) -> int:
        return self.emit_logits.shape[0] - 1

    @property
    def num_graphemes(self) -> int:
        return self.emit_logits.shape[1] - 1

    @property
    def end_row(self) -> int:
        return self.num_phonemes

    @property
    def eos(self) -> int:
        return self.num_graphemes

    def log_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """(log emission table, log op probabilities), memoized per snapshot."""
        if "tables" not in self._cache:
            emit = np.array(self.emit_logits)
            log_emit = np.empty_like(emit)
            body = emit[:-1, :-1]
            log_emit[:-1, :-1] = body - logsumexp(body, axis=1, keepdims=True)
            log_emit[:-1, -1] = NEG_INF
            log_emit[-1] = emit[-1] - logsumexp(emit[-1])
            log_ops = self.op_logits - logsumexp(self.op_logits)
            self._cache["tables"] = (log_emit, log_ops)
        return self._cache["tables"]

    def step(self, grad: "ScorerGrad", scale: float) -> "ScorerParams":
        return ScorerParams(
            self.emit_logits + scale * grad.emit,
            self.op_logits + scale * grad.op,
            self.version + 1,
        )


@dataclass
class ScorerGrad:
    emit: np.ndarray
    op: np.ndarray

    @classmethod
    def zeros_like(cls, params: ScorerParams) -> "ScorerGrad":
        return cls(np.zeros(params.emit_logits.shape), np.zeros(3))

    def add_(self, other: "ScorerGrad", scale: float = 1.0) -> "ScorerGrad":
        self.emit += scale * other.emit
        self.op += scale * other.op
        return self

    def scale_(self, factor: float) -> "ScorerGrad":
        self.emit *= factor
        self.op *= factor
        return self

    def norm(self) -> float:
        return float(math.sqrt(np.sum(self.emit**2) + np.sum(self.op**2)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.emit.ravel(), self.op])


def _arrays(params: ScorerParams, h: Sequence[int], y: Sequence[int]):
    hh = np.asarray(h, dtype=np.int64).reshape(-1)
    yy = np.asarray(y, dtype=np.int64).reshape(-1)
    if hh.size and (hh.min() < 0 or hh.max() >= params.num_phonemes):
        raise VocabMismatch(f"phoneme index out of range in {tuple(h)}")
    if yy.size and (yy.min() < 0 or yy.max() >= params.num_graphemes):
        raise VocabMismatch(f"grapheme index out of range in {tuple(y)}")
    return hh, yy


def seq_logprob(params: ScorerParams, h: Sequence[int], y: Sequence[int]) -> float:
    """log p(y|h), summed over all monotonic edit paths."""
    hh, yy = _arrays(params, h, y)
    log_emit, log_ops = params.log_tables()
    log_z, _ = _kernels.edit_forward(log_emit, log_ops, hh, yy, params.end_row, params.eos)
    return min(float(log_z), 0.0)


def seq_logprob_grad(
    params: ScorerParams, h: Sequence[int], y: Sequence[int]
) -> Tuple[float, ScorerGrad]:
    """log p(y|h) and its exact gradient from forward-backward arc posteriors."""
    hh, yy = _arrays(params, h, y)
    log_emit, log_ops = params.log_tables()
    log_z, emit_counts, op_counts = _kernels.edit_counts(
        log_emit, log_ops, hh, yy, params.end_row, params.eos
    )
    if log_z == NEG_INF:
        raise ImpossiblePair(f"p(y|h) = 0 for h={tuple(h)}, y={tuple(y)}")
    # d log softmax: observed counts minus expected counts per normalization group
    op_grad = op_counts - op_counts.sum() * np.exp(log_ops)
    emit_grad = emit_counts - emit_counts.sum(axis=1, keepdims=True) * np.exp(log_emit)
    return float(log_z), ScorerGrad(emit_grad, op_grad)


def _prefix_score(state: np.ndarray, keep: float) -> float:
    # mass that continues to emit from phoneme columns, plus all end-column mass
    if state.size == 1:
        return float(state[-1])
    return float(np.logaddexp(logsumexp(state[:-1]) + keep, state[-1]))


def decode_y(
    params: ScorerParams,
    h: Sequence[int],
    beam: int,
    max_len: int,
) -> List[Tuple[GraphemeSeq, float]]:
    """Beam search over grapheme prefixes of p(y|h).

    A prefix's score is the total probability of every completion that starts
    with it, so it bounds all of its extensions; the search stops once no live
    prefix can beat the ``beam``-th finished hypothesis.  Results are re-scored
    with :func:`seq_logprob` and ranked best first.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    hh, _ = _arrays(params, h, ())
    n = hh.size
    log_emit, log_ops = params.log_tables()
    G = params.num_graphemes
    end_row, eos = params.end_row, params.eos
    keep = float(np.log1p(-math.exp(log_ops[DEL])))

    # rows[j] is the emission row used from column j
    rows = np.concatenate([hh, [end_row]])
    emit = log_emit[rows, :G]  # (n+1, G)
    ins = emit.copy()
    ins[:n] += log_ops[INS]
    sub = emit[:n] + log_ops[SUB]

    def close(state):
        for j in range(n):
            state[j + 1] = np.logaddexp(state[j + 1], state[j] + log_ops[DEL])
        return state

    start = np.full(n + 1, NEG_INF)
    start[0] = 0.0
    live: List[Tuple[GraphemeSeq, np.ndarray, float]] = [((), close(start), 0.0)]
    finished: List[Tuple[float, GraphemeSeq]] = []

    def rank(item):
        return (-item[0], len(item[1]), item[1])

    for length in range(max_len + 1):
        expansions = []
        for prefix, state, _ in live:
            finished.append((float(state[-1] + log_emit[end_row, eos]), prefix))
            if length == max_len:
                continue
            # (n+1, G): arrive at column j by insert from j or substitute from j-1
            nxt = state[:, None] + ins
            if n:
                nxt[1:] = np.logaddexp(nxt[1:], state[:-1, None] + sub)
            for j in range(n):
                nxt[j + 1] = np.logaddexp(nxt[j + 1], nxt[j] + log_ops[DEL])
            for g in range(G):
                col = nxt[:, g].copy()
                expansions.append((_prefix_score(col, keep), prefix + (g,), col))
        finished.sort(key=rank)
        finished = finished[:beam]
        if not expansions:
            break
        expansions.sort(key=lambda e: (-e[0], len(e[1]), e[1]))
        expansions = expansions[:beam]
        if len(finished) >= beam and expansions[0][0] <= finished[-1][0]:
            break
        live = [(prefix, col, score) for score, prefix, col in expansions]

    out = [(prefix, seq_logprob(params, hh, prefix)) for _, prefix in finished]
    out.sort(key=lambda item: (-item[1], len(item[0]), item[0]))
    return out


def format_params(params: ScorerParams) -> str:
    """Header ``V G``, then (V+1)x(G+1) emission logits row-major, then 3 op logits."""
    lines = [f"{params.num_phonemes} {params.num_graphemes}"]
    for row in params.emit_logits:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append(" ".join(repr(float(x)) for x in params.op_logits))
    return "\n".join(lines) + "\n"


def parse_params(text: str) -> ScorerParams:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    num_phonemes, num_graphemes = (int(x) for x in lines[0].split())
    if len(lines) != num_phonemes + 3:
        raise ValueError(f"expected {num_phonemes + 3} lines, got {len(lines)}")
    emit = np.array([[float(x) for x in ln.split()] for ln in lines[1:-1]])
    if emit.shape != (num_phonemes + 1, num_graphemes + 1):
        raise ValueError(f"emission block has shape {emit.shape}")
    ops = np.array([float(x) for x in lines[-1].split()])
    return ScorerParams(emit, ops)


def read_params(path) -> ScorerParams:
    with open(path, encoding="utf-8") as f:
        return parse_params(f.read())


def write_params(params: ScorerParams, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_params(params))
