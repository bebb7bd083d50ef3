"""CTC emission lattices, the collapse function and exact sequence scoring."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from skmarg import _kernels

LabelSeq = Tuple[int, ...]
Alignment = Tuple[int, ...]

ROW_TOLERANCE = 1e-6
DEFAULT_ENUMERATION_BUDGET = 10**7


class LatticeError(ValueError):
    """Base class for malformed lattices and label sequences."""


class RowNotNormalized(LatticeError):
    def __init__(self, frame: int, deviation: float):
        super().__init__(f"frame {frame}: logsumexp deviates from 0 by {deviation:.3g}")
        self.frame = frame
        self.deviation = deviation


class NonFiniteEntry(LatticeError):
    def __init__(self, frame: int, index: int):
        super().__init__(f"frame {frame}, state {index}: entry is NaN or positive")
        self.frame = frame
        self.index = index


class VocabMismatch(LatticeError):
    pass


class NonPositiveTemperature(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class PhonemeVocab:
    """Phoneme alphabet; the CTC blank sits at index ``len(symbols)``."""

    symbols: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if not self.symbols:
            raise ValueError("phoneme vocabulary is empty")
        if any(not s for s in self.symbols):
            raise ValueError("phoneme symbols must be non-empty strings")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("phoneme symbols must be unique")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    def encode(self, symbols: Iterable[str]) -> LabelSeq:
        index = {s: i for i, s in enumerate(self.symbols)}
        return tuple(index[s] for s in symbols)

    def decode(self, labels: Iterable[int]) -> Tuple[str, ...]:
        return tuple(self.symbols[i] for i in labels)


@dataclass(frozen=True, eq=False)
class EmissionLattice:
    """Per-frame log-posteriors over ``V`` phonemes plus blank (last column).

    Zero-probability states are stored as ``-inf``.
    """

    log_probs: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        lp = np.array(self.log_probs, dtype=np.float64)
        if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 2:
            raise LatticeError(f"expected a (frames, V+1) matrix, got shape {lp.shape}")
        if not self.frame_shift_ms > 0:
            raise LatticeError("frame_shift_ms must be positive")
        lp.setflags(write=False)
        object.__setattr__(self, "log_probs", lp)

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def num_states(self) -> int:
        return self.log_probs.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_frames * self.frame_shift_ms / 1000.0

    @classmethod
    def from_probs(cls, probs, frame_shift_ms: float = 10.0) -> "EmissionLattice":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)), frame_shift_ms)


def validate_lattice(lattice: EmissionLattice) -> None:
    """Raise if any row is not a normalized log-distribution."""
    lp = lattice.log_probs
    for t, row in enumerate(lp):
        for v, x in enumerate(row):
            if math.isnan(x) or x > 0:
                raise NonFiniteEntry(t, v)
        deviation = abs(float(logsumexp(row)))
        if not deviation <= ROW_TOLERANCE:
            raise RowNotNormalized(t, deviation)


def check_labels(h: Sequence[int], vocab: PhonemeVocab) -> np.ndarray:
    labels = np.asarray(h, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= vocab.size):
        raise VocabMismatch(f"label outside [0, {vocab.size}): {tuple(h)}")
    return labels


def collapse(alignment: Sequence[int], vocab: PhonemeVocab) -> LabelSeq:
    """Merge adjacent repeats, then drop blanks."""
    blank = vocab.blank_index
    out = []
    prev = None
    for state in alignment:
        if state != prev and state != blank:
            out.append(int(state))
        prev = state
    return tuple(out)


def apply_temperature(lattice: EmissionLattice, temperature: float) -> EmissionLattice:
    """Flatten (T > 1) or sharpen (T < 1) every frame distribution."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    scaled = lattice.log_probs / temperature
    scaled = scaled - logsumexp(scaled, axis=1, keepdims=True)
    return EmissionLattice(scaled, lattice.frame_shift_ms)


def label_logprob(lattice: EmissionLattice, h: Sequence[int], vocab: PhonemeVocab) -> float:
    """log p(h|x): CTC forward recursion over the blank-augmented sequence."""
    if lattice.num_states != vocab.size + 1:
        raise VocabMismatch(
            f"lattice has {lattice.num_states} states, vocab expects {vocab.size + 1}"
        )
    labels = check_labels(h, vocab)
    return float(_kernels.ctc_forward(lattice.log_probs, labels, vocab.blank_index))


def enumerate_label_probs(
    lattice: EmissionLattice,
    vocab: PhonemeVocab,
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> Dict[LabelSeq, float]:
    """Exact p(h|x) for every h by brute force over all alignments."""
    states = lattice.num_states
    if states ** lattice.num_frames > budget:
        raise BudgetExceeded(
            f"{states}^{lattice.num_frames} alignments exceed budget {budget}"
        )
    probs = np.exp(lattice.log_probs)
    out: Dict[LabelSeq, float] = {}
    for path in itertools.product(range(states), repeat=lattice.num_frames):
        p = 1.0
        for t, s in enumerate(path):
            p *= probs[t, s]
        if p == 0.0:
            continue
        h = collapse(path, vocab)
        out[h] = out.get(h, 0.0) + p
    return out


def format_lattice(lattice: EmissionLattice) -> str:
    lines = [f"{lattice.num_frames} {lattice.num_states - 1} {lattice.frame_shift_ms!r}"]
    for row in lattice.log_probs:
        lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def parse_lattice(text: str) -> EmissionLattice:
    """Inverse of :func:`format_lattice`; the result is validated."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise LatticeError("empty lattice file")
    header = lines[0].split()
    if len(header) != 3:
        raise LatticeError("header must be 'num_frames V frame_shift_ms'")
    num_frames, num_phonemes, shift = int(header[0]), int(header[1]), float(header[2])
    rows = [[float(x) for x in ln.split()] for ln in lines[1:]]
    if len(rows) != num_frames:
        raise LatticeError(f"expected {num_frames} rows, found {len(rows)}")
    for t, row in enumerate(rows):
        if len(row) != num_phonemes + 1:
            raise LatticeError(f"row {t} has {len(row)} entries, expected {num_phonemes + 1}")
    lattice = EmissionLattice(np.array(rows), shift)
    validate_lattice(lattice)
    return lattice


def read_lattice(path) -> EmissionLattice:
    with open(path, encoding="utf-8") as f:
        return parse_lattice(f.read())


def write_lattice(lattice: EmissionLattice, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_lattice(lattice))
