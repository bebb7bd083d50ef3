"""Synthetic grapheme/phoneme language and noisy CTC lattices."""

from __future__ import annotations

import json
import os
import string
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from skmarg.lattice import (
    EmissionLattice,
    LabelSeq,
    PhonemeVocab,
    read_lattice,
    write_lattice,
)
from skmarg.scorer import GraphemeSeq, GraphemeVocab

Rendering = Tuple[Tuple[int, ...], float]


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``g2p[g]`` lists the phoneme renderings of grapheme ``g`` with their
    probabilities.  ``noise`` is the weight of the uniform component mixed
    into every frame; ``noise_jitter`` (0 by default) perturbs it per frame.
    """

    num_phonemes: int
    num_graphemes: int
    g2p: Tuple[Tuple[Rendering, ...], ...]
    min_len: int = 3
    max_len: int = 6
    frames_per_phoneme: int = 2
    noise: float = 0.5
    seed: int = 0
    frame_shift_ms: float = 10.0
    noise_jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"noise must lie in [0, 1), got {self.noise}")
        if not 0.0 <= self.noise_jitter <= 1.0:
            raise ValueError("noise_jitter must lie in [0, 1]")
        if self.frames_per_phoneme < 1:
            raise ValueError("frames_per_phoneme must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if len(self.g2p) != self.num_graphemes:
            raise ValueError("g2p needs one entry per grapheme")
        for g, renderings in enumerate(self.g2p):
            if not renderings:
                raise ValueError(f"grapheme {g} has no rendering")
            total = sum(p for _, p in renderings)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"rendering probabilities of grapheme {g} sum to {total}")
            for phones, p in renderings:
                if not phones or p < 0:
                    raise ValueError(f"bad rendering for grapheme {g}")
                if min(phones) < 0 or max(phones) >= self.num_phonemes:
                    raise ValueError(f"rendering of grapheme {g} uses unknown phoneme")

    @property
    def ambiguous(self) -> bool:
        return any(len(r) > 1 for r in self.g2p)

    def phoneme_vocab(self) -> PhonemeVocab:
        return PhonemeVocab(tuple(f"p{i}" for i in range(self.num_phonemes)))

    def grapheme_vocab(self) -> GraphemeVocab:
        letters = string.ascii_lowercase
        if self.num_graphemes > len(letters):
            return GraphemeVocab(tuple(f"g{i}" for i in range(self.num_graphemes)))
        return GraphemeVocab(tuple(letters[: self.num_graphemes]))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["g2p"] = [[[list(ph), p] for ph, p in r] for r in self.g2p]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        data = dict(data)
        data["g2p"] = tuple(
            tuple((tuple(ph), float(p)) for ph, p in r) for r in data["g2p"]
        )
        return cls(**data)


def make_spec(
    num_graphemes: int = 6,
    num_phonemes: int = 8,
    ambiguous: bool = True,
    **kwargs,
) -> SynthSpec:
    """A small language: grapheme g is primarily rendered as phoneme g.

    With ``ambiguous`` the spare phonemes become alternative renderings of the
    first graphemes (probability 0.35), and the last grapheme may also be
    rendered as a two-phoneme sequence that overlaps a neighbour.
    """
    if ambiguous and num_phonemes < num_graphemes:
        raise ValueError("need at least as many phonemes as graphemes")
    if not ambiguous:
        num_phonemes = num_graphemes
    g2p: List[List[Rendering]] = [[((g,), 1.0)] for g in range(num_graphemes)]
    if ambiguous:
        for i in range(min(num_phonemes - num_graphemes, num_graphemes)):
            g2p[i] = [((i,), 0.65), ((num_graphemes + i,), 0.35)]
        last = num_graphemes - 1
        if num_graphemes >= 3 and len(g2p[last]) == 1:
            g2p[last] = [((last,), 0.7), ((last, last - 1), 0.3)]
    return SynthSpec(
        num_phonemes=num_phonemes,
        num_graphemes=num_graphemes,
        g2p=tuple(tuple(r) for r in g2p),
        **kwargs,
    )


@dataclass(frozen=True, eq=False)
class SynthExample:
    y_true: GraphemeSeq
    h_true: LabelSeq
    lattice: EmissionLattice
    uid: str = field(default="")


def render(y: Sequence[int], spec: SynthSpec, rng: np.random.Generator) -> LabelSeq:
    h: List[int] = []
    for g in y:
        renderings = spec.g2p[g]
        if len(renderings) == 1:
            pick = 0
        else:
            pick = int(rng.choice(len(renderings), p=[p for _, p in renderings]))
        h.extend(renderings[pick][0])
    return tuple(h)


def synth_lattice(h_true: Sequence[int], spec: SynthSpec, rng: np.random.Generator) -> EmissionLattice:
    """Point masses on the intended states, mixed with uniform noise.

    Each label occupies ``frames_per_phoneme`` frames; a blank-favored frame
    separates consecutive labels so repeats stay representable.
    """
    if len(h_true) == 0:
        raise ValueError("h_true must be non-empty")
    states = spec.num_phonemes + 1
    blank = spec.num_phonemes
    intended: List[int] = []
    for k, label in enumerate(h_true):
        if k:
            intended.append(blank)
        intended.extend([label] * spec.frames_per_phoneme)
    num_frames = len(intended)
    noise = np.full(num_frames, spec.noise)
    if spec.noise_jitter > 0:
        spread = spec.noise_jitter * spec.noise
        noise = np.clip(noise + rng.uniform(-spread, spread, num_frames), 0.0, 1.0 - 1e-9)
    probs = np.repeat((noise / states)[:, None], states, axis=1)
    probs[np.arange(num_frames), intended] += 1.0 - noise
    probs /= probs.sum(axis=1, keepdims=True)
    return EmissionLattice.from_probs(probs, spec.frame_shift_ms)


def example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def gen_example(spec: SynthSpec, index: int) -> SynthExample:
    rng = example_rng(spec.seed, index)
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    y = tuple(int(g) for g in rng.integers(0, spec.num_graphemes, size=length))
    h = render(y, spec, rng)
    return SynthExample(y, h, synth_lattice(h, spec, rng), uid=f"utt{index:05d}")


def gen_corpus(spec: SynthSpec, count: int) -> List[SynthExample]:
    """``count`` examples; example ``i`` depends only on (seed, i)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [gen_example(spec, i) for i in range(count)]


def split_corpus(examples: Sequence, test_fraction: float = 0.2) -> Tuple[list, list]:
    """Deterministic (train, test) split: the last ``test_fraction`` is held out."""
    n_test = int(round(len(examples) * test_fraction))
    n_test = min(max(n_test, 0), len(examples) - 1)
    cut = len(examples) - n_test
    return list(examples[:cut]), list(examples[cut:])


def write_corpus(directory, spec: SynthSpec, examples: Sequence[SynthExample]) -> None:
    """``<id>.lat``, ``<id>.ref``, ``<id>.phn``, ``manifest.tsv`` and ``spec.json``."""
    os.makedirs(directory, exist_ok=True)
    pv, gv = spec.phoneme_vocab(), spec.grapheme_vocab()
    with open(os.path.join(directory, "spec.json"), "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    manifest = ["id\tframes\tref_len"]
    for ex in examples:
        base = os.path.join(directory, ex.uid)
        write_lattice(ex.lattice, base + ".lat")
        with open(base + ".ref", "w", encoding="utf-8") as f:
            f.write(" ".join(gv.decode(ex.y_true)) + "\n")
        with open(base + ".phn", "w", encoding="utf-8") as f:
            f.write(" ".join(pv.decode(ex.h_true)) + "\n")
        manifest.append(f"{ex.uid}\t{ex.lattice.num_frames}\t{len(ex.y_true)}")
    with open(os.path.join(directory, "manifest.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(manifest) + "\n")


def read_corpus(directory) -> Tuple[SynthSpec, List[SynthExample]]:
    with open(os.path.join(directory, "spec.json"), encoding="utf-8") as f:
        spec = SynthSpec.from_dict(json.load(f))
    pv, gv = spec.phoneme_vocab(), spec.grapheme_vocab()
    examples = []
    with open(os.path.join(directory, "manifest.tsv"), encoding="utf-8") as f:
        rows = [ln.rstrip("\n").split("\t") for ln in f if ln.strip()]
    for uid, *_ in rows[1:]:
        base = os.path.join(directory, uid)
        lattice = read_lattice(base + ".lat")
        with open(base + ".ref", encoding="utf-8") as f:
            y = gv.encode(f.read().split())
        h: LabelSeq = ()
        if os.path.exists(base + ".phn"):
            with open(base + ".phn", encoding="utf-8") as f:
                h = pv.encode(f.read().split())
        examples.append(SynthExample(y, h, lattice, uid))
    return spec, examples


def manifest_summary(examples: Sequence[SynthExample]) -> Dict[str, float]:
    frames = [ex.lattice.num_frames for ex in examples]
    refs = [len(ex.y_true) for ex in examples]
    return {
        "utterances": len(examples),
        "frames": int(sum(frames)),
        "ref_tokens": int(sum(refs)),
        "mean_frames": float(np.mean(frames)),
    }
