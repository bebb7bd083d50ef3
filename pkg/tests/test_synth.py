import numpy as np
import pytest

from skmarg.candidates import prefix_beam_search
from skmarg.lattice import label_logprob, validate_lattice
from skmarg.synth import (
    SynthSpec,
    gen_corpus,
    gen_example,
    make_spec,
    manifest_summary,
    read_corpus,
    split_corpus,
    synth_lattice,
    write_corpus,
)


def test_make_spec_is_ambiguous():
    spec = make_spec()
    assert spec.ambiguous
    assert (spec.num_graphemes, spec.num_phonemes) == (6, 8)
    assert not make_spec(ambiguous=False).ambiguous


@pytest.mark.parametrize(
    "bad",
    [
        dict(noise=1.0),
        dict(noise=-0.1),
        dict(frames_per_phoneme=0),
        dict(min_len=4, max_len=3),
    ],
)
def test_rejects_bad_settings(bad):
    with pytest.raises(ValueError):
        make_spec(**bad)


def test_rejects_unnormalized_g2p():
    with pytest.raises(ValueError):
        SynthSpec(2, 1, ((((0,), 0.5), ((1,), 0.4)),))


@pytest.mark.parametrize("noise", [0.0, 0.3, 0.5, 0.9])
def test_lattices_valid(noise):
    for ex in gen_corpus(make_spec(noise=noise, seed=2), 30):
        validate_lattice(ex.lattice)
        assert ex.lattice.num_frames == len(ex.h_true) * 3 - 1


def renders_to(y, h, spec):
    """Whether some choice of renderings turns y into exactly h."""
    reachable = {0}
    for g in y:
        reachable = {
            pos + len(ph)
            for pos in reachable
            for ph, p in spec.g2p[g]
            if p > 0 and h[pos : pos + len(ph)] == ph
        }
    return len(h) in reachable


def test_h_derivable_from_y():
    spec = make_spec(seed=4)
    for ex in gen_corpus(spec, 50):
        assert spec.min_len <= len(ex.y_true) <= spec.max_len
        assert renders_to(ex.y_true, ex.h_true, spec)


def test_zero_noise_top1_is_truth():
    spec = make_spec(noise=0.0, seed=5)
    vocab = spec.phoneme_vocab()
    for ex in gen_corpus(spec, 40):
        assert prefix_beam_search(ex.lattice, vocab, 4)[0].h == ex.h_true
        assert label_logprob(ex.lattice, ex.h_true, vocab) == 0.0


def test_near_one_noise_is_almost_uniform(rng):
    spec = make_spec(noise=1 - 1e-9)
    lat = synth_lattice((0, 1), spec, rng)
    np.testing.assert_allclose(np.exp(lat.log_probs), 1 / 9, atol=1e-8)


def test_repeats_survive_boundary_blank():
    spec = make_spec(noise=0.0)
    lat = synth_lattice((3, 3), spec, np.random.default_rng(0))
    assert label_logprob(lat, (3, 3), spec.phoneme_vocab()) == 0.0


def test_empty_h_rejected(rng):
    with pytest.raises(ValueError):
        synth_lattice((), make_spec(), rng)


def test_jitter_keeps_rows_valid():
    spec = make_spec(noise=0.5, noise_jitter=0.5)
    lat = synth_lattice((0, 1, 2), spec, np.random.default_rng(1))
    validate_lattice(lat)
    assert np.ptp(lat.log_probs.max(axis=1)) > 0


def test_determinism():
    spec = make_spec(seed=7)
    a, b = gen_example(spec, 3), gen_example(spec, 3)
    assert a.y_true == b.y_true and a.h_true == b.h_true
    np.testing.assert_array_equal(a.lattice.log_probs, b.lattice.log_probs)
    # example i does not depend on the corpus size
    np.testing.assert_array_equal(gen_corpus(spec, 5)[3].lattice.log_probs, a.lattice.log_probs)


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        gen_corpus(make_spec(), 0)


def test_split():
    train, test = split_corpus(list(range(500)), 0.2)
    assert len(test) == 100 and test[0] == 400 and len(train) == 400


def test_corpus_roundtrip(tmp_path):
    spec = make_spec(seed=3)
    examples = gen_corpus(spec, 6)
    write_corpus(tmp_path, spec, examples)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert lines[0] == "id\tframes\tref_len" and len(lines) == 7
    spec2, back = read_corpus(tmp_path)
    assert spec2 == spec
    for a, b in zip(examples, back):
        assert (a.uid, a.y_true, a.h_true) == (b.uid, b.y_true, b.h_true)
        np.testing.assert_array_equal(a.lattice.log_probs, b.lattice.log_probs)
    summary = manifest_summary(back)
    assert summary["utterances"] == 6
    assert summary["ref_tokens"] == sum(len(e.y_true) for e in examples)
