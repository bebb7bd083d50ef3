import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skmarg.scorer import (
    DEL,
    INS,
    SUB,
    GraphemeVocab,
    ImpossiblePair,
    ScorerParams,
    VocabMismatch,
    decode_y,
    format_params,
    parse_params,
    seq_logprob,
    seq_logprob_grad,
)

from oracles import all_strings, central_difference, edit_brute_force

BIG = 40.0


def forced_params(V=2, G=2):
    """Substitute phoneme v -> grapheme v with certainty; end row emits EOS."""
    emit = np.full((V + 1, G + 1), -BIG)
    for v in range(min(V, G)):
        emit[v, v] = BIG
    emit[V, G] = BIG
    ops = np.array([BIG, -BIG, -BIG])
    return ScorerParams(emit, ops)


def random_params(rng, V, G, scale=1.0):
    return ScorerParams(rng.normal(0, scale, (V + 1, G + 1)), rng.normal(0, scale, 3))


small_seq = st.lists(st.integers(0, 1), max_size=3).map(tuple)


def test_grapheme_vocab():
    gv = GraphemeVocab(("a", "b"))
    assert gv.eos_index == 2
    assert gv.decode(gv.encode(["b", "a"])) == ("b", "a")
    with pytest.raises(ValueError):
        GraphemeVocab(("a", "</s>"))


class TestSeqLogprob:
    def test_forced_path(self):
        assert seq_logprob(forced_params(), (0,), (0,)) == pytest.approx(0.0, abs=1e-6)
        assert seq_logprob(forced_params(), (0, 1), (0, 1)) == pytest.approx(0.0, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), small_seq, small_seq)
    def test_matches_path_enumeration(self, seed, h, y):
        params = random_params(np.random.default_rng(seed), 2, 2)
        expected = edit_brute_force(params.emit_logits, params.op_logits, h, y)
        assert math.exp(seq_logprob(params, h, y)) == pytest.approx(expected, abs=1e-9)

    def test_two_by_two_grid(self, rng):
        params = random_params(rng, 3, 3, scale=2.0)
        h, y = (0, 2), (1, 1)
        expected = edit_brute_force(params.emit_logits, params.op_logits, h, y)
        assert math.exp(seq_logprob(params, h, y)) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("h", [(), (0,), (1, 0)])
    def test_proper_distribution(self, rng, h):
        params = random_params(rng, 2, 2)
        # truncated sum plus the exact tail: once the end row is reached every
        # further grapheme costs at least a factor q = 1 - p_eos, so strings longer
        # than max_len are bounded by the total mass still alive at that length
        max_len = 9
        total = sum(math.exp(seq_logprob(params, h, y)) for y in all_strings(2, max_len))
        assert total <= 1 + 1e-9
        ops = np.exp(params.op_logits - np.logaddexp.reduce(params.op_logits))
        end = np.exp(params.emit_logits[-1] - np.logaddexp.reduce(params.emit_logits[-1]))
        q = max(1 - end[-1], ops[INS] + 0.0)
        tail_bound = (max_len + 2) ** (len(h) + 1) * q ** (max_len + 1 - len(h))
        assert total >= 1 - tail_bound - 1e-9

    def test_short_sums_bounded(self, rng):
        params = random_params(rng, 2, 2)
        total = sum(math.exp(seq_logprob(params, (0, 1), y)) for y in all_strings(2, 3))
        assert total <= 1 + 1e-9

    def test_vocab_mismatch(self):
        with pytest.raises(VocabMismatch):
            seq_logprob(forced_params(), (2,), (0,))
        with pytest.raises(VocabMismatch):
            seq_logprob(forced_params(), (0,), (2,))

    def test_deterministic_and_nonpositive(self, rng):
        params = random_params(rng, 3, 2)
        a = seq_logprob(params, (0, 2, 1), (1, 0))
        assert a == seq_logprob(params, (0, 2, 1), (1, 0)) and a <= 0

    def test_params_reject_nonfinite(self):
        with pytest.raises(ValueError):
            ScorerParams(np.array([[0.0, np.nan], [0.0, 0.0]]), np.zeros(3))


def _grad_oracle(params, h, y):
    emit_shape = params.emit_logits.shape
    n_emit = params.emit_logits.size

    def f(flat):
        p = ScorerParams(flat[:n_emit].reshape(emit_shape), flat[n_emit:])
        return seq_logprob(p, h, y)

    x = np.concatenate([params.emit_logits.ravel(), params.op_logits])
    return central_difference(f, x, step=1e-5)


def _relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


class TestGrad:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), small_seq, small_seq)
    def test_finite_difference(self, seed, h, y):
        params = random_params(np.random.default_rng(seed), 2, 2)
        value, grad = seq_logprob_grad(params, h, y)
        assert value == pytest.approx(seq_logprob(params, h, y), abs=1e-12)
        assert _relative_error(grad.flat(), _grad_oracle(params, h, y)) < 1e-4

    def test_unused_row_is_zero(self, rng):
        params = random_params(rng, 3, 2)
        _, grad = seq_logprob_grad(params, (0, 0, 2), (1, 0))
        assert np.all(grad.emit[1] == 0.0)

    def test_symmetric_point(self):
        params = ScorerParams.zeros(2, 2)
        _, grad = seq_logprob_grad(params, (0,), ())
        # empty y touches only the delete op and the end row's EOS column
        body = grad.emit[:-1, :-1]
        assert np.allclose(body, body.flat[0])
        _, grad = seq_logprob_grad(params, (0, 1), (0, 1))
        flat_ops = grad.op
        assert np.isfinite(flat_ops).all()
        # within each normalization group the gradient sums to zero
        assert grad.op.sum() == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad.emit[:-1, :-1].sum(axis=1), 0.0, atol=1e-12)
        assert grad.emit[-1].sum() == pytest.approx(0.0, abs=1e-12)

    def test_relabeling_symmetry(self):
        params = ScorerParams.zeros(2, 2)
        _, g0 = seq_logprob_grad(params, (0,), (0,))
        _, g1 = seq_logprob_grad(params, (1,), (1,))
        swap = [1, 0, 2]
        np.testing.assert_allclose(g1.emit, g0.emit[np.ix_(swap, swap)], atol=1e-12)
        np.testing.assert_allclose(g1.op, g0.op, atol=1e-12)

    def test_impossible_pair(self, monkeypatch):
        from skmarg import _kernels

        def dead(log_emit, log_ops, h, y, end_row, eos):
            return -math.inf, np.zeros(log_emit.shape), np.zeros(3)

        # finite logits never produce a zero-probability pair, so stub the kernel
        monkeypatch.setattr(_kernels, "edit_counts", dead)
        with pytest.raises(ImpossiblePair):
            seq_logprob_grad(forced_params(), (0,), (1,))


class TestDecode:
    def test_forced(self):
        out = decode_y(forced_params(), (0,), beam=3, max_len=3)
        assert out[0][0] == (0,)
        assert out[0][1] == pytest.approx(0.0, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), small_seq)
    def test_full_beam_matches_enumeration(self, seed, h):
        params = random_params(np.random.default_rng(seed), 2, 2, scale=1.5)
        max_len = 3
        pool = list(all_strings(2, max_len))
        expected = sorted(
            ((y, seq_logprob(params, h, y)) for y in pool),
            key=lambda item: (-item[1], len(item[0]), item[0]),
        )
        out = decode_y(params, h, beam=len(pool), max_len=max_len)
        assert [y for y, _ in out] == [y for y, _ in expected]
        for (_, a), (_, b) in zip(out, expected):
            assert a == pytest.approx(b, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), small_seq, st.integers(1, 4))
    def test_narrow_beam_is_rescored_and_sorted(self, seed, h, beam):
        params = random_params(np.random.default_rng(seed), 2, 2, scale=2.0)
        out = decode_y(params, h, beam=beam, max_len=4)
        assert 1 <= len(out) <= beam
        assert len({y for y, _ in out}) == len(out)
        for y, lp in out:
            assert len(y) <= 4
            assert lp == seq_logprob(params, h, y)
        assert [lp for _, lp in out] == sorted((lp for _, lp in out), reverse=True)

    def test_empty_h_geometric(self):
        # end row: grapheme 1 with prob .6, grapheme 0 with .3, EOS with .1
        emit = np.zeros((3, 3))
        emit[2] = np.log([0.3, 0.6, 0.1])
        params = ScorerParams(emit, np.zeros(3))
        out = decode_y(params, (), beam=3, max_len=5)
        # p(y) = .1 * prod p(y_i): longer strings only lose mass
        assert out[0] == ((), pytest.approx(math.log(0.1)))
        assert out[1][0] == (1,)
        assert out[1][1] == pytest.approx(math.log(0.06))
        assert out[2][0] == (1, 1)

    def test_rejects_zero_beam(self):
        with pytest.raises(ValueError):
            decode_y(forced_params(), (0,), beam=0, max_len=2)


def test_params_roundtrip(rng):
    params = random_params(rng, 3, 4, scale=3.0)
    text = format_params(params)
    assert text.splitlines()[0] == "3 4"
    back = parse_params(text)
    assert np.array_equal(back.emit_logits, params.emit_logits)
    assert np.array_equal(back.op_logits, params.op_logits)
    assert format_params(back) == text


def test_params_parse_rejects_bad_shape():
    with pytest.raises(ValueError):
        parse_params("1 1\n0 0\n0 0 0\n")


def test_op_indices():
    assert (SUB, INS, DEL) == (0, 1, 2)
