"""Decoding tests: beam search vs exhaustive enumeration, greedy, filtering."""

import math

import numpy as np
import pytest

from unansqgen import text
from unansqgen.data import AlignedPair
from unansqgen.decode import (
    BeamHypothesis,
    _ranked,
    beam_search,
    filter_outputs,
    generate_for_example,
    greedy_decode,
    load_generations,
    save_generations,
    score_sequence,
)
from unansqgen.model import (
    ModelParams,
    decode_step,
    encode_input,
    extended_vocab,
    final_distribution,
    init_decoder,
)
from unansqgen.tensor import Tape
from unansqgen.text import Vocab


def toy_setup(mode="seq2seq", seed=13):
    vocab = Vocab(["aa", "bb"])
    params = ModelParams(len(vocab), mode, word_dim=6, enc_hidden=3, seed=seed)
    tape = Tape()
    enc = encode_input(tape, params, vocab, ["aa", "zz", "bb"], 1, 2, ["bb", "aa"])
    return tape, params, enc, vocab


def enumerate_finished(tape, params, enc, vocab, max_len):
    """Every finished sequence of length <= max_len with its exact log score.

    Independent route: teacher-forced probabilities read off the final
    mixture, UNK excluded, recursion over all candidate indices.
    """
    extra = extended_vocab(enc, vocab)[0]
    width = len(vocab) + len(extra)
    results = []

    def rec(state, prev_id, tokens, score, depth):
        if depth == max_len:
            return
        step = decode_step(tape, params, enc, state, prev_id)
        dist, _ = final_distribution(step, enc, vocab)
        for idx in range(width):
            if idx == text.UNK_ID or dist[idx] <= 0.0:
                continue
            s = score + math.log(dist[idx])
            if idx == text.EOS_ID:
                results.append((s, tuple(tokens)))
            else:
                surface = vocab.token(idx) if idx < len(vocab) else extra[idx - len(vocab)]
                rec(step.state, idx if idx < len(vocab) else text.UNK_ID,
                    tokens + [surface], s, depth + 1)

    rec(init_decoder(tape, params, enc), text.BOS_ID, [], 0.0, 0)
    return results


@pytest.mark.parametrize("mode", ["seq2seq", "pair2seq"])
@pytest.mark.parametrize("seed", [13, 99])
def test_beam_full_width_matches_enumeration(mode, seed):
    tape, params, enc, vocab = toy_setup(mode, seed)
    max_len = 3
    oracle = enumerate_finished(tape, params, enc, vocab, max_len)
    assert oracle, "toy model must be able to finish within max_len"
    width = len(vocab) + len(extended_vocab(enc, vocab)[0])
    # the last step fans out widest: every surviving parent offers width - 1
    # finite candidates (UNK excluded), parents branch by width - 2 (EOS retires)
    full = (width - 1) * (width - 2) ** (max_len - 1)
    hyps = beam_search(tape, params, enc, vocab, beam_size=full, max_len=max_len)
    assert all(h.finished for h in hyps)
    # with no pruning the beam must recover the oracle set exactly
    got = sorted((round(h.score, 9), tuple(h.surface())) for h in hyps)
    want = sorted((round(s, 9), toks) for s, toks in oracle)
    assert got == want
    best_score, best_tokens = max(oracle, key=lambda r: (r[0], r[1]))
    assert hyps[0].score == pytest.approx(best_score, abs=1e-9)


def test_beam_size_one_equals_greedy():
    for mode in ("seq2seq", "pair2seq"):
        for seed in (1, 7, 13):
            tape, params, enc, vocab = toy_setup(mode, seed)
            greedy = greedy_decode(tape, params, enc, vocab, max_len=6)
            top = beam_search(tape, params, enc, vocab, beam_size=1, max_len=6)[0]
            assert top.surface() == greedy


def test_unk_never_emitted():
    for seed in (1, 2, 3, 4, 5):
        tape, params, enc, vocab = toy_setup("seq2seq", seed)
        for h in beam_search(tape, params, enc, vocab, beam_size=5, max_len=6):
            assert text.UNK not in h.tokens
        assert text.UNK not in greedy_decode(tape, params, enc, vocab, max_len=6)


def test_beam_rejects_bad_size():
    tape, params, enc, vocab = toy_setup()
    with pytest.raises(ValueError):
        beam_search(tape, params, enc, vocab, beam_size=0)


def test_hypothesis_scores_recompute_by_teacher_forcing():
    for max_len in (2, 6):
        tape, params, enc, vocab = toy_setup("pair2seq")
        for h in beam_search(tape, params, enc, vocab, beam_size=4, max_len=max_len):
            again = score_sequence(tape, params, enc, vocab, h.surface(),
                                   include_eos=h.finished)
            assert h.score == pytest.approx(again, abs=1e-9)


def test_beam_monotone_in_width_and_beats_greedy(memorized_toy):
    # a trained model terminates on its own, making the score space honest
    params, vocab, pairs = memorized_toy
    for pair in pairs:
        tape = Tape()
        enc = encode_input(tape, params, vocab, pair.paragraph_tokens,
                           pair.answer_start, pair.answer_end, pair.answerable_tokens)
        greedy = greedy_decode(tape, params, enc, vocab, max_len=8)
        assert len(greedy) < 8, "trained decode must terminate via EOS"
        greedy_score = score_sequence(tape, params, enc, vocab, greedy)
        prev = -math.inf
        for width in (1, 2, 3, 5, 8):
            top = beam_search(tape, params, enc, vocab, beam_size=width, max_len=8)[0]
            assert top.finished
            assert top.score >= prev - 1e-9
            prev = top.score
        assert prev >= greedy_score - 1e-9


def test_greedy_reproduces_memorized_targets(memorized_toy):
    params, vocab, pairs = memorized_toy
    for pair in pairs:
        tape = Tape()
        enc = encode_input(tape, params, vocab, pair.paragraph_tokens,
                           pair.answer_start, pair.answer_end, pair.answerable_tokens)
        assert greedy_decode(tape, params, enc, vocab) == pair.unanswerable_tokens


def test_greedy_is_deterministic_and_bounded():
    tape, params, enc, vocab = toy_setup()
    a = greedy_decode(tape, params, enc, vocab, max_len=4)
    b = greedy_decode(Tape(), params, enc, vocab, max_len=4)
    assert a == b
    assert len(a) <= 4


def test_score_sequence_unreachable_token():
    tape, params, enc, vocab = toy_setup()
    assert score_sequence(tape, params, enc, vocab, ["nowhere"]) == -math.inf


def test_partial_hypotheses_returned_when_nothing_finishes():
    tape, params, enc, vocab = toy_setup()
    hyps = beam_search(tape, params, enc, vocab, beam_size=2, max_len=1)
    assert hyps
    for h in hyps:
        if not h.finished:
            assert len(h.tokens) == 1
            again = score_sequence(tape, params, enc, vocab, h.tokens, include_eos=False)
            assert h.score == pytest.approx(again, abs=1e-9)


def test_ranking_length_penalty_flag():
    short = BeamHypothesis(["aa"], -2.0, None, 0, finished=True)
    long = BeamHypothesis(["aa", "bb", "cc", "dd"], -3.0, None, 0, finished=True)
    assert _ranked([long, short], 0.0)[0] is short
    # normalized: -3/4 beats -2/1
    assert _ranked([long, short], 1.0)[0] is long


def test_filter_outputs_exact_source_match():
    source = ["what", "is", "it", "?"]
    same = BeamHypothesis(source + [text.EOS], -1.0, None, 0, finished=True)
    near = BeamHypothesis(["what", "was", "it", "?", text.EOS], -2.0, None, 0,
                          finished=True)
    dup = BeamHypothesis(["what", "was", "it", "?", text.EOS], -3.0, None, 0,
                         finished=True)
    kept = filter_outputs([same, near, dup], source)
    assert kept == [near, dup]  # order preserved, duplicates kept
    assert filter_outputs([same], source) == []


def test_generate_for_example_filters_and_bounds():
    vocab = Vocab(["aa", "bb"])
    params = ModelParams(len(vocab), "seq2seq", word_dim=6, enc_hidden=3, seed=13)
    pair = AlignedPair(title="t", paragraph_tokens=["aa", "zz", "bb"],
                       answer_start=1, answer_end=2,
                       answerable_tokens=["bb", "aa"], unanswerable_tokens=["aa"])
    out = generate_for_example(params, vocab, pair, beam_size=4, max_len=5, nbest=2)
    assert len(out) <= 2
    for h in out:
        assert h.surface() != pair.answerable_tokens
    again = generate_for_example(params, vocab, pair, beam_size=4, max_len=5, nbest=2)
    assert [(h.surface(), h.score) for h in out] == \
        [(h.surface(), h.score) for h in again]


def test_generation_file_round_trip(tmp_path):
    rows = [("q1", ["why", "not", "?"], -3.25), ("q2", ["when", "?"], -0.5)]
    path = tmp_path / "gen.tsv"
    save_generations(path, rows)
    loaded = load_generations(path)
    assert [(q, t) for q, t, _ in loaded] == [(q, t) for q, t, _ in rows]
    for (_, _, a), (_, _, b) in zip(loaded, rows):
        assert a == pytest.approx(b, abs=1e-6)


def test_generation_file_rejects_bad_rows(tmp_path):
    path = tmp_path / "gen.tsv"
    path.write_text("q1\tonly two fields\n", encoding="utf-8")
    with pytest.raises(ValueError, match="gen.tsv:1"):
        load_generations(path)
