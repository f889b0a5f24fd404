"""Beam-search and greedy inference over the mixture distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import text
from .model import (decode_step, encode_input, extended_vocab,
                    final_distribution, init_decoder)
from .tensor import Tape


@dataclass
class BeamHypothesis:
    """One partial or finished decode. `tokens` are surface forms; a
    finished hypothesis ends with the EOS surface."""
    tokens: list
    score: float
    state: object
    prev_id: int
    finished: bool = False

    def surface(self):
        """Tokens without the closing EOS marker."""
        if self.finished and self.tokens and self.tokens[-1] == text.EOS:
            return self.tokens[:-1]
        return list(self.tokens)


def _ranked(hypotheses, length_penalty):
    def key(h):
        score = h.score
        if length_penalty > 0.0 and h.tokens:
            score = score / (len(h.tokens) ** length_penalty)
        return (-score, h.tokens)
    return sorted(hypotheses, key=key)


def beam_search(tape, params, enc, vocab, beam_size=5, max_len=50, length_penalty=0.0):
    """Ranked hypotheses for one encoded input.

    Standard beam expansion over the final mixture distribution with the
    UNK entry suppressed to -inf; hypotheses retire when they emit EOS.
    Candidate ties break toward the lower token index within a parent.
    Without a length penalty the ranking is raw total log-probability. If
    nothing finishes within max_len, the surviving partial hypotheses are
    returned (finished=False).
    """
    if beam_size < 1:
        raise ValueError(f"beam_search: beam_size must be >= 1, got {beam_size}")
    extended = extended_vocab(enc, vocab)[0]
    width = len(vocab) + len(extended)
    beams = [BeamHypothesis([], 0.0, init_decoder(tape, params, enc), text.BOS_ID)]
    finished = []
    for _ in range(max_len):
        if not beams or len(finished) >= beam_size:
            break
        scores = np.full((len(beams), width), -np.inf)
        next_states = []
        for bi, hyp in enumerate(beams):
            step = decode_step(tape, params, enc, hyp.state, hyp.prev_id)
            next_states.append(step.state)
            dist, _ = final_distribution(step, enc, vocab)
            with np.errstate(divide="ignore"):
                logp = np.log(dist)
            logp[text.UNK_ID] = -np.inf
            scores[bi] = hyp.score + logp
        flat = scores.ravel()
        # stable sort on the flattened (parent, token) grid: ties resolve to
        # the earlier parent, then the lower token index
        order = np.argsort(-flat, kind="stable")
        new_beams = []
        for slot in order[:beam_size]:
            if not math.isfinite(flat[slot]):
                break
            parent, idx = divmod(int(slot), width)
            surface = vocab.token(idx) if idx < len(vocab) else extended[idx - len(vocab)]
            hyp = BeamHypothesis(beams[parent].tokens + [surface], float(flat[slot]),
                                 next_states[parent],
                                 idx if idx < len(vocab) else text.UNK_ID)
            if idx == text.EOS_ID:
                hyp.finished = True
                finished.append(hyp)
            else:
                new_beams.append(hyp)
        beams = new_beams
    if finished:
        return _ranked(finished, length_penalty)
    return _ranked(beams, length_penalty)


def greedy_decode(tape, params, enc, vocab, max_len=50):
    """Argmax decode after UNK suppression, ties to the lowest index.

    Returns the surface tokens without the EOS marker.
    """
    state = init_decoder(tape, params, enc)
    prev_id = text.BOS_ID
    extended = extended_vocab(enc, vocab)[0]
    tokens = []
    for _ in range(max_len):
        step = decode_step(tape, params, enc, state, prev_id)
        state = step.state
        dist, _ = final_distribution(step, enc, vocab)
        dist[text.UNK_ID] = 0.0
        idx = int(np.argmax(dist))  # first maximum: lowest index on ties
        if idx == text.EOS_ID:
            break
        surface = vocab.token(idx) if idx < len(vocab) else extended[idx - len(vocab)]
        tokens.append(surface)
        prev_id = idx if idx < len(vocab) else text.UNK_ID
    return tokens


def score_sequence(tape, params, enc, vocab, surface_tokens, include_eos=True):
    """Total log mixture probability of a token sequence, teacher-forced.

    Tokens absent from both the vocabulary and the input's copy candidates
    score -inf. Used to cross-check beam scores.
    """
    extra = extended_vocab(enc, vocab)[0]
    index = {tok: len(vocab) + k for k, tok in enumerate(extra)}
    state = init_decoder(tape, params, enc)
    prev_id = text.BOS_ID
    total = 0.0
    steps = list(surface_tokens) + ([text.EOS] if include_eos else [])
    for tok in steps:
        step = decode_step(tape, params, enc, state, prev_id)
        state = step.state
        dist, _ = final_distribution(step, enc, vocab)
        if tok in vocab:
            idx = vocab.id(tok)
        elif tok in index:
            idx = index[tok]
        else:
            return -math.inf
        p = dist[idx]
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
        prev_id = idx if idx < len(vocab) else text.UNK_ID
    return total


def filter_outputs(hypotheses, source_question_tokens):
    """Drop hypotheses whose surface equals the source question exactly."""
    source = list(source_question_tokens)
    return [h for h in hypotheses if h.surface() != source]


def generate_for_example(params, vocab, pair, beam_size=5, max_len=50, nbest=1):
    """Encode one aligned pair and return up to nbest filtered hypotheses."""
    tape = Tape()
    enc = encode_input(tape, params, vocab, pair.paragraph_tokens,
                       pair.answer_start, pair.answer_end, pair.answerable_tokens)
    hyps = beam_search(tape, params, enc, vocab, beam_size=beam_size, max_len=max_len)
    return filter_outputs(hyps, pair.answerable_tokens)[:nbest]


def save_generations(path, rows):
    """One record per generation: id, space-joined tokens, total log-probability."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, tokens, score in rows:
            fh.write(f"{qid}\t{' '.join(tokens)}\t{score:.6f}\n")


def load_generations(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
            rows.append((parts[0], parts[1].split(), float(parts[2])))
    return rows
