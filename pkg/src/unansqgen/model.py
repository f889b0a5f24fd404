"""Generation model: shared input embedding, recurrent encoders, the
paragraph/question interaction layer, and the attention/copy decoder.

Both architectures run on the tape from `tensor`; every forward pass builds
a fresh Tape so gradients fall out of `backward` with no model-side code.
Parameters live in a name -> Tensor mapping so the optimizer and the
checkpoint format stay agnostic of the architecture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import text
from .tensor import (CHECKPOINT_VERSION, Tape, Tensor, load_checkpoint,
                     parameter, save_checkpoint)

WORD_DIM = 300
ENC_HIDDEN = 150

MODES = ("seq2seq", "pair2seq")

_GATES = ("i", "f", "o", "c")


class ModelError(ValueError):
    """Raised for invalid model configuration or malformed checkpoints."""


class DropStream:
    """Deterministic per-call dropout seeds derived from one base tuple.

    Every dropout site consumes the next counter value, so a forward pass
    rebuilt with the same stream reproduces every mask bit for bit.
    """

    def __init__(self, seed_parts, keep):
        self.base = tuple(int(x) for x in seed_parts)
        self.keep = float(keep)
        self.count = 0

    def take(self):
        self.count += 1
        return self.base + (self.count,)


def _maybe_drop(tape, x, drops):
    if drops is not None and drops.keep < 1.0:
        return tape.dropout(x, drops.keep, drops.take())
    return x


class ModelParams:
    """All trainable tensors for one mode, keyed by stable names."""

    def __init__(self, vocab_size, mode, word_dim=WORD_DIM, enc_hidden=ENC_HIDDEN, seed=13):
        if mode not in MODES:
            raise ModelError(f"unknown mode {mode!r}, expected one of {MODES}")
        if vocab_size < len(text.SPECIAL_TOKENS):
            raise ModelError(f"vocab_size {vocab_size} smaller than the special-token set")
        self.mode = mode
        self.vocab_size = vocab_size
        self.word_dim = word_dim
        self.enc_hidden = enc_hidden
        self.state_size = 2 * enc_hidden
        self.n_contexts = 1 if mode == "seq2seq" else 2
        self.tensors = {}

        rng = np.random.default_rng(seed)

        def add(name, rows, cols):
            data = rng.uniform(-0.1, 0.1, size=(rows, cols))
            self.tensors[name] = parameter(data, name=name)

        e, h, s = word_dim, enc_hidden, self.state_size
        add("word_emb", vocab_size, e)
        add("char_emb", text.CHAR_INVENTORY_SIZE, e)
        add("type_emb", 3, e)
        for direction in ("enc_fw", "enc_bw"):
            for gate in _GATES:
                add(f"{direction}_W{gate}", e + h, h)
                add(f"{direction}_b{gate}", 1, h)
        dec_in = e + self.n_contexts * s
        for gate in _GATES:
            add(f"dec_W{gate}", dec_in + s, s)
            add(f"dec_b{gate}", 1, s)
        add("attn_W", s, s)
        add("copy_W", s, s)
        if mode == "pair2seq":
            add("interact_W", s, s)
            add("interact_Wp", 2 * s, s)
            add("interact_bp", 1, s)
            add("interact_Wq", 2 * s, s)
            add("interact_bq", 1, s)
        feat = (1 + self.n_contexts) * s
        add("out_W", feat, vocab_size)
        add("out_b", 1, vocab_size)
        add("gate_W", feat, 1)
        add("gate_b", 1, 1)
        add("init_W", s, s)
        add("init_b", 1, s)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def parameters(self):
        return list(self.tensors.values())

    def config(self):
        return {
            "mode": self.mode,
            "vocab_size": self.vocab_size,
            "word_dim": self.word_dim,
            "enc_hidden": self.enc_hidden,
        }

    def copy_arrays(self):
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def set_arrays(self, arrays):
        for name, t in self.tensors.items():
            if name not in arrays:
                raise ModelError(f"missing parameter {name!r}")
            if arrays[name].shape != t.data.shape:
                raise ModelError(f"parameter {name!r}: shape {arrays[name].shape} "
                                 f"does not match {t.data.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)

    def save(self, path, extra=None):
        save_checkpoint(path, self.tensors)
        sidecar = {
            "format_version": CHECKPOINT_VERSION,
            "model": self.config(),
            "extra": extra or {},
        }
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @staticmethod
    def load(path):
        """Rebuild (params, sidecar dict) from a checkpoint plus its sidecar."""
        try:
            with open(str(path) + ".json", encoding="utf-8") as fh:
                sidecar = json.load(fh)
        except FileNotFoundError:
            raise ModelError(f"{path}.json: checkpoint sidecar not found") from None
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}.json: invalid sidecar ({exc})") from None
        cfg = sidecar.get("model", {})
        params = ModelParams(cfg.get("vocab_size", 0), cfg.get("mode", ""),
                             word_dim=cfg.get("word_dim", WORD_DIM),
                             enc_hidden=cfg.get("enc_hidden", ENC_HIDDEN), seed=0)
        arrays = load_checkpoint(path)
        params.set_arrays(arrays)
        if set(arrays) != set(params.tensors):
            extra = sorted(set(arrays) - set(params.tensors))
            raise ModelError(f"{path}: unexpected parameters {extra}")
        return params, sidecar


def load_pretrained_vectors(path, vocab, params):
    """Overwrite word-embedding rows from a text file of token + numbers.

    Lines whose token is out of vocabulary or whose dimension differs from
    the embedding width are ignored. Returns the number of rows replaced.
    """
    dim = params.word_dim
    table = params["word_emb"].data
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                continue
            token = parts[0]
            if token not in vocab:
                continue
            try:
                table[vocab.id(token)] = [float(x) for x in parts[1:]]
            except ValueError:
                continue
            matched += 1
    return matched


# ---------------------------------------------------------------------------
# forward pieces


def _lstm_step(tape, params, prefix, x, h_prev, c_prev):
    z = tape.concat_cols([x, h_prev])
    gi = tape.sigmoid(tape.add(tape.matmul(z, params[f"{prefix}_Wi"]), params[f"{prefix}_bi"]))
    gf = tape.sigmoid(tape.add(tape.matmul(z, params[f"{prefix}_Wf"]), params[f"{prefix}_bf"]))
    go = tape.sigmoid(tape.add(tape.matmul(z, params[f"{prefix}_Wo"]), params[f"{prefix}_bo"]))
    gc = tape.tanh(tape.add(tape.matmul(z, params[f"{prefix}_Wc"]), params[f"{prefix}_bc"]))
    c = tape.add(tape.mul(gf, c_prev), tape.mul(gi, gc))
    h = tape.mul(go, tape.tanh(c))
    return h, c


def _run_bilstm(tape, params, emb):
    """Per-position [forward; backward] states plus each direction's final state."""
    n = emb.shape[0]
    h0 = Tensor(np.zeros((1, params.enc_hidden)))
    rows = [tape.slice_rows(emb, i, i + 1) for i in range(n)]

    h, c = h0, h0
    fw = []
    for x in rows:
        h, c = _lstm_step(tape, params, "enc_fw", x, h, c)
        fw.append(h)
    final_fw = fw[-1]

    h, c = h0, h0
    bw = []
    for x in reversed(rows):
        h, c = _lstm_step(tape, params, "enc_bw", x, h, c)
        bw.append(h)
    final_bw = bw[-1]
    bw.reverse()

    states = tape.concat_cols([tape.stack_rows(fw), tape.stack_rows(bw)])
    return states, final_fw, final_bw


def embed_inputs(tape, params, token_ids, char_id_lists, type_ids):
    """Sum of word, pooled-character, and token-type embeddings, one row per token."""
    n = len(token_ids)
    if not (n == len(char_id_lists) == len(type_ids)):
        raise ModelError("embed_inputs: id sequences must have equal lengths")
    if any(t not in (text.TYPE_ANSWER, text.TYPE_PARAGRAPH, text.TYPE_QUESTION) for t in type_ids):
        raise ModelError("embed_inputs: invalid token type id")
    word = tape.embedding(params["word_emb"], token_ids)
    types = tape.embedding(params["type_emb"], type_ids)
    zero_row = Tensor(np.zeros((1, params.word_dim)))
    pooled = []
    for chars in char_id_lists:
        if chars:
            pooled.append(tape.max_pool_rows(tape.embedding(params["char_emb"], chars)))
        else:
            pooled.append(zero_row)
    return tape.add(tape.add(word, tape.stack_rows(pooled)), types)


@dataclass
class EncodedInput:
    """Encoder-side states plus the copy-candidate bookkeeping.

    attn_states: one state matrix for seq2seq (the packed sequence), two for
    pair2seq (paragraph first, question second). copy_states rows align with
    copy_tokens, the surface forms a decoder step may copy.
    """
    mode: str
    attn_states: list
    copy_states: Tensor
    copy_tokens: list
    final_fw: Tensor
    final_bw: Tensor
    cache: dict = field(default_factory=dict)


def _paragraph_fields(vocab, paragraph_tokens, answer_start, answer_end):
    ids = vocab.encode(paragraph_tokens)
    chars = [text.char_ids(t) for t in paragraph_tokens]
    types = [text.TYPE_ANSWER if answer_start <= i < answer_end else text.TYPE_PARAGRAPH
             for i in range(len(paragraph_tokens))]
    return ids, chars, types


def encode_input(tape, params, vocab, paragraph_tokens, answer_start, answer_end,
                 question_tokens, drops=None):
    """Run the mode's encoder over one example.

    seq2seq packs [paragraph, <sep>, question] into a single sequence whose
    separator is typed as paragraph; pair2seq encodes the two sequences with
    the shared cell weights and applies the interaction layer.
    """
    if not paragraph_tokens or not question_tokens:
        raise ModelError("encode_input: empty paragraph or question")
    if not 0 <= answer_start < answer_end <= len(paragraph_tokens):
        raise ModelError(f"encode_input: answer span [{answer_start}, {answer_end}) "
                         f"invalid for {len(paragraph_tokens)} paragraph tokens")
    p_ids, p_chars, p_types = _paragraph_fields(vocab, paragraph_tokens, answer_start, answer_end)
    q_ids = vocab.encode(question_tokens)
    q_chars = [text.char_ids(t) for t in question_tokens]
    q_types = [text.TYPE_QUESTION] * len(question_tokens)

    if params.mode == "seq2seq":
        ids = p_ids + [text.SEP_ID] + q_ids
        chars = p_chars + [[]] + q_chars
        types = p_types + [text.TYPE_PARAGRAPH] + q_types
        emb = _maybe_drop(tape, embed_inputs(tape, params, ids, chars, types), drops)
        states, final_fw, final_bw = _run_bilstm(tape, params, emb)
        states = _maybe_drop(tape, states, drops)
        # copy candidates cover the real source tokens, not the separator
        np_ = len(paragraph_tokens)
        copy_states = tape.stack_rows([
            tape.slice_rows(states, 0, np_),
            tape.slice_rows(states, np_ + 1, states.shape[0]),
        ])
        return EncodedInput("seq2seq", [states], copy_states,
                            list(paragraph_tokens) + list(question_tokens),
                            final_fw, final_bw)

    emb_p = _maybe_drop(tape, embed_inputs(tape, params, p_ids, p_chars, p_types), drops)
    emb_q = _maybe_drop(tape, embed_inputs(tape, params, q_ids, q_chars, q_types), drops)
    raw_p, _, _ = _run_bilstm(tape, params, emb_p)
    raw_q, final_fw, final_bw = _run_bilstm(tape, params, emb_q)
    raw_p = _maybe_drop(tape, raw_p, drops)
    raw_q = _maybe_drop(tape, raw_q, drops)
    states_p, states_q = interact(tape, params, raw_p, raw_q)
    copy_states = tape.stack_rows([states_q, states_p])
    return EncodedInput("pair2seq", [states_p, states_q], copy_states,
                        list(question_tokens) + list(paragraph_tokens),
                        final_fw, final_bw)


def interact(tape, params, states_p, states_q):
    """Cross-attention fusion of paragraph and question encoder states.

    Scores use a bilinear form with its own weights; rows of the score
    matrix normalize over question positions (paragraph side), columns over
    paragraph positions (question side).
    """
    scores_pq = tape.matmul(tape.matmul(states_p, params["interact_W"]), states_q,
                            transpose_b=True)
    alpha = tape.row_softmax(scores_pq)
    attended_p = tape.matmul(alpha, states_q)
    fused_p = tape.tanh(tape.add(
        tape.matmul(tape.concat_cols([states_p, attended_p]), params["interact_Wp"]),
        params["interact_bp"]))

    scores_qp = tape.matmul(tape.matmul(states_q, params["interact_W"], transpose_b=True),
                            states_p, transpose_b=True)
    beta = tape.row_softmax(scores_qp)
    attended_q = tape.matmul(beta, states_p)
    fused_q = tape.tanh(tape.add(
        tape.matmul(tape.concat_cols([states_q, attended_q]), params["interact_Wq"]),
        params["interact_bq"]))
    return fused_p, fused_q


@dataclass
class DecoderState:
    hidden: Tensor
    cell: Tensor
    contexts: list


@dataclass
class DecoderStepOutput:
    state: DecoderState
    gate: Tensor  # [1,1], in (0,1)
    p_vocab: Tensor  # [1,|V|], sums to 1
    copy_attn: Tensor  # [1,Lc], sums to 1


def init_decoder(tape, params, enc):
    """Initial decoder state from the (question) encoder's final states."""
    s0 = tape.tanh(tape.add(
        tape.matmul(tape.concat_cols([enc.final_fw, enc.final_bw]), params["init_W"]),
        params["init_b"]))
    cell0 = Tensor(np.zeros((1, params.state_size)))
    contexts = [Tensor(np.zeros((1, params.state_size))) for _ in range(params.n_contexts)]
    return DecoderState(s0, cell0, contexts)


def _cached_keys(tape, enc, name, states, weight):
    if name not in enc.cache:
        enc.cache[name] = tape.matmul(states, weight)
    return enc.cache[name]


def decode_step(tape, params, enc, state, prev_token_id, drops=None):
    """One decoder step conditioned on the previously produced token.

    The recurrent input is [word embedding of prev token; previous
    context(s)]; attention and copy scores are bilinear in the new hidden
    state. Dropout, when active, touches only the output-projection copy of
    the hidden state, never the recurrent carry.
    """
    y = tape.embedding(params["word_emb"], [prev_token_id])
    x = tape.concat_cols([y] + state.contexts)
    hidden, cell = _lstm_step(tape, params, "dec", x, state.hidden, state.cell)
    out_hidden = _maybe_drop(tape, hidden, drops)

    contexts = []
    for k, states in enumerate(enc.attn_states):
        keys = _cached_keys(tape, enc, f"attn_keys_{k}", states, params["attn_W"])
        gamma = tape.row_softmax(tape.matmul(hidden, keys, transpose_b=True))
        contexts.append(tape.matmul(gamma, states))

    features = tape.concat_cols([out_hidden] + contexts)
    p_vocab = tape.row_softmax(tape.add(tape.matmul(features, params["out_W"]),
                                        params["out_b"]))
    gate = tape.sigmoid(tape.add(tape.matmul(features, params["gate_W"]),
                                 params["gate_b"]))
    copy_keys = _cached_keys(tape, enc, "copy_keys", enc.copy_states, params["copy_W"])
    copy_attn = tape.row_softmax(tape.matmul(hidden, copy_keys, transpose_b=True))
    return DecoderStepOutput(DecoderState(hidden, cell, contexts), gate, p_vocab, copy_attn)


def extended_vocab(enc, vocab):
    """(extra surface forms, per-copy-position target index) for one input.

    Copy positions holding in-vocabulary tokens point at the vocabulary id;
    out-of-vocabulary surfaces get ids |V|, |V|+1, ... in first-occurrence
    order.
    """
    if "extvocab" not in enc.cache:
        extra = []
        index = {}
        targets = []
        for tok in enc.copy_tokens:
            if tok in vocab:
                targets.append(vocab.id(tok))
            else:
                if tok not in index:
                    index[tok] = len(vocab) + len(extra)
                    extra.append(tok)
                targets.append(index[tok])
        enc.cache["extvocab"] = (extra, targets)
    return enc.cache["extvocab"]


def final_distribution(step, enc, vocab):
    """Mixture distribution over the vocabulary plus this input's extra tokens.

    P(w) = g * P_v(w) + (1-g) * sum of copy attention over w's source
    occurrences; in-vocabulary copies merge into their vocabulary entry.
    Returns (probabilities, extra surface forms). Detached numpy; inference
    only.
    """
    extra, targets = extended_vocab(enc, vocab)
    g = float(step.gate.data[0, 0])
    dist = np.zeros(len(vocab) + len(extra))
    dist[:len(vocab)] = g * step.p_vocab.data[0]
    np.add.at(dist, targets, (1.0 - g) * step.copy_attn.data[0])
    return dist, extra
