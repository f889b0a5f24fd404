"""Train the pair-to-sequence generator until it memorizes a toy corpus.

Eight aligned pairs are far inside the model's capacity, so a few hundred
epochs of teacher-forced NLL drive the per-token loss toward zero and greedy
decoding reproduces every gold unanswerable question exactly.
"""

import math

from unansqgen.data import AlignedPair
from unansqgen.decode import beam_search, greedy_decode
from unansqgen.model import encode_input
from unansqgen.tensor import Tape
from unansqgen.text import Vocab
from unansqgen.train import TrainConfig, train

WORDS = ["ash", "birch", "cedar", "dune", "elm", "fern", "gorse", "hazel",
         "iris", "juniper"]
vocab = Vocab(sorted(WORDS))

pairs = []
for k in range(8):
    w = lambda i: WORDS[(k + i) % len(WORDS)]
    pairs.append(AlignedPair(
        title="toy", paragraph_tokens=[w(0), w(1), w(2), w(3)],
        answer_start=1, answer_end=3,
        answerable_tokens=[w(4), w(1), w(5)],
        unanswerable_tokens=[w(5), w(2), w(0)],
        answerable_id=f"a{k}", unanswerable_id=f"u{k}"))

config = TrainConfig(mode="pair2seq", epochs=200, batch_size=8, dropout=0.0,
                     learning_rate=0.3, word_dim=16, enc_hidden=8, seed=13)


def log(line):
    epoch = int(line.split()[1])
    if epoch % 50 == 0 or epoch == 1:
        print(line)


params, history = train(config, pairs, pairs, vocab, log=log)
best_ppl = min(h["holdout_ppl"] for h in history)
print(f"best per-token NLL {math.log(best_ppl):.4f}")

exact = 0
for pair in pairs:
    tape = Tape()
    enc = encode_input(tape, params, vocab, pair.paragraph_tokens,
                       pair.answer_start, pair.answer_end, pair.answerable_tokens)
    decoded = greedy_decode(tape, params, enc, vocab)
    mark = "==" if decoded == pair.unanswerable_tokens else "!="
    exact += decoded == pair.unanswerable_tokens
    print(f"  {' '.join(pair.answerable_tokens):24s} -> {' '.join(decoded):24s} "
          f"{mark} gold")
print(f"greedy reproduces {exact}/8 targets")

tape = Tape()
enc = encode_input(tape, params, vocab, pairs[0].paragraph_tokens,
                   pairs[0].answer_start, pairs[0].answer_end,
                   pairs[0].answerable_tokens)
print("beam-5 alternatives for the first input:")
for h in beam_search(tape, params, enc, vocab, beam_size=5, max_len=6)[:3]:
    print(f"  {h.score:8.4f}  {' '.join(h.surface())}")
