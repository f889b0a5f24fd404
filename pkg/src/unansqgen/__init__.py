"""Unanswerable question generation for reading comprehension.

A desk-scale pipeline: align answerable/unanswerable question pairs from
SQuAD 2.0 via shared answer-span pivots, train sequence-to-sequence or
pair-to-sequence encoder-decoder models with attention and a copy
mechanism on a tape-based autodiff engine, decode with constrained beam
search, score with BLEU/GLEU/ROUGE, and emit augmentation data in the
SQuAD 2.0 schema.
"""

__version__ = "0.1.0"
