"""What BLEU misses and GLEU catches when the source is a near-copy.

Question rewriting starts from a source question, so a generator can score
well on BLEU by parroting its input. GLEU subtracts credit for n-grams the
hypothesis shares with the source but not the reference, which is exactly
the parroting signature.
"""

from unansqgen.metrics import bleu, format_report, gleu, metric_report, rouge_l

source = "the dog ran to the park today".split()
reference = "the dog ran to the park yesterday".split()
faithful = "the dog ran to a park yesterday".split()

parrot_bleu = bleu([(source, reference)])
parrot_gleu = gleu([(source, source, reference)])
print(f"parrot hypothesis: BLEU-4 {parrot_bleu:.4f} vs GLEU-4 {parrot_gleu:.4f}")

edit_bleu = bleu([(faithful, reference)])
edit_gleu = gleu([(source, faithful, reference)])
print(f"edited hypothesis: BLEU-4 {edit_bleu:.4f} vs GLEU-4 {edit_gleu:.4f}")
print(f"GLEU prefers the edit: {edit_gleu > parrot_gleu}")

recall, precision, f1 = rouge_l("the cat sat".split(), "the cat sat down".split())
print(f"ROUGE-L of a clean prefix: recall {recall:.2f}, "
      f"precision {precision:.2f}, f1 {f1:.4f}")

triples = [
    (source, faithful, reference),
    ("who won the match ?".split(), "who lost the match ?".split(),
     "who lost the final match ?".split()),
]
print("\nfull corpus report (the evaluate command prints this format):")
print(format_report(metric_report(triples)), end="")
