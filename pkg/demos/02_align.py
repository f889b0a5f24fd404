"""From raw SQuAD 2.0 JSON to aligned question pairs.

The supervision signal is built, not given: an unanswerable question is
paired with the answerable question whose answer span matches its plausible
answer span, preferring the pair with the smallest token edit distance.
"""

import json
import tempfile

from unansqgen import data, text

context = ("The public schools in Warsaw are run by the city council . "
           "Private schools answer to the national ministry instead .")
pivot = {"text": "the city council",
         "answer_start": context.index("the city council")}

corpus = {"version": "v2.0", "data": [{
    "title": "Warsaw", "paragraphs": [{
        "context": context,
        "qas": [
            {"id": "ans-1", "is_impossible": False,
             "question": "Who runs the public schools in Warsaw?",
             "answers": [pivot]},
            {"id": "ans-2", "is_impossible": False,
             "question": "What body operates public schools?",
             "answers": [pivot]},
            {"id": "una-1", "is_impossible": True, "answers": [],
             "question": "Who runs the private schools in Warsaw?",
             "plausible_answers": [pivot]},
        ]}]}]}

with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
    json.dump(corpus, fh)
    path = fh.name

result = data.parse_squad(path)
print(f"parsed {len(result.records)} paragraph(s), "
      f"dropped {result.dropped_records} malformed record(s)")

tokens = text.tokenize(context)
print(f"tokenized context: {len(tokens)} tokens, first six {tokens[:6]}")

pairs, stats = data.align_pairs(result.records)
print(f"candidate pairs {stats.candidate_pairs}, aligned {len(pairs)}")
for pair in pairs:
    print(f"  answerable {pair.answerable_id!r} <-> unanswerable "
          f"{pair.unanswerable_id!r}, edit distance {pair.distance}")
    print(f"    pivot span tokens {pair.answer_start}..{pair.answer_end}: "
          f"{pair.paragraph_tokens[pair.answer_start:pair.answer_end]}")

# both answerable questions share the pivot; the winner is the closer one
d1 = data.levenshtein(text.tokenize("Who runs the public schools in Warsaw?"),
                      text.tokenize("Who runs the private schools in Warsaw?"))
d2 = data.levenshtein(text.tokenize("What body operates public schools?"),
                      text.tokenize("Who runs the private schools in Warsaw?"))
print(f"edit distances of the two candidates: {d1} vs {d2}; "
      f"alignment kept the {min(d1, d2)}-distance question")
