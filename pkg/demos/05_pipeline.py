"""The whole pipeline, end to end, on a synthetic corpus.

align -> train -> generate -> evaluate -> augment, all through the same
command-line entry points a real run would use, inside a temp directory.
The corpus is synthetic so the demo runs in seconds; point --squad at the
real SQuAD 2.0 files for the full-scale version.
"""

import json
import pathlib
import random
import tempfile

from unansqgen.cli import main

WORDS = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
         "hotel", "india", "juliet", "kilo", "lima"]


def synthetic_corpus(n_articles, seed):
    rng = random.Random(seed)
    data, qid = [], 0
    for a in range(n_articles):
        paragraphs = []
        for _ in range(2):
            tokens = [rng.choice(WORDS) for _ in range(rng.randint(8, 14))]
            t = rng.randrange(len(tokens))
            span = {"text": tokens[t],
                    "answer_start": len(" ".join(tokens[:t])) + (1 if t else 0)}
            body = [rng.choice(WORDS) for _ in range(3)]
            swapped = body[:]
            swapped[rng.randrange(3)] = rng.choice(WORDS)
            paragraphs.append({"context": " ".join(tokens), "qas": [
                {"id": f"q{qid}", "question": f"what is {' '.join(body)} ?",
                 "is_impossible": False, "answers": [span]},
                {"id": f"q{qid + 1}", "question": f"what is {' '.join(swapped)} never ?",
                 "is_impossible": True, "answers": [], "plausible_answers": [span]},
            ]})
            qid += 2
        data.append({"title": f"article_{a}", "paragraphs": paragraphs})
    return {"version": "v2.0", "data": data}


root = pathlib.Path(tempfile.mkdtemp(prefix="unansqgen_demo_"))
squad = root / "train.json"
squad.write_text(json.dumps(synthetic_corpus(6, seed=3)), encoding="utf-8")
print(f"working under {root}\n")

steps = [
    ("align", ["align", "--squad", str(squad),
               "--out-pairs", str(root / "train.pairs"),
               "--out-holdout", str(root / "holdout.pairs"),
               "--out-vocab", str(root / "vocab.txt"),
               "--min-count", "1", "--holdout-fraction", "0.2"]),
    ("train", ["train", "--pairs", str(root / "train.pairs"),
               "--holdout", str(root / "holdout.pairs"),
               "--vocab", str(root / "vocab.txt"),
               "--out", str(root / "model.ckpt"),
               "--epochs", "3", "--batch-size", "4", "--dropout", "0.0",
               "--dims-override", "8/4"]),
    ("generate", ["generate", "--checkpoint", str(root / "model.ckpt"),
                  "--vocab", str(root / "vocab.txt"),
                  "--input", str(root / "train.pairs"),
                  "--out", str(root / "generations.tsv"),
                  "--beam", "3", "--nbest", "1", "--max-len", "8"]),
    ("evaluate", ["evaluate", "--generations", str(root / "generations.tsv"),
                  "--pairs", str(root / "train.pairs")]),
    ("augment", ["augment",
                 "--generations", str(root / "gen_from_squad.tsv"),
                 "--squad", str(squad),
                 "--out", str(root / "augmented.json")]),
]

# augment consumes generations keyed by SQuAD question ids, so produce those
steps.insert(4, ("generate (squad ids)", [
    "generate", "--checkpoint", str(root / "model.ckpt"),
    "--vocab", str(root / "vocab.txt"), "--input", str(squad),
    "--out", str(root / "gen_from_squad.tsv"),
    "--beam", "3", "--nbest", "1", "--max-len", "8"]))

for name, argv in steps:
    print(f"== {name} ==")
    rc = main(argv)
    assert rc == 0, f"{name} exited {rc}"
    print()

augmented = json.loads((root / "augmented.json").read_text(encoding="utf-8"))
n_generated = sum(len(p["qas"]) for a in augmented["data"] for p in a["paragraphs"])
print(f"augmentation file holds {n_generated} unanswerable records; "
      f"merge it with the original training file to enlarge the dataset")
