"""Corpus BLEU-4 of the fixture through sacrebleu, used as an independent
check of the Rust implementation. Prints the score on stdout."""
import json
import sys

import sacrebleu

with open(sys.argv[1]) as f:
    data = json.load(f)
refs = [list(stream) for stream in zip(*data["references"])]
score = sacrebleu.corpus_bleu(
    data["candidates"], refs, tokenize="none", lowercase=True, smooth_method="none", force=True
)
print(f"{score.score:.6f}")
