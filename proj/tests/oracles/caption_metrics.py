"""Reference values for the caption-metric tests.

BLEU comes from nltk, ROUGE-L and CIDEr-D from pycocoevalcap. Fixture text is
already lowercase and space separated, so every tool sees the same tokens.

    python3 tests/oracles/caption_metrics.py > tests/fixtures/captions20_expected.json
"""
import json
import pathlib
import sys

from nltk.translate.bleu_score import corpus_bleu, sentence_bleu
from pycocoevalcap.cider.cider import Cider
from pycocoevalcap.rouge.rouge import Rouge

here = pathlib.Path(__file__).resolve().parent
records = [json.loads(l) for l in (here.parent / "fixtures" / "captions20.jsonl").read_text().splitlines() if l.strip()]

cands = [r["candidate"].split() for r in records]
refs = [[x.split() for x in r["references"]] for r in records]

sentence = [sentence_bleu(rs, c) for c, rs in zip(cands, refs)]
gts = {r["image_id"]: r["references"] for r in records}
res = {r["image_id"]: [r["candidate"]] for r in records}
rouge_mean, rouge_each = Rouge().compute_score(gts, res)
cider_mean, cider_each = Cider().compute_score(gts, res)

pair = ("the cat sat on the mat quietly", ["the cat sat on the mat today"])
json.dump(
    {
        "bleu4_corpus": corpus_bleu(refs, cands),
        "bleu4_sentence": sentence,
        "rouge_l": [float(x) for x in rouge_each],
        "rouge_l_mean": float(rouge_mean),
        "cider": [float(x) for x in cider_each],
        "cider_mean": float(cider_mean),
        "cat_sentence_bleu4": sentence_bleu([pair[1][0].split()], pair[0].split()),
        "cat_rouge_l": float(Rouge().calc_score([pair[0]], pair[1])),
    },
    sys.stdout,
    indent=2,
)
print()
