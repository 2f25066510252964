"""Corpus-level generation metrics: BLEU-4, ROUGE-L, perplexity.

Tokenization for the text metrics is lowercased whitespace splitting,
applied identically to hypotheses and references.  METEOR is deliberately
not computed (it needs external synonym resources); EvalResult carries an
explicit note instead of a silent omission.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigMismatch, InvalidId, LengthMismatch

ROUGE_BETA = 1.2
BLEU_EPSILON = 1e-9


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_lengths(hypotheses, reference_sets) -> None:
    if len(hypotheses) != len(reference_sets):
        raise LengthMismatch(
            f"{len(hypotheses)} hypotheses vs {len(reference_sets)} reference sets"
        )
    for i, refs in enumerate(reference_sets):
        if not refs:
            raise LengthMismatch(f"item {i} has no references")


def bleu4(hypotheses: Sequence[str], reference_sets: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU with 4-gram clipped precisions and brevity penalty.

    Reference length uses the closest-length convention (ties to the
    shorter).  Zero precisions are replaced by a 1e-9 epsilon rather than
    zeroing the whole score.
    """
    _check_lengths(hypotheses, reference_sets)
    matched = [0] * 4
    total = [0] * 4
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        h = _tokens(hyp)
        rs = [_tokens(r) for r in refs]
        hyp_len += len(h)
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for n in range(1, 5):
            hc = _ngrams(h, n)
            if not hc:
                continue
            cap: Counter = Counter()
            for r in rs:
                rc = _ngrams(r, n)
                for g, c in rc.items():
                    if c > cap[g]:
                        cap[g] = c
            total[n - 1] += sum(hc.values())
            matched[n - 1] += sum(min(c, cap[g]) for g, c in hc.items())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(4):
        p = matched[n] / total[n] if total[n] > 0 and matched[n] > 0 else BLEU_EPSILON
        log_p += math.log(p)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / 4.0)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hypotheses: Sequence[str], reference_sets: Sequence[Sequence[str]]) -> float:
    """Mean over items of the best-reference LCS F-measure (beta = 1.2), x100."""
    _check_lengths(hypotheses, reference_sets)
    b2 = ROUGE_BETA * ROUGE_BETA
    scores = []
    for hyp, refs in zip(hypotheses, reference_sets):
        h = _tokens(hyp)
        best = 0.0
        for ref in refs:
            r = _tokens(ref)
            lcs = _lcs_len(h, r)
            if lcs == 0 or not h or not r:
                continue
            p = lcs / len(h)
            rec = lcs / len(r)
            f = (1 + b2) * p * rec / (rec + b2 * p)
            if f > best:
                best = f
        scores.append(best)
    return 100.0 * sum(scores) / len(scores)


def perplexity(checkpoint, pairs, batch_size: int = 32) -> float:
    """exp(total NLL / total scored tokens) under the model's full distribution.

    `checkpoint` needs .params/.vocab/.config (training.Checkpoint fits);
    `pairs` is a sequence of GroundedPair.
    """
    from .decoder import batch_nll  # deferred: metrics must not import models eagerly

    if not pairs:
        raise ConfigMismatch("perplexity needs at least one pair")
    total, count = 0.0, 0
    model_cfg = checkpoint.config.model
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        nll, n = batch_nll(
            [p.record for p in chunk],
            [p.text for p in chunk],
            checkpoint.vocab,
            checkpoint.params,
            model_cfg,
        )
        total += nll
        count += n
    return math.exp(total / count)


METEOR_NOTE = "METEOR not computed: depends on external synonym resources"


@dataclass(frozen=True)
class EvalResult:
    bleu4: float
    rouge_l: float
    perplexity: float | None
    n_items: int
    meteor: None = None
    note: str = METEOR_NOTE

    def __post_init__(self):
        if not (0.0 <= self.bleu4 <= 100.0 and 0.0 <= self.rouge_l <= 100.0):
            raise LengthMismatch("metric scores out of [0, 100]")
        if self.perplexity is not None and self.perplexity <= 0:
            raise LengthMismatch("perplexity must be positive")

    def to_obj(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "perplexity": self.perplexity,
            "n_items": self.n_items,
            "meteor": None,
            "note": self.note,
        }


def evaluate_texts(
    hypotheses: Sequence[str],
    reference_sets: Sequence[Sequence[str]],
    ppl: float | None = None,
) -> EvalResult:
    return EvalResult(
        bleu4(hypotheses, reference_sets),
        rouge_l(hypotheses, reference_sets),
        ppl,
        len(hypotheses),
    )


# -- file plumbing ---------------------------------------------------------


def load_hypotheses(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if not line.strip():
                continue
            obj = json.loads(line)
            out[obj["id"]] = obj["hypothesis"]
    return out


def load_references(path) -> dict[str, list[str]]:
    """References keyed by id; accepts {"text": ...} lines (accumulated) or
    {"references": [...]} lines."""
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            if not line.strip():
                continue
            obj = json.loads(line)
            bucket = out.setdefault(obj["id"], [])
            if "references" in obj:
                bucket.extend(obj["references"])
            else:
                bucket.append(obj["text"])
    return out


def evaluate_files(hyp_path, ref_path) -> EvalResult:
    hyps = load_hypotheses(hyp_path)
    refs = load_references(ref_path)
    missing = set(hyps) - set(refs)
    if missing:
        raise InvalidId(f"no references for ids: {sorted(missing)[:5]}")
    ids = sorted(hyps)
    if not ids:
        raise LengthMismatch("no hypotheses to evaluate")
    return evaluate_texts([hyps[i] for i in ids], [refs[i] for i in ids])
