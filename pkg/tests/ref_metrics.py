"""Reference text-metric implementations, scripted separately from the
package ones so scores can be cross-checked between two codebases.

Same conventions: lowercased whitespace tokens, corpus-pooled BLEU with
an epsilon for zero precisions and closest-length brevity reference
(ties to the shorter), per-item best-reference ROUGE-L F with beta 1.2.
Different mechanics on purpose: plain-dict n-gram counts, a full 2-D
LCS table, and a geometric mean taken as a fourth root of a product.
"""

import math

EPS = 1e-9
BETA = 1.2


def _toks(s):
    return s.lower().split()


def _count_ngrams(toks, n):
    out = {}
    for i in range(len(toks) - n + 1):
        g = tuple(toks[i : i + n])
        out[g] = out.get(g, 0) + 1
    return out


def ref_bleu(hyps, ref_sets):
    hits = {1: 0, 2: 0, 3: 0, 4: 0}
    totals = {1: 0, 2: 0, 3: 0, 4: 0}
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hyps, ref_sets):
        h = _toks(hyp)
        tok_refs = [_toks(r) for r in refs]
        hyp_len += len(h)
        best = None
        for r in tok_refs:
            key = (abs(len(r) - len(h)), len(r))
            if best is None or key < best:
                best = key
        ref_len += best[1]
        for n in (1, 2, 3, 4):
            hc = _count_ngrams(h, n)
            totals[n] += sum(hc.values())
            for g, c in hc.items():
                cap = 0
                for r in tok_refs:
                    cr = _count_ngrams(r, n).get(g, 0)
                    if cr > cap:
                        cap = cr
                hits[n] += min(c, cap)
    if hyp_len == 0:
        return 0.0
    prod = 1.0
    for n in (1, 2, 3, 4):
        p = hits[n] / totals[n] if hits[n] > 0 else EPS
        prod *= p
    if hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * prod ** 0.25


def _lcs_table(a, b):
    rows = len(a) + 1
    cols = len(b) + 1
    t = [[0] * cols for _ in range(rows)]
    for i in range(1, rows):
        for j in range(1, cols):
            if a[i - 1] == b[j - 1]:
                t[i][j] = t[i - 1][j - 1] + 1
            else:
                t[i][j] = max(t[i - 1][j], t[i][j - 1])
    return t[-1][-1]


def ref_rouge(hyps, ref_sets):
    total = 0.0
    for hyp, refs in zip(hyps, ref_sets):
        h = _toks(hyp)
        best = 0.0
        for ref in refs:
            r = _toks(ref)
            lcs = _lcs_table(h, r)
            if lcs == 0:
                continue
            prec = lcs / len(h)
            rec = lcs / len(r)
            f = (1 + BETA * BETA) * prec * rec / (rec + BETA * BETA * prec)
            best = max(best, f)
        total += best
    return 100.0 * total / len(hyps)
