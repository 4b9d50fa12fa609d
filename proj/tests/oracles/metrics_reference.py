#!/usr/bin/env python3
"""Reference implementations of corpus-level chrF and BLEU.

These are direct transcriptions of the published metric definitions
(chrF: character n-gram F-score, n = 1..6, beta = 2, whitespace excluded;
BLEU: corpus 4-gram precision with brevity penalty, whitespace tokens,
add-one smoothing on the n > 1 precisions). They are used to freeze the
expected values asserted in test_metrics.cpp and the acceptance suite.
Run:  python3 metrics_reference.py          # prints the frozen table
"""

import math
from collections import Counter

CHRF_ORDER = 6
CHRF_BETA = 2.0
BLEU_ORDER = 4


def char_ngrams(text, n):
    chars = [c for c in text if not c.isspace()]
    return Counter(tuple(chars[i:i + n]) for i in range(len(chars) - n + 1))


def chrf(hyps, refs):
    assert len(hyps) == len(refs)
    totals = [[0, 0, 0] for _ in range(CHRF_ORDER)]  # match, hyp, ref
    for hyp, ref in zip(hyps, refs):
        for n in range(1, CHRF_ORDER + 1):
            hyp_counts = char_ngrams(hyp, n)
            ref_counts = char_ngrams(ref, n)
            match = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            totals[n - 1][0] += match
            totals[n - 1][1] += sum(hyp_counts.values())
            totals[n - 1][2] += sum(ref_counts.values())
    prec_sum = rec_sum = 0.0
    effective = 0
    for match, hyp_total, ref_total in totals:
        if hyp_total + ref_total == 0:
            continue
        effective += 1
        prec_sum += match / hyp_total if hyp_total > 0 else 0.0
        rec_sum += match / ref_total if ref_total > 0 else 0.0
    if effective == 0:
        return 0.0
    prec = prec_sum / effective
    rec = rec_sum / effective
    denom = CHRF_BETA ** 2 * prec + rec
    if denom == 0.0:
        return 0.0
    return 100.0 * (1.0 + CHRF_BETA ** 2) * prec * rec / denom


def word_ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs):
    assert len(hyps) == len(refs)
    match_total = [0] * BLEU_ORDER
    hyp_total = [0] * BLEU_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_tokens = hyp.split()
        ref_tokens = ref.split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, BLEU_ORDER + 1):
            hyp_counts = word_ngrams(hyp_tokens, n)
            ref_counts = word_ngrams(ref_tokens, n)
            match_total[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items())
            hyp_total[n - 1] += sum(hyp_counts.values())
    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, BLEU_ORDER + 1):
        smooth = 1 if n > 1 else 0
        num = match_total[n - 1] + smooth
        den = hyp_total[n - 1] + smooth
        if num == 0 or den == 0:
            return 0.0
        log_prec += math.log(num / den)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec / BLEU_ORDER)


# Fixture pairs frozen into the C++ tests. Twenty (hypothesis, reference)
# pairs spanning identity, near-miss, partial overlap, repetition,
# disjoint strings, and length mismatches.
FIXTURE = [
    ("abcd", "abce"),
    ("uCyril Ramaphosa yinkokheli yoMzantsi Afrika.",
     "uCyril Ramaphosa yinkokheli yoMzantsi Afrika."),
    ("uCyril Ramaphosa inkokheli yoMzantsi Afrika",
     "uCyril Ramaphosa yinkokheli yoMzantsi Afrika."),
    ("Imali yase-Ethiopia yi-Ethiopian Birr.",
     "Imali yase-Ethiopia yiEthiopian Birr."),
    ("ICopenhagen likomkhulu laseDenmark.",
     "IKopenhagen likomkhulu laseDenmark."),
    ("they are reading", "they are reading books"),
    ("they are reading books now", "they are reading books"),
    ("ba a bala", "ba ba bala"),
    ("ndiyabulela kakhulu", "ndiyabulela"),
    ("xyz", "abc"),
    ("", "abc def"),
    ("abahlobo abatsha", "abahlobo abadala"),
    ("the the the the", "the cat sat there"),
    ("umntu ngumntu ngabantu", "umntu ngumntu ngabantu"),
    ("Mark Rutte yinkokheli yaseNetherlands",
     "UMark Rutte yinkokheli yeNetherlands."),
    ("a b c d e f g", "a b c d e f g h i"),
    ("short", "a considerably longer reference sentence here"),
    ("sase Melika", "saseMelika"),
    ("I-St. Vincent-St. Mary school samabanga",
     "I-St. Vincent-St. Mary school samabanga aphakamileyo siseMelika."),
    ("zonke izinto zilungile", "yonke into ilungile"),
]


def main():
    hyps = [h for h, _ in FIXTURE]
    refs = [r for _, r in FIXTURE]
    print("# per-pair (treated as 1-element corpora)")
    for i, (h, r) in enumerate(FIXTURE):
        print(f"pair {i:2d}: chrf={chrf([h], [r]):.6f} bleu={bleu([h], [r]):.6f}")
    print("# whole 20-pair corpus")
    print(f"corpus: chrf={chrf(hyps, refs):.6f} bleu={bleu(hyps, refs):.6f}")


if __name__ == "__main__":
    main()
