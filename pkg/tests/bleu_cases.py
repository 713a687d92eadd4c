"""Corpus BLEU cases with n-gram counts worked out by hand.

Each case: hypotheses, references, clipped matches per order, hypothesis
n-gram totals per order, hyp_len, ref_len and the hand-derived precisions
(``E`` stands for the 1e-9 floor). The expected score is
``100 * BP * exp(mean(log p))`` evaluated on those hand values.
"""

import math

E = 1e-9

CASES = [
    # (name, hyps, refs, matches, totals, hyp_len, ref_len, precisions)
    ("identical", ["the cat sat"], ["the cat sat"], (3, 2, 1, 0), (3, 2, 1, 0), 3, 3, (1, 1, 1, 1)),
    ("clipped the-the-the", ["the the the"], ["the cat"], (1, 0, 0, 0), (3, 2, 1, 0), 3, 2, (1 / 3, E, E, E)),
    ("identical with punctuation", ["Hello, world!"], ["Hello, world!"], (4, 3, 2, 1), (4, 3, 2, 1), 4, 4, (1, 1, 1, 1)),
    ("short hypothesis", ["a b c d"], ["a b c d e"], (4, 3, 2, 1), (4, 3, 2, 1), 4, 5, (1, 1, 1, 1)),
    ("long hypothesis", ["a b c d e f"], ["a b c d"], (4, 3, 2, 1), (6, 5, 4, 3), 6, 4, (4 / 6, 3 / 5, 2 / 4, 1 / 3)),
    ("disjoint", ["x y z w"], ["a b c d"], (0, 0, 0, 0), (4, 3, 2, 1), 4, 4, (E, E, E, E)),
    ("empty hypothesis", [""], ["a b"], (0, 0, 0, 0), (0, 0, 0, 0), 0, 2, (E, E, E, E)),
    ("two sentences", ["a b", "c d e f"], ["a b", "c d e g"], (5, 3, 1, 0), (6, 4, 2, 1), 6, 6, (5 / 6, 3 / 4, 1 / 2, E)),
    ("case sensitive", ["The cat"], ["the cat"], (1, 0, 0, 0), (2, 1, 0, 0), 2, 2, (1 / 2, E, E, E)),
    ("peeled brackets", ["(hi)"], ["hi"], (1, 0, 0, 0), (3, 2, 1, 0), 3, 1, (1 / 3, E, E, E)),
    ("inner apostrophe kept", ["don't stop"], ["don't stop"], (2, 1, 0, 0), (2, 1, 0, 0), 2, 2, (1, 1, 1, 1)),
    ("single token", ["ok"], ["ok"], (1, 0, 0, 0), (1, 0, 0, 0), 1, 1, (1, 1, 1, 1)),
    ("single token miss", ["ok"], ["no"], (0, 0, 0, 0), (1, 0, 0, 0), 1, 1, (E, E, E, E)),
    ("bigram clipping", ["a a a a"], ["a a"], (2, 1, 0, 0), (4, 3, 2, 1), 4, 2, (1 / 2, 1 / 3, E, E)),
    ("half length", ["a b"], ["a b c d"], (2, 1, 0, 0), (2, 1, 0, 0), 2, 4, (1, 1, 1, 1)),
    ("mixed corpus", ["a", "b c"], ["a", "b d"], (2, 0, 0, 0), (3, 1, 0, 0), 3, 3, (2 / 3, E, E, E)),
    ("inverted punctuation", ["¿Qué?"], ["¿Qué?"], (3, 2, 1, 0), (3, 2, 1, 0), 3, 3, (1, 1, 1, 1)),
    ("currency symbol", ["$5"], ["5"], (1, 0, 0, 0), (2, 1, 0, 0), 2, 1, (1 / 2, E, E, E)),
    ("two sentences permuted", ["c d e f", "a b"], ["c d e g", "a b"], (5, 3, 1, 0), (6, 4, 2, 1), 6, 6, (5 / 6, 3 / 4, 1 / 2, E)),
    (
        "cat on the mat",
        ["the cat is on the mat"],
        ["the cat sat on the mat"],
        (5, 3, 1, 0),
        (6, 5, 4, 3),
        6,
        6,
        (5 / 6, 3 / 5, 1 / 4, E),
    ),
]


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    return 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)


def expected_score(case) -> float:
    _, _, _, _, _, hyp_len, ref_len, precisions = case
    bp = brevity_penalty(hyp_len, ref_len)
    if bp == 0:
        return 0.0
    return 100 * bp * math.exp(sum(math.log(p) for p in precisions) / 4)
