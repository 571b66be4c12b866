import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpipe.metrics import (
    ConfusionMatrix,
    EvalPair,
    confusion_stats,
    date_component_accuracy,
    mismatches,
    sequence_accuracy,
    token_accuracy,
)
from formpipe.tokens import age_dictionary, tokenize_age, tokenize_date


def test_alignment_worked_example():
    # the example's four-digit numeral is longer than the age T, so raw ids are scored
    d = age_dictionary()
    truth = [d.id(n) for n in ["<Start>", "<1>", "<2>", "<7>", "<0>", "<End>"]]
    pred = [d.id(n) for n in ["<Start>", "<1>", "<7>", "<0>", "<End>", "<Pad>"]]
    pair = EvalPair(truth, pred, kind="age")
    assert mismatches(pair) == (4, 5)
    assert token_accuracy([pair]).value == pytest.approx(1 / 5, abs=0)
    assert sequence_accuracy([pair], 0).value == 0
    assert sequence_accuracy([pair], 4).value == 1


def test_identical_sequences():
    pairs = [EvalPair(tokenize_date(s), tokenize_date(s)) for s in ("1/7-2010", "3 May 90")]
    assert token_accuracy(pairs).value == 1
    assert sequence_accuracy(pairs, 0).value == 1
    assert token_accuracy(pairs).se == 0


def test_longer_prediction_extends_denominator():
    t = tokenize_age("1")
    d = age_dictionary()
    p = [d.start_id, d.id("<1>"), d.id("<2>"), d.end_id]
    assert mismatches(EvalPair(t, p)) == (2, 3)


def test_errors():
    with pytest.raises(ValueError):
        token_accuracy([])
    with pytest.raises(ValueError):
        sequence_accuracy([EvalPair(tokenize_age("1"), tokenize_age("1"))], -1)
    with pytest.raises(ValueError):
        EvalPair(tokenize_age("1"), tokenize_date("1/1-2000"))
    with pytest.raises(ValueError):
        EvalPair([0, 1], [0, 1])
    with pytest.raises(ValueError):
        token_accuracy([EvalPair(tokenize_age("1"), tokenize_age("1")), EvalPair(tokenize_date("1/1-2000"), tokenize_date("1/1-2000"))])


def naive(pairs, pad):
    """Per-position loop, written independently of the library."""
    hits = total = 0
    errs = []
    for pr in pairs:
        t = list(pr.truth.ids)
        p = list(pr.pred)
        while t and t[-1] == pad:
            t.pop()
        while p and p[-1] == pad:
            p.pop()
        k = max(len(t), len(p)) - 1
        e = 0
        for j in range(1, k + 1):
            a = t[j] if j < len(t) else None
            b = p[j] if j < len(p) else None
            if a is None or b is None or a != b:
                e += 1
        hits += k - e
        total += k
        errs.append(e)
    return hits / total, errs


def random_pairs(rng, n):
    d = age_dictionary()
    out = []
    for _ in range(n):
        truth = tokenize_age(str(int(rng.integers(0, 100))))
        h = int(rng.integers(1, 5))
        body = [int(rng.integers(0, len(d))) for _ in range(h - 1)]
        out.append(EvalPair(truth, [d.start_id] + body))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_against_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    pairs = random_pairs(rng, int(rng.integers(1, 40)))
    ta, errs = naive(pairs, age_dictionary().pad_id)
    assert token_accuracy(pairs).value == pytest.approx(ta, abs=1e-15)
    sa = [sequence_accuracy(pairs, m).value for m in range(5)]
    for m in range(5):
        assert sa[m] == pytest.approx(np.mean([e <= m for e in errs]))
    assert all(a <= b for a, b in zip(sa, sa[1:]))
    assert sa[3] == 1.0  # T - 1 scored positions at most
    # order invariance
    perm = [pairs[i] for i in rng.permutation(len(pairs))]
    assert token_accuracy(perm).value == token_accuracy(pairs).value
    assert sequence_accuracy(perm, 1).value == sequence_accuracy(pairs, 1).value
    # binomial standard error
    r = sequence_accuracy(pairs, 1)
    assert r.se == pytest.approx(math.sqrt(r.value * (1 - r.value) / len(pairs)))
    t = token_accuracy(pairs)
    assert t.se == pytest.approx(math.sqrt(t.value * (1 - t.value) / t.n))


def test_binary_confusion_bookkeeping():
    cm = ConfusionMatrix(["Treated", "Not Treated"], [[234, 0], [0, 3766]])
    s = confusion_stats(cm, "Treated")
    assert s["precision"] == s["recall"] == s["accuracy"] == 1.0
    assert s["majority_baseline"] == pytest.approx(0.9415, abs=1e-4)


def test_perfect_four_class():
    counts = np.diag([524, 300, 200, 100])
    cm = ConfusionMatrix(["B", "A", "Other", "Empty"], counts)
    s = confusion_stats(cm, "B")
    assert s["precision"] == s["recall"] == 1.0


def test_undefined_flags():
    cm = ConfusionMatrix(["a", "b"], [[0, 0], [3, 5]])
    s = confusion_stats(cm, "a")
    assert s["recall"] is None and s["precision"] == 0.0
    assert s["undefined"] == ["recall"]
    with pytest.raises(ValueError):
        confusion_stats(ConfusionMatrix(["a", "b"], [[0, 0], [0, 0]]), "a")


def test_confusion_from_labels():
    cm = ConfusionMatrix.from_labels(["a", "a", "b"], ["a", "b", "b"])
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])
    assert cm.total == 3


def test_date_components_examples():
    r = date_component_accuracy([("1/10-2000", "01-10-2000")])
    assert (r["day"].value, r["month"].value, r["year"].value) == (1, 1, 1)
    r = date_component_accuracy([("1-10-2000", "1-10-1900")])
    assert (r["day"].value, r["month"].value, r["year"].value) == (1, 1, 0)


def test_date_components_hand_tally():
    pairs = []
    pairs += [("5/6-1901", "05.06.1901")] * 40  # all correct
    pairs += [("5/6-1901", "6/6-1901")] * 20  # day wrong
    pairs += [("5/6-1901", "5 July 1901")] * 15  # month wrong
    pairs += [("5/6-1901", "5/6-1902")] * 10  # year wrong
    pairs += [("5/6-1901", "5/6-01")] * 5  # century dropped: year wrong
    pairs += [("5/6-1901", "5/6/19O1")] * 10  # unparseable: all wrong
    r = date_component_accuracy(pairs)
    assert r["day"].value == 70 / 100
    assert r["month"].value == 75 / 100
    assert r["year"].value == 75 / 100
