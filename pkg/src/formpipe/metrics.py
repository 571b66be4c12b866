"""Evaluation of transcriptions and classifiers.

Token accuracy (TA) and m-error sequence accuracy (SA_m) compare truth and
prediction position by position.  The leading <Start> is skipped, <End> is
scored, and whichever side is shorter is extended with a filler that never
matches, so a dropped token costs every position after it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tokens import TokenizeError, TokenSequence, dictionary, parse_date

_MISS = -1  # padding id guaranteed to differ from any real token


def _ids(x) -> tuple[int, ...]:
    return x.ids if isinstance(x, TokenSequence) else tuple(int(i) for i in x)


@dataclass(frozen=True)
class EvalPair:
    """Truth and prediction; either may be a TokenSequence or raw ids.

    Raw ids let decoder output and over-length sequences be scored; ``kind``
    is then required unless one side is a TokenSequence.
    """

    truth: object
    pred: object
    doc_id: str = ""
    field: str = ""
    kind: str = ""

    def __post_init__(self):
        kinds = {s.kind for s in (self.truth, self.pred) if isinstance(s, TokenSequence)}
        if self.kind:
            kinds.add(self.kind)
        if len(kinds) != 1:
            raise ValueError(f"dictionary mismatch or unknown kind: {sorted(kinds)}")
        object.__setattr__(self, "kind", kinds.pop())

    def truth_ids(self) -> tuple[int, ...]:
        return _ids(self.truth)

    def pred_ids(self) -> tuple[int, ...]:
        return _ids(self.pred)


@dataclass(frozen=True)
class Rate:
    value: float
    se: float
    n: int  # number of Bernoulli trials behind the rate

    def __float__(self) -> float:
        return self.value


def _rate(hits: int, n: int) -> Rate:
    p = hits / n
    return Rate(p, math.sqrt(p * (1 - p) / n), n)


def _strip_pad(ids, pad: int) -> list[int]:
    ids = list(ids)
    while ids and ids[-1] == pad:
        ids.pop()
    return ids


def aligned(pair: EvalPair) -> tuple[np.ndarray, np.ndarray]:
    """Truth and prediction after dropping <Start> and trailing padding,
    both extended with non-matching filler to a common length."""
    pad = dictionary(pair.kind).pad_id
    t = _strip_pad(pair.truth_ids(), pad)[1:]
    p = _strip_pad(pair.pred_ids(), pad)[1:]
    k = max(len(t), len(p))
    t = np.array(t + [_MISS] * (k - len(t)), np.int64)
    p = np.array(p + [_MISS - 1] * (k - len(p)), np.int64)
    return t, p


def mismatches(pair: EvalPair) -> tuple[int, int]:
    """(number of mismatching positions, number of scored positions)."""
    t, p = aligned(pair)
    return int((t != p).sum()), len(t)


def _check(pairs) -> list[EvalPair]:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    kinds = {p.kind for p in pairs}
    if len(kinds) > 1:
        raise ValueError(f"dictionary mismatch across pairs: {sorted(kinds)}")
    return pairs


def token_accuracy(pairs) -> Rate:
    pairs = _check(pairs)
    miss = total = 0
    for p in pairs:
        e, k = mismatches(p)
        miss += e
        total += k
    return _rate(total - miss, total)


def sequence_accuracy(pairs, m: int = 0) -> Rate:
    if m < 0:
        raise ValueError("m must be >= 0")
    pairs = _check(pairs)
    ok = sum(mismatches(p)[0] <= m for p in pairs)
    return _rate(ok, len(pairs))


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # rows: truth, columns: prediction

    def __post_init__(self):
        self.counts = np.asarray(self.counts, np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k) or (self.counts < 0).any():
            raise ValueError("counts must be a non-negative KxK matrix")

    @classmethod
    def from_labels(cls, truth, pred, classes=None) -> "ConfusionMatrix":
        truth, pred = list(truth), list(pred)
        if len(truth) != len(pred):
            raise ValueError("truth and prediction differ in length")
        classes = list(classes) if classes is not None else sorted(set(truth) | set(pred))
        pos = {c: i for i, c in enumerate(classes)}
        cm = np.zeros((len(classes), len(classes)), np.int64)
        for t, p in zip(truth, pred):
            cm[pos[t], pos[p]] += 1
        return cls(classes, cm)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def confusion_stats(cm: ConfusionMatrix, positive) -> dict:
    """Precision, recall and accuracy for one class; 0/0 gives ``None`` plus a flag."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    i = cm.classes.index(positive)
    tp = int(cm.counts[i, i])
    col, row = int(cm.counts[:, i].sum()), int(cm.counts[i, :].sum())
    undefined = []
    precision = tp / col if col else None
    recall = tp / row if row else None
    if precision is None:
        undefined.append("precision")
    if recall is None:
        undefined.append("recall")
    return {
        "precision": precision,
        "recall": recall,
        "accuracy": float(np.trace(cm.counts)) / cm.total,
        "majority_baseline": float(cm.counts.sum(1).max()) / cm.total,
        "undefined": undefined,
    }


def date_component_accuracy(pairs) -> dict:
    """SA_0 of day, month and year separately over ``(truth, pred)`` text pairs.

    Days compare as integers, years as integers of equal digit count, so
    "01" matches "1" but "90" never matches "1990".  A side that fails to
    parse scores zero on every component.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    hits = {"day": 0, "month": 0, "year": 0}
    for truth, pred in pairs:
        try:
            a, b = parse_date(truth), parse_date(pred)
        except TokenizeError:
            continue
        hits["day"] += a.day == b.day
        hits["month"] += a.month == b.month
        hits["year"] += len(a.year) == len(b.year) and int(a.year) == int(b.year)
    return {k: _rate(v, len(pairs)) for k, v in hits.items()}
