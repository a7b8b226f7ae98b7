"""Evaluation metrics: Exact Match, token F1, ROUGE-L, and Accuracy.

Exact Match compares fully normalized answers (lowercase, strip
punctuation, drop standalone articles, collapse whitespace).  F1 and
ROUGE-L operate on lowercased, punctuation-stripped token streams that
keep articles, so "the cat sat" vs "the cat ate" overlaps on two tokens.
All metrics score against multiple gold answers by taking the maximum.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


class Metric(str, Enum):
    EM = "em"
    F1 = "f1"
    ROUGE_L = "rouge_l"
    ACCURACY = "accuracy"


@dataclass
class MetricReport:
    task: str
    metric: Metric
    value: float
    n_examples: int
    per_example: List[float]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric.value,
            "value": self.value,
            "n": self.n_examples,
            "per_example": self.per_example,
        }


def normalize_answer(text: str) -> str:
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def _overlap_tokens(text: str) -> List[str]:
    # F1/ROUGE token streams keep articles: "the cat sat" vs "the cat ate"
    # must overlap on two tokens, not one
    return text.lower().translate(_PUNCT_TABLE).split()


def _require_golds(golds: Sequence[str]):
    if not golds:
        raise ValueError("gold answer list must be non-empty")


def exact_match(prediction: str, golds: Sequence[str]) -> float:
    _require_golds(golds)
    norm_pred = normalize_answer(prediction)
    return float(any(norm_pred == normalize_answer(g) for g in golds))


def _f1_from_counts(overlap: int, n_pred: int, n_gold: int) -> float:
    if n_pred == 0 and n_gold == 0:
        return 1.0
    if n_pred == 0 or n_gold == 0 or overlap == 0:
        return 0.0
    precision = overlap / n_pred
    recall = overlap / n_gold
    return 2 * precision * recall / (precision + recall)


def _single_f1(prediction: str, gold: str) -> float:
    pred_tokens = _overlap_tokens(prediction)
    gold_tokens = _overlap_tokens(gold)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    return _f1_from_counts(overlap, len(pred_tokens), len(gold_tokens))


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    _require_golds(golds)
    return max(_single_f1(prediction, g) for g in golds)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via row-rolling DP."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b):
            if token_a == token_b:
                current.append(previous[j] + 1)
            else:
                current.append(max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def _single_rouge_l(prediction: str, gold: str) -> float:
    pred_tokens = _overlap_tokens(prediction)
    gold_tokens = _overlap_tokens(gold)
    lcs = lcs_length(pred_tokens, gold_tokens)
    return _f1_from_counts(lcs, len(pred_tokens), len(gold_tokens))


def rouge_l(prediction: str, golds: Sequence[str]) -> float:
    _require_golds(golds)
    return max(_single_rouge_l(prediction, g) for g in golds)


def accuracy(prediction: str, golds: Sequence[str],
             options: Sequence[str] = ()) -> float:
    """Exact match, with free-form predictions first snapped to the
    F1-nearest candidate option (ties and no-overlap fall to option 0)."""
    _require_golds(golds)
    if options:
        best = max(range(len(options)),
                   key=lambda i: (_single_f1(prediction, options[i]), -i))
        prediction = options[best]
    return exact_match(prediction, golds)


_METRIC_FNS = {
    Metric.EM: lambda pred, golds, options: exact_match(pred, golds),
    Metric.F1: lambda pred, golds, options: token_f1(pred, golds),
    Metric.ROUGE_L: lambda pred, golds, options: rouge_l(pred, golds),
    Metric.ACCURACY: accuracy,
}


def score_example(metric: Metric, prediction: str, golds: Sequence[str],
                  options: Sequence[str] = ()) -> float:
    return _METRIC_FNS[Metric(metric)](prediction, golds, options)


def report(task: str, metric: Metric, scores: Sequence[float]) -> MetricReport:
    if not scores:
        raise ValueError("no example scores to aggregate")
    return MetricReport(
        task=task,
        metric=Metric(metric),
        value=sum(scores) / len(scores),
        n_examples=len(scores),
        per_example=list(scores),
    )
