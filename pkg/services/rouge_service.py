"""
ROUGE Service

ROUGE-1, ROUGE-2 and ROUGE-L over flat token lists, single reference,
no stemming or stopword removal.

- ROUGE-N: clipped n-gram overlap (multiset intersection)
- ROUGE-L: summary-level longest common subsequence over the flat sequence
- Corpus score: arithmetic mean of the per-pair P, R and F

Counts are combined with exact rationals before the final float
conversion.
"""

import logging
from collections import Counter
from typing import Dict, Iterable, List, Sequence, Tuple

import pandas as pd

from core.exceptions import ContractError
from models.config import RewardMetric
from models.rouge_score import RougeScore

logger = logging.getLogger(__name__)

ROUGE_VARIANTS = ("rouge_1", "rouge_2", "rouge_l")
VARIANT_LABELS = {"rouge_1": "ROUGE-1", "rouge_2": "ROUGE-2", "rouge_l": "ROUGE-L"}


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ContractError(f"ROUGE-N needs n >= 1, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Dynamic-programming LCS length, one row at a time."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def score_pair(candidate: Sequence[str], reference: Sequence[str], variant: str) -> RougeScore:
    variant = RewardMetric(variant).value
    if variant == "rouge_1":
        return rouge_n(candidate, reference, 1)
    if variant == "rouge_2":
        return rouge_n(candidate, reference, 2)
    return rouge_l(candidate, reference)


def evaluate_corpus(
    pairs: Iterable[Tuple[Sequence[str], Sequence[str]]],
    variants: Sequence[str] = ROUGE_VARIANTS,
) -> Dict[str, RougeScore]:
    """Mean per-pair RougeScore for each variant; an empty corpus scores 0."""
    pairs = list(pairs)
    result: Dict[str, RougeScore] = {}
    for variant in variants:
        if not pairs:
            result[variant] = RougeScore.zero()
            continue
        scores = [score_pair(c, r, variant) for c, r in pairs]
        result[variant] = RougeScore(
            precision=sum(s.precision for s in scores) / len(scores),
            recall=sum(s.recall for s in scores) / len(scores),
            f1=sum(s.f1 for s in scores) / len(scores),
        )
    return result


def report_frame(scores: Dict[str, RougeScore]) -> pd.DataFrame:
    """variant, precision, recall, f1 as percentages rounded to 2 decimals."""
    rows: List[Dict] = []
    for variant, score in scores.items():
        rows.append({
            "variant": VARIANT_LABELS.get(variant, variant),
            "precision": round(100.0 * score.precision, 2),
            "recall": round(100.0 * score.recall, 2),
            "f1": round(100.0 * score.f1, 2),
        })
    return pd.DataFrame(rows, columns=["variant", "precision", "recall", "f1"])
