"""Answer and retrieval metrics, dataset loading, and report aggregation.

Answer normalization follows the de facto standard for extractive QA scoring:
lowercase, strip punctuation, drop the articles "a", "an", "the" as whole
tokens, and collapse whitespace.  F1 is token-multiset overlap, maximized
over gold aliases.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import RevtreeError
from .search import RunStats

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    gold_paragraph_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.id:
            raise ValueError("example id must be non-empty")
        if not self.gold_answers:
            raise ValueError(f"example '{self.id}' needs at least one gold answer")


@dataclass(frozen=True)
class ExampleResult:
    """Per-question run output consumed by the aggregator."""

    example_id: str
    answer: str
    scored_ids: tuple[str, ...] = ()
    stats: RunStats = field(default_factory=RunStats)


@dataclass(frozen=True)
class MetricsReport:
    em: float
    f1: float
    recall_at_15: float
    mean_api_calls: float
    mean_distinct_docs: float
    mean_rate: float
    mean_evidence: float
    parse_success_rate: float
    n: int
    recall_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "f1": self.f1,
            "recall_at_15": self.recall_at_15,
            "mean_api_calls": self.mean_api_calls,
            "mean_distinct_docs": self.mean_distinct_docs,
            "mean_rate": self.mean_rate,
            "mean_evidence": self.mean_evidence,
            "parse_success_rate": self.parse_success_rate,
            "n": self.n,
            "recall_excluded": self.recall_excluded,
        }

    def format_table(self) -> str:
        rows = [
            ("EM", f"{self.em:.4f}"),
            ("F1", f"{self.f1:.4f}"),
            ("Recall@15", f"{self.recall_at_15:.4f}"),
            ("Mean API calls", f"{self.mean_api_calls:.2f}"),
            ("Mean distinct docs", f"{self.mean_distinct_docs:.2f}"),
            ("Rate (docs/call)", f"{self.mean_rate:.4f}"),
            ("Mean evidence", f"{self.mean_evidence:.2f}"),
            ("Parse success rate", f"{self.parse_success_rate:.4f}"),
            ("Examples", str(self.n)),
            ("Recall-excluded", str(self.recall_excluded)),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop whole-token articles, collapse
    whitespace."""
    lowered = text.lower()
    no_punct = lowered.translate(_PUNCT_TABLE)
    no_articles = _ARTICLES.sub(" ", no_punct)
    return " ".join(no_articles.split())


def _tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals some normalized gold answer."""
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    norm_pred = normalize_answer(prediction)
    return int(any(norm_pred == normalize_answer(g) for g in gold_answers))


def _pair_f1(prediction: str, gold: str) -> float:
    pred_tokens = _tokens(prediction)
    gold_tokens = _tokens(gold)
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, gold_answers: Sequence[str]) -> float:
    """Token-level F1 on normalized multisets, maximized over gold aliases."""
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    return max(_pair_f1(prediction, g) for g in gold_answers)


def recall_at_k(retrieved_ids: Sequence[str], gold_ids: frozenset[str] | set[str],
                k: int = 15) -> float:
    """Fraction of gold paragraph ids present in the first k retrieved."""
    if not gold_ids:
        raise ValueError("gold_ids must be non-empty for a scored example")
    window = set(retrieved_ids[:k])
    return len(window & set(gold_ids)) / len(gold_ids)


def evaluate_run(dataset: Sequence[QAExample],
                 results: Mapping[str, ExampleResult],
                 recall_k: int = 15) -> MetricsReport:
    """Aggregate per-example results into one report.

    Examples without gold paragraph ids are excluded from recall (counted,
    not scored as zero).  The rate is the ratio of the mean distinct-document
    count to the mean call count, and parse success is computed over call
    totals.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    em_sum = 0.0
    f1_sum = 0.0
    recall_sum = 0.0
    recall_n = 0
    api_sum = 0
    doc_sum = 0
    evidence_sum = 0
    parse_failure_sum = 0
    for example in dataset:
        result = results.get(example.id)
        if result is None:
            raise RevtreeError(f"missing result for example id '{example.id}'")
        em_sum += exact_match(result.answer, example.gold_answers)
        f1_sum += f1_score(result.answer, example.gold_answers)
        if example.gold_paragraph_ids:
            recall_sum += recall_at_k(result.scored_ids,
                                      example.gold_paragraph_ids, recall_k)
            recall_n += 1
        api_sum += result.stats.api_calls
        doc_sum += result.stats.distinct_docs
        evidence_sum += result.stats.evidence_count
        parse_failure_sum += result.stats.parse_failures
    n = len(dataset)
    mean_api = api_sum / n
    mean_docs = doc_sum / n
    return MetricsReport(
        em=em_sum / n,
        f1=f1_sum / n,
        recall_at_15=recall_sum / recall_n if recall_n else 0.0,
        mean_api_calls=mean_api,
        mean_distinct_docs=mean_docs,
        mean_rate=mean_docs / mean_api if mean_api > 0 else 0.0,
        mean_evidence=evidence_sum / n,
        parse_success_rate=1.0 - parse_failure_sum / api_sum if api_sum > 0 else 1.0,
        n=n,
        recall_excluded=n - recall_n,
    )


def load_dataset(path: str | Path) -> list[QAExample]:
    """Parse a line-delimited QA dataset.

    Each line carries ``id``, ``question``, ``gold_answers`` and an optional
    ``gold_paragraph_ids`` list.
    """
    examples: list[QAExample] = []
    seen: set[str] = set()
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RevtreeError(
                    f"{path}: line {lineno}: invalid JSON: {exc}"
                ) from exc
            try:
                example = QAExample(
                    id=record["id"],
                    question=record["question"],
                    gold_answers=tuple(record["gold_answers"]),
                    gold_paragraph_ids=frozenset(
                        record.get("gold_paragraph_ids", ())
                    ),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RevtreeError(f"{path}: line {lineno}: {exc}") from exc
            if example.id in seen:
                raise RevtreeError(
                    f"{path}: line {lineno}: duplicate example id '{example.id}'"
                )
            seen.add(example.id)
            examples.append(example)
    return examples
