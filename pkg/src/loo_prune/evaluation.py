"""QA and compression metrics, the containment reader, threshold grid
search, and the latency benchmark.

Answer normalization follows the common QA convention (lowercase, strip
punctuation, drop articles, collapse whitespace); EM and token-multiset F1
take the maximum over the gold answers.  The containment reader stands in
for an LLM: it answers correctly iff some gold answer survives compression
as a contiguous token run of the compressed context.
"""

from __future__ import annotations

import re
import string
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .pruner import InferenceConfig, adaptive_select, loo_deltas, sigmoid
from .scorer import ScorerInput
from .segmenter import Passage, TokenCounter, whitespace_token_count

QA_PROMPT_TEMPLATE = """Context information is:
```{context}```

Given provided context (might not be sufficient for below query), answer the query without any explanation.
Query: `{question}`
Answer (in plain text):
"""


def qa_prompt(context: str, question: str) -> str:
    """Fill the reader prompt template for export to an external reader."""
    return QA_PROMPT_TEMPLATE.format(context=context, question=question)


@dataclass(frozen=True)
class QAMetrics:
    em: float
    f1: float


@dataclass(frozen=True)
class CompressionMetrics:
    ratio: float
    latency_seconds: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")
        if self.latency_seconds < 0.0:
            raise ValueError("latency must be non-negative")


_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    counts: dict[str, int] = {}
    for t in gold_tokens:
        counts[t] = counts.get(t, 0) + 1
    same = 0
    for t in pred_tokens:
        if counts.get(t, 0) > 0:
            same += 1
            counts[t] -= 1
    if same == 0:
        return 0.0
    precision = same / len(pred_tokens)
    recall = same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def em_f1(prediction: str, gold_answers: Sequence[str]) -> QAMetrics:
    """Exact match and best token-multiset F1 over the gold answers."""
    pred_norm = normalize_answer(prediction)
    best_em = 0.0
    best_f1 = 0.0
    for gold in gold_answers:
        gold_norm = normalize_answer(gold)
        if pred_norm == gold_norm:
            best_em = 1.0
        best_f1 = max(best_f1, _token_f1(pred_norm.split(), gold_norm.split()))
    return QAMetrics(em=best_em, f1=best_f1)


def containment_reader(compressed_context: str, gold_answers: Sequence[str]) -> str:
    """First gold answer whose normalized tokens occur contiguously in the
    normalized compressed context; empty string when none does."""
    context_tokens = normalize_answer(compressed_context).split()
    for gold in gold_answers:
        gold_tokens = normalize_answer(gold).split()
        if not gold_tokens:
            continue
        n = len(gold_tokens)
        for i in range(len(context_tokens) - n + 1):
            if context_tokens[i : i + n] == gold_tokens:
                return gold
        else:
            continue
    return ""


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def sentence_prf(
    predicted: Sequence[Sequence[int]], gold: Sequence[Sequence[int]]
) -> PRF:
    """Micro-averaged precision/recall/F1 over all sentences in the split.

    ``predicted[i]`` and ``gold[i]`` are aligned 0/1 vectors for passage i.
    Precision is defined as 0 when there are no positive predictions.
    """
    tp = fp = fn = 0
    for pred_row, gold_row in zip(predicted, gold, strict=True):
        for p, g in zip(pred_row, gold_row, strict=True):
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif g and not p:
                fn += 1
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF(precision=precision, recall=recall, f1=f1)


def compression_ratio(
    passages: Sequence[Passage],
    kept: Sequence[tuple[int, int]],
    token_counter: TokenCounter = whitespace_token_count,
) -> float:
    """Compressed token count over original token count, in [0, 1]."""
    total = sum(token_counter(s.text) for p in passages for s in p.sentences)
    if total == 0:
        return 0.0
    kept_tokens = sum(token_counter(passages[pi].sentences[si].text) for pi, si in kept)
    return kept_tokens / total


# --------------------------------------------------------------------------
# Threshold grid search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    d_min: float
    delta_min: float
    precision: float
    recall: float
    f1: float
    kept_ratio: float


@dataclass
class GridSearchResult:
    best: GridPoint
    surface: list[GridPoint]


def grid_search(
    dev_set: Sequence[tuple[str, Sequence[Passage]]],
    scorer: Callable[[ScorerInput], float],
    d_min_grid: Sequence[float],
    delta_min_grid: Sequence[float],
    token_counter: TokenCounter = whitespace_token_count,
) -> GridSearchResult:
    """Exhaustive search over the threshold grid, ranked by sentence F1.

    Scorer logits are computed once per passage; every grid point reuses
    them.  Ties break toward the smaller kept ratio, then smaller d_min,
    then smaller delta_min.
    """
    scored = []
    for query, passages in dev_set:
        for passage in passages:
            if passage.labels is None:
                raise ValueError("grid search requires labeled passages")
            p0, _, deltas = loo_deltas(scorer, query, passage)
            tokens = [token_counter(s.text) for s in passage.sentences]
            scored.append((p0, deltas, passage.labels, tokens))

    surface: list[GridPoint] = []
    for d_min in d_min_grid:
        for delta_min in delta_min_grid:
            cfg = InferenceConfig(d_min=d_min, delta_min=delta_min)
            tp = fp = fn = 0
            kept_tokens = 0
            total_tokens = 0
            for p0, deltas, labels, tokens in scored:
                total_tokens += sum(tokens)
                if sigmoid(p0) < cfg.d_min:
                    predicted: set[int] = set()
                else:
                    _, critical = adaptive_select(deltas, cfg)
                    predicted = set(critical)
                for k, y in enumerate(labels):
                    if k in predicted:
                        kept_tokens += tokens[k]
                        if y == 1:
                            tp += 1
                        else:
                            fp += 1
                    elif y == 1:
                        fn += 1
            precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
            recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
            kept_ratio = kept_tokens / total_tokens if total_tokens else 0.0
            surface.append(
                GridPoint(
                    d_min=d_min,
                    delta_min=delta_min,
                    precision=precision,
                    recall=recall,
                    f1=f1,
                    kept_ratio=kept_ratio,
                )
            )

    best = max(
        surface,
        key=lambda g: (g.f1, -g.kept_ratio, -g.d_min, -g.delta_min),
    )
    return GridSearchResult(best=best, surface=surface)


# --------------------------------------------------------------------------
# Latency benchmark
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchStats:
    mean_seconds: float
    p50_seconds: float
    p95_seconds: float
    repetitions: int
    questions: int


def _percentile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    pos = q * (len(sorted_values) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def bench(
    dataset: Sequence[tuple[str, Sequence[Passage]]],
    scorer: Callable[[ScorerInput], float],
    cfg: InferenceConfig = InferenceConfig(),
    repetitions: int = 3,
) -> BenchStats:
    """End-to-end wall clock per question, averaged over repetitions."""
    from .pruner import prune

    per_question = [0.0] * len(dataset)
    for _ in range(repetitions):
        for i, (query, passages) in enumerate(dataset):
            start = time.perf_counter()
            prune(scorer, query, passages, cfg)
            per_question[i] += time.perf_counter() - start
    per_question = [t / repetitions for t in per_question]
    ordered = sorted(per_question)
    mean = sum(per_question) / len(per_question) if per_question else 0.0
    return BenchStats(
        mean_seconds=mean,
        p50_seconds=_percentile(ordered, 0.50),
        p95_seconds=_percentile(ordered, 0.95),
        repetitions=repetitions,
        questions=len(dataset),
    )
