"""Inference: leave-one-out deltas, the sigmoid passage gate, and the
adaptive gap-based sentence selection.

Per passage with n sentences the scorer runs exactly n+1 times: once on the
full context (the gate input) and once per single-sentence-removed variant.
A passage rejected by the gate skips the n variant scores entirely.

Selection sorts the significant deltas (those above ``delta_min``)
descending, cuts at the largest gap, and keeps the strict top side:

* one significant delta -> threshold falls back to ``delta_min`` so the lone
  sentence is kept;
* all significant deltas exactly equal (every gap zero) -> threshold also
  falls back to ``delta_min``, keeping all of them rather than none;
* gap-argmax ties break toward the smallest index, i.e. the higher cut.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import exp
from typing import Callable, Sequence

from .scorer import ScorerInput, ScoringError
from .segmenter import Passage, TokenCounter, whitespace_token_count


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class InferenceConfig:
    """Passage-gate threshold on sigmoid(p0) and minimal delta significance."""

    d_min: float = 0.12
    delta_min: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.d_min < 1.0:
            raise ValueError("d_min must lie in (0, 1)")
        if self.delta_min <= 0.0:
            raise ValueError("delta_min must be positive")


@dataclass
class ScoredPassage:
    """Per-passage diagnostics: logits, deltas, threshold, criticality."""

    p0: float
    p_minus: list[float]
    deltas: list[float]
    tau: float | None
    critical: list[bool]
    gated: bool = False


@dataclass
class CompressionResult:
    """Kept sentences (original order), their concatenated text, and stats."""

    kept: list[tuple[int, int]]
    compressed_text: str
    ratio: float
    latency_seconds: float
    passages: list[ScoredPassage] = field(default_factory=list)


def loo_deltas(
    scorer: Callable[[ScorerInput], float],
    query: str,
    passage: Passage,
) -> tuple[float, list[float], list[float]]:
    """Full-context logit plus one leave-one-out logit per sentence.

    Exactly n+1 scorer invocations; variants keep the original sentence
    order. Scorer failures propagate annotated with the variant index
    (-1 for the full context).
    """
    texts = passage.sentence_texts()
    try:
        p0 = scorer(ScorerInput(query=query, sentences=tuple(texts)))
    except Exception as exc:
        raise ScoringError(-1, str(exc)) from exc
    p_minus: list[float] = []
    for k in range(len(texts)):
        variant = tuple(t for i, t in enumerate(texts) if i != k)
        try:
            p_minus.append(scorer(ScorerInput(query=query, sentences=variant)))
        except Exception as exc:
            raise ScoringError(k, str(exc)) from exc
    deltas = [p0 - pm for pm in p_minus]
    return p0, p_minus, deltas


def passage_gate(p0: float, cfg: InferenceConfig) -> bool:
    """True when the whole passage should be pruned: sigmoid(p0) < d_min."""
    return sigmoid(p0) < cfg.d_min


def adaptive_select(
    deltas: Sequence[float], cfg: InferenceConfig
) -> tuple[float | None, list[int]]:
    """Gap-based adaptive threshold over the significant deltas.

    Returns (tau, sorted critical indices); tau is None when no delta
    exceeds ``delta_min``.
    """
    significant = [d for d in deltas if d > cfg.delta_min]
    if not significant:
        return None, []
    if len(significant) == 1:
        tau = cfg.delta_min
    else:
        ordered = sorted(significant, reverse=True)
        gaps = [ordered[i] - ordered[i + 1] for i in range(len(ordered) - 1)]
        best_gap = max(gaps)
        if best_gap == 0.0:
            # Every significant delta is identical: keep them all.
            tau = cfg.delta_min
        else:
            i_star = gaps.index(best_gap)
            tau = max(cfg.delta_min, ordered[i_star + 1])
    critical = [k for k, d in enumerate(deltas) if d > tau]
    return tau, critical


def prune(
    scorer: Callable[[ScorerInput], float],
    query: str,
    passages: Sequence[Passage],
    cfg: InferenceConfig = InferenceConfig(),
    token_counter: TokenCounter = whitespace_token_count,
) -> CompressionResult:
    """Gate, score, and select per passage; assemble kept sentences in the
    original document and sentence order."""
    start = time.perf_counter()
    kept: list[tuple[int, int]] = []
    diagnostics: list[ScoredPassage] = []
    kept_texts: list[str] = []

    for pi, passage in enumerate(passages):
        texts = passage.sentence_texts()
        try:
            p0 = scorer(ScorerInput(query=query, sentences=tuple(texts)))
        except Exception as exc:
            raise ScoringError(-1, f"passage {pi}: {exc}") from exc
        if passage_gate(p0, cfg):
            diagnostics.append(
                ScoredPassage(p0=p0, p_minus=[], deltas=[], tau=None,
                              critical=[False] * len(texts), gated=True)
            )
            continue
        p_minus: list[float] = []
        for k in range(len(texts)):
            variant = tuple(t for i, t in enumerate(texts) if i != k)
            try:
                p_minus.append(scorer(ScorerInput(query=query, sentences=variant)))
            except Exception as exc:
                raise ScoringError(k, f"passage {pi}: {exc}") from exc
        deltas = [p0 - pm for pm in p_minus]
        tau, critical_idx = adaptive_select(deltas, cfg)
        critical = [False] * len(texts)
        passage_kept = []
        for k in critical_idx:
            critical[k] = True
            kept.append((pi, k))
            passage_kept.append(passage.sentences[k].text)
        if passage_kept:
            kept_texts.append("".join(passage_kept))
        diagnostics.append(
            ScoredPassage(p0=p0, p_minus=p_minus, deltas=deltas, tau=tau, critical=critical)
        )

    compressed_text = "\n".join(kept_texts)
    total_tokens = sum(token_counter(s.text) for p in passages for s in p.sentences)
    kept_tokens = sum(token_counter(passages[pi].sentences[si].text) for pi, si in kept)
    ratio = (kept_tokens / total_tokens) if total_tokens > 0 else 0.0
    latency = time.perf_counter() - start
    return CompressionResult(
        kept=kept,
        compressed_text=compressed_text,
        ratio=ratio,
        latency_seconds=latency,
        passages=diagnostics,
    )
