"""Composite training objective over leave-one-out deltas.

A labeled passage is routed to exactly one of two branches:

* clue-filled (some label is 1): weighted hinge sums enforcing
  (a) ordering margin m1 between every critical/non-critical delta pair,
  (b) minimum drop m2 for every critical sentence,
  (c) near-neutral deltas (<= -m3 after the hinge) for non-critical ones,
  plus a positively-weighted BCE pulling the full-context logit toward 1.
* clue-free (all labels 0): BCE toward 0 on the full-context logit and on
  every leave-one-out logit, plus a hinge keeping |delta| within m3.

Hinge sums are raw (not normalized by pair or sentence count), and the BCE
positive weight multiplies only target-1 terms.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from math import exp, log1p
from typing import Sequence

from .segmenter import Passage


@dataclass(frozen=True)
class LossConfig:
    """Margins, branch weights, and the sentence-sampling cap."""

    m1: float = 0.35
    m2: float = 0.35
    m3: float = 0.035
    alpha: float = 1.5
    beta: float = 1.25
    gamma: float = 1.0
    lambda_: float = 0.75
    bce_pos_weight: float = 5.0
    sample_m: int = 50

    def __post_init__(self) -> None:
        if not (self.m1 > 0 and self.m2 > 0 and self.m3 > 0):
            raise ValueError("margins must be positive")
        if not self.m3 < min(self.m1, self.m2):
            raise ValueError("m3 must be smaller than m1 and m2")
        if min(self.alpha, self.beta, self.gamma, self.lambda_) < 0:
            raise ValueError("hinge and BCE weights must be non-negative")
        if self.bce_pos_weight <= 0:
            raise ValueError("bce_pos_weight must be positive")
        if self.sample_m <= 0:
            raise ValueError("sample_m must be positive")


@dataclass(frozen=True)
class DeltaBundle:
    """Full-context logit, leave-one-out logits, their deltas, and labels."""

    p0: float
    p_minus: tuple[float, ...]
    deltas: tuple[float, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.p_minus) == len(self.deltas) == len(self.labels)):
            raise ValueError("p_minus, deltas, labels must have equal length")
        for k, (pm, d) in enumerate(zip(self.p_minus, self.deltas)):
            if d != self.p0 - pm:
                raise ValueError(f"deltas[{k}] != p0 - p_minus[{k}]")

    @staticmethod
    def from_scores(p0: float, p_minus: Sequence[float], labels: Sequence[int]) -> "DeltaBundle":
        return DeltaBundle(
            p0=p0,
            p_minus=tuple(p_minus),
            deltas=tuple(p0 - pm for pm in p_minus),
            labels=tuple(labels),
        )

    @property
    def clue_filled(self) -> bool:
        return any(y == 1 for y in self.labels)


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted component sums; total applies the configured weights."""

    ord: float
    crit: float
    non: float
    bce: float


def softplus(x: float) -> float:
    return max(x, 0.0) + log1p(exp(-abs(x)))


def bce(logit: float, target: int, pos_weight: float = 1.0) -> float:
    """Stable binary cross-entropy on sigmoid(logit).

    Computed through softplus (log-sum-exp form), never via log(sigmoid(x)).
    The positive weight multiplies target-1 terms only.
    """
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    if target == 1:
        return pos_weight * softplus(-logit)
    if target == 0:
        return softplus(logit)
    raise ValueError(f"target must be 0 or 1, got {target}")


def loss_clue_filled(bundle: DeltaBundle, cfg: LossConfig) -> tuple[float, LossBreakdown]:
    """Ranking hinges plus BCE(p0, 1) for a passage with at least one clue."""
    if not bundle.clue_filled:
        raise ValueError("clue-free passage routed to clue-filled loss")
    deltas, labels = bundle.deltas, bundle.labels
    pos = [d for d, y in zip(deltas, labels) if y == 1]
    neg = [d for d, y in zip(deltas, labels) if y == 0]

    ord_sum = sum(max(0.0, cfg.m1 - (di - dj)) for di in pos for dj in neg)
    crit_sum = sum(max(0.0, cfg.m2 - d) for d in pos)
    non_sum = sum(max(0.0, d + cfg.m3) for d in neg)
    bce_term = bce(bundle.p0, 1, cfg.bce_pos_weight)

    total = cfg.alpha * ord_sum + cfg.beta * crit_sum + cfg.gamma * non_sum + cfg.lambda_ * bce_term
    return total, LossBreakdown(ord=ord_sum, crit=crit_sum, non=non_sum, bce=bce_term)


def loss_clue_free(bundle: DeltaBundle, cfg: LossConfig) -> tuple[float, LossBreakdown]:
    """Low-score, low-variation objective for a passage with no clue."""
    if bundle.clue_filled:
        raise ValueError("clue-filled passage routed to clue-free loss")
    bce_sum = bce(bundle.p0, 0, cfg.bce_pos_weight) + sum(
        bce(pm, 0, cfg.bce_pos_weight) for pm in bundle.p_minus
    )
    non_sum = sum(max(0.0, abs(d) - cfg.m3) for d in bundle.deltas)
    total = cfg.lambda_ * bce_sum + cfg.gamma * non_sum
    return total, LossBreakdown(ord=0.0, crit=0.0, non=non_sum, bce=bce_sum)


def route_loss(bundle: DeltaBundle, cfg: LossConfig) -> tuple[float, LossBreakdown]:
    """Dispatch to the single applicable branch."""
    if bundle.clue_filled:
        return loss_clue_filled(bundle, cfg)
    return loss_clue_free(bundle, cfg)


def hinge_slacks(bundle: DeltaBundle, cfg: LossConfig) -> list[float]:
    """Signed hinge arguments; |slack| measures distance from each kink.

    Used to filter finite-difference probes away from non-differentiable
    points.
    """
    deltas, labels = bundle.deltas, bundle.labels
    slacks: list[float] = []
    if bundle.clue_filled:
        pos = [d for d, y in zip(deltas, labels) if y == 1]
        neg = [d for d, y in zip(deltas, labels) if y == 0]
        slacks.extend(cfg.m1 - (di - dj) for di in pos for dj in neg)
        slacks.extend(cfg.m2 - d for d in pos)
        slacks.extend(d + cfg.m3 for d in neg)
    else:
        slacks.extend(abs(d) - cfg.m3 for d in deltas)
    return slacks


def sample_sentences(passage: Passage, cfg: LossConfig, seed: int) -> list[int]:
    """Indices to train on: all sentences when n <= sample_m, otherwise every
    critical index plus a seeded uniform sample of non-critical ones.

    The returned subset preserves original sentence order.
    """
    n = len(passage.sentences)
    labels = passage.labels if passage.labels is not None else [0] * n
    critical = [i for i, y in enumerate(labels) if y == 1]
    if len(critical) >= cfg.sample_m:
        raise ValueError("sample cap below critical count")
    if n <= cfg.sample_m:
        return list(range(n))
    non_critical = [i for i, y in enumerate(labels) if y != 1]
    rng = random.Random(seed)
    chosen = rng.sample(non_critical, cfg.sample_m - len(critical))
    return sorted(set(critical) | set(chosen))
