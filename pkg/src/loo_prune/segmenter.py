"""Lossless rule-based sentence segmentation and chunk-merge preprocessing.

Retrieved chunks are split into sentences whose half-open character spans
tile the chunk exactly: concatenating the sentence texts in order reproduces
the chunk byte for byte.  Whitespace between two sentences belongs to the
span of the *preceding* sentence, which makes losslessness unambiguous.

Boundaries are placed after sentence-final punctuation (``.``, ``!``, ``?``,
optionally followed by closing quotes/brackets) when the next non-space
character is an uppercase letter or a digit.  A small abbreviation list
(shipped as a data file, one entry per line) suppresses false breaks such as
"Dr. Smith".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

TokenCounter = Callable[[str], int]


def whitespace_token_count(text: str) -> int:
    """Count normalized whitespace tokens; the default token counter."""
    return len(text.split())


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    """Load the abbreviation guard list (one abbreviation per line, UTF-8).

    With no path, the list bundled with the package is used.
    """
    if path is None:
        text = (
            resources.files("loo_prune").joinpath("data/abbreviations.txt").read_text("utf-8")
        )
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


_DEFAULT_ABBREVIATIONS = load_abbreviations()

# Sentence-final punctuation, optional closing quotes/brackets, then the
# whitespace run separating it from the next sentence.
_BOUNDARY_RE = re.compile(r"[.!?][\"'’”)\]]*(\s+)")
_CLOSERS = "\"'’”)]"


@dataclass(frozen=True)
class Sentence:
    """One sentence of a chunk, addressed by a half-open character span."""

    index: int
    text: str
    span: tuple[int, int]
    token_count: int


@dataclass
class Passage:
    """A segmented chunk: ordered sentences plus optional 0/1 criticality labels."""

    doc_id: str
    sentences: list[Sentence]
    labels: list[int] | None = None

    def __post_init__(self) -> None:
        if not self.sentences:
            raise ValueError("passage must contain at least one sentence")
        if self.labels is not None and len(self.labels) != len(self.sentences):
            raise ValueError(
                f"labels length {len(self.labels)} != sentence count {len(self.sentences)}"
            )

    @property
    def text(self) -> str:
        return "".join(s.text for s in self.sentences)

    def sentence_texts(self) -> list[str]:
        return [s.text for s in self.sentences]


def _preceding_token(text: str, end: int) -> str:
    """Word ending at ``end`` (punctuation included, closing quotes stripped)."""
    start = end - 1
    while start >= 0 and not text[start].isspace():
        start -= 1
    return text[start + 1 : end].strip(_CLOSERS)


def _boundary_offsets(
    text: str, abbreviations: frozenset[str]
) -> list[int]:
    """Offsets at which a new sentence starts (excluding offset 0)."""
    offsets: list[int] = []
    for match in _BOUNDARY_RE.finditer(text):
        nxt = match.end()
        if nxt >= len(text):
            continue
        ch = text[nxt]
        if not (ch.isupper() or ch.isdigit()):
            continue
        punct_end = match.start(1)
        if _preceding_token(text, punct_end) in abbreviations:
            continue
        offsets.append(nxt)
    return offsets


def segment(
    chunk_text: str,
    doc_id: str = "",
    abbreviations: frozenset[str] | None = None,
    token_counter: TokenCounter = whitespace_token_count,
) -> Passage:
    """Segment ``chunk_text`` into a :class:`Passage` whose spans tile it.

    A chunk with no boundary yields a single sentence covering the whole
    string.  Raises ``ValueError("empty chunk")`` on empty input.
    """
    if not chunk_text:
        raise ValueError("empty chunk")
    if abbreviations is None:
        abbreviations = _DEFAULT_ABBREVIATIONS

    starts = [0] + _boundary_offsets(chunk_text, abbreviations)
    ends = starts[1:] + [len(chunk_text)]
    sentences = [
        Sentence(
            index=i,
            text=chunk_text[a:b],
            span=(a, b),
            token_count=token_counter(chunk_text[a:b]),
        )
        for i, (a, b) in enumerate(zip(starts, ends))
    ]
    return Passage(doc_id=doc_id, sentences=sentences)


def passage_from_sentence_texts(
    texts: Sequence[str],
    doc_id: str = "",
    labels: list[int] | None = None,
    token_counter: TokenCounter = whitespace_token_count,
) -> Passage:
    """Build a Passage from pre-split sentence texts, recomputing spans."""
    sentences = []
    offset = 0
    for i, t in enumerate(texts):
        sentences.append(
            Sentence(index=i, text=t, span=(offset, offset + len(t)), token_count=token_counter(t))
        )
        offset += len(t)
    return Passage(doc_id=doc_id, sentences=sentences, labels=list(labels) if labels else None)


OVERLAP_MERGE_CAP = 20
SHORT_MERGE_CAP = 12
SHORT_PASSAGE_SENTENCES = 4


def _stripped_texts(p: Passage) -> list[str]:
    return [s.text.strip() for s in p.sentences]


def _suffix_prefix_overlap(a: Passage, b: Passage) -> int:
    """Longest L such that the last L sentences of ``a`` equal the first L of ``b``.

    Comparison ignores the trailing whitespace that span bookkeeping attaches
    to non-final sentences.
    """
    ta, tb = _stripped_texts(a), _stripped_texts(b)
    for length in range(min(len(ta), len(tb)), 0, -1):
        if ta[-length:] == tb[:length]:
            return length
    return 0


def _concat(a: Passage, b: Passage, drop_from_a: int = 0) -> Passage:
    """Concatenate b after a, dropping the last ``drop_from_a`` sentences of a."""
    kept = a.sentences[: len(a.sentences) - drop_from_a] if drop_from_a else a.sentences
    texts = [s.text for s in kept] + [s.text for s in b.sentences]
    counts = [s.token_count for s in kept] + [s.token_count for s in b.sentences]
    sentences = []
    offset = 0
    for i, (t, c) in enumerate(zip(texts, counts)):
        sentences.append(Sentence(index=i, text=t, span=(offset, offset + len(t)), token_count=c))
        offset += len(t)
    return Passage(doc_id=a.doc_id, sentences=sentences)


def merge_chunks(
    chunks: Sequence[tuple[str, str]],
    abbreviations: frozenset[str] | None = None,
    token_counter: TokenCounter = whitespace_token_count,
) -> list[Passage]:
    """Segment and merge retrieved chunks.

    Two rules, applied in order until neither fires:

    1. Same-document chunks whose sentence sequences overlap (the tail of one
       exactly matches the head of the other) are merged with the duplicated
       region kept once, provided the result has at most 20 sentences.
    2. Passages shorter than 4 sentences are concatenated with a neighbor in
       input order (next first, else previous), provided the result has at
       most 12 sentences.

    Neither rule reorders sentences or drops anything other than exact
    duplicates; caps only prevent merging, they never truncate.
    """
    passages = [
        segment(text, doc_id=doc_id, abbreviations=abbreviations, token_counter=token_counter)
        for doc_id, text in chunks
    ]

    # Rule 1: deduplicating overlap merge within a document.
    changed = True
    while changed:
        changed = False
        for i in range(len(passages)):
            for j in range(i + 1, len(passages)):
                a, b = passages[i], passages[j]
                if a.doc_id != b.doc_id:
                    continue
                ab = _suffix_prefix_overlap(a, b)
                ba = _suffix_prefix_overlap(b, a)
                merged = None
                if ab >= ba and ab > 0:
                    if len(a.sentences) + len(b.sentences) - ab <= OVERLAP_MERGE_CAP:
                        merged = _concat(a, b, drop_from_a=ab)
                elif ba > 0:
                    if len(a.sentences) + len(b.sentences) - ba <= OVERLAP_MERGE_CAP:
                        merged = _concat(b, a, drop_from_a=ba)
                if merged is not None:
                    passages[i] = merged
                    del passages[j]
                    changed = True
                    break
            if changed:
                break

    # Rule 2: fold too-short passages into a neighbor.
    changed = True
    while changed:
        changed = False
        for i, p in enumerate(passages):
            if len(p.sentences) >= SHORT_PASSAGE_SENTENCES:
                continue
            if (
                i + 1 < len(passages)
                and len(p.sentences) + len(passages[i + 1].sentences) <= SHORT_MERGE_CAP
            ):
                passages[i] = _concat(p, passages[i + 1])
                del passages[i + 1]
                changed = True
                break
            if i > 0 and len(passages[i - 1].sentences) + len(p.sentences) <= SHORT_MERGE_CAP:
                passages[i - 1] = _concat(passages[i - 1], p)
                del passages[i]
                changed = True
                break
    return passages
