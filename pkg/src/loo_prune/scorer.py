"""Clue-richness scorers: f(query, context sentences) -> scalar logit.

Two interchangeable implementations share one callable protocol:

* :class:`LexicalScorer` — deterministic IDF-sum baseline.  Its score is a
  plain sum of weights of distinct query terms found in the context, which
  makes leave-one-out deltas exactly predictable and is the workhorse for
  pipeline tests.
* :class:`NeuralScorer` — a small trainable scorer: hash-bucket embeddings,
  multi-head attention pooling (one learned query vector per head),
  concatenation, linear projection, and a final linear unit producing one
  unbounded logit.  No positional encodings, so the score is invariant under
  permutation of context sentences.

All arithmetic is 64-bit.  Scores are raw logits; the sigmoid is applied
only by consumers (passage gate, BCE loss).
"""

from __future__ import annotations

import hashlib
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log, sqrt
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

DEFAULT_BUCKET_COUNT = 2**16
DEFAULT_DIM = 64
DEFAULT_HEADS = 8

SEP_ID = 0  # reserved separator bucket; word tokens hash into [1, bucket_count)

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class NumericalOverflowError(ArithmeticError):
    """Raised when scoring produces a non-finite intermediate or result."""


class ScoringError(RuntimeError):
    """Batch scoring failure, annotated with the offending input index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"scoring failed for input {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class ScorerInput:
    """A query plus the context variant (ordered sentence texts) to score."""

    query: str
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError("query must be non-empty")
        object.__setattr__(self, "sentences", tuple(self.sentences))


class Scorer(Protocol):
    def __call__(self, inp: ScorerInput) -> float: ...


def words(text: str) -> list[str]:
    """Lowercase word tokens: split on whitespace, punctuation, underscores."""
    return _WORD_RE.findall(text.lower())


def _bucket(token: str, bucket_count: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(digest, "little") % (bucket_count - 1)


@dataclass(frozen=True)
class TokenSequence:
    """Hashed token ids with an aligned padding mask."""

    ids: tuple[int, ...]
    is_padding: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.is_padding):
            raise ValueError("ids and padding mask must have equal length")


def tokenize(
    query: str,
    sentences: Sequence[str],
    bucket_count: int = DEFAULT_BUCKET_COUNT,
) -> TokenSequence:
    """Hash query tokens, a separator, then all sentence tokens in order.

    The hash is a fixed platform-independent function of the token text, so
    identical input always yields identical ids.
    """
    if not query:
        raise ValueError("query must be non-empty")
    ids = [_bucket(w, bucket_count) for w in words(query)]
    ids.append(SEP_ID)
    for sentence in sentences:
        ids.extend(_bucket(w, bucket_count) for w in words(sentence))
    return TokenSequence(ids=tuple(ids), is_padding=tuple(False for _ in ids))


# --------------------------------------------------------------------------
# Neural scorer
# --------------------------------------------------------------------------


@dataclass
class ScorerParams:
    """Parameters of the attention-pooling scorer.

    Shapes: ``embedding_table`` (bucket_count, dim); ``pooling_queries``
    (heads, dim); ``output_projection`` (heads*dim, dim); ``head_weights``
    (dim,); ``head_bias`` scalar.
    """

    embedding_table: np.ndarray
    pooling_queries: np.ndarray
    output_projection: np.ndarray
    head_weights: np.ndarray
    head_bias: float
    dim: int
    heads: int

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        expected = {
            "embedding_table": (self.bucket_count, self.dim),
            "pooling_queries": (self.heads, self.dim),
            "output_projection": (self.heads * self.dim, self.dim),
            "head_weights": (self.dim,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if not np.isfinite(self.head_bias):
            raise ValueError("head_bias is non-finite")

    @property
    def bucket_count(self) -> int:
        return self.embedding_table.shape[0]

    def copy(self) -> "ScorerParams":
        return ScorerParams(
            embedding_table=self.embedding_table.copy(),
            pooling_queries=self.pooling_queries.copy(),
            output_projection=self.output_projection.copy(),
            head_weights=self.head_weights.copy(),
            head_bias=float(self.head_bias),
            dim=self.dim,
            heads=self.heads,
        )

    @staticmethod
    def zeros(
        bucket_count: int = DEFAULT_BUCKET_COUNT,
        dim: int = DEFAULT_DIM,
        heads: int = DEFAULT_HEADS,
    ) -> "ScorerParams":
        return ScorerParams(
            embedding_table=np.zeros((bucket_count, dim)),
            pooling_queries=np.zeros((heads, dim)),
            output_projection=np.zeros((heads * dim, dim)),
            head_weights=np.zeros(dim),
            head_bias=0.0,
            dim=dim,
            heads=heads,
        )

    @staticmethod
    def init_random(
        bucket_count: int = DEFAULT_BUCKET_COUNT,
        dim: int = DEFAULT_DIM,
        heads: int = DEFAULT_HEADS,
        seed: int = 0,
        scale: float = 0.5,
    ) -> "ScorerParams":
        rng = np.random.default_rng(seed)
        return ScorerParams(
            embedding_table=rng.normal(0.0, scale, (bucket_count, dim)),
            pooling_queries=rng.normal(0.0, scale, (heads, dim)),
            output_projection=rng.normal(0.0, 1.0 / sqrt(heads * dim), (heads * dim, dim)),
            head_weights=rng.normal(0.0, 1.0 / sqrt(dim), dim),
            head_bias=0.0,
            dim=dim,
            heads=heads,
        )


@dataclass
class ForwardCache:
    """Intermediates of one scorer forward pass, kept for backpropagation."""

    ids: np.ndarray          # (T,) int
    valid: np.ndarray        # (T,) bool
    token_embeddings: np.ndarray  # (T, dim)
    attention: np.ndarray    # (heads, T) post-softmax weights, padding zeroed
    pooled_concat: np.ndarray     # (heads*dim,)
    projected: np.ndarray    # (dim,)
    score: float


def forward_with_cache(params: ScorerParams, seq: TokenSequence) -> ForwardCache:
    """Run the attention-pooling forward pass, keeping intermediates."""
    ids = np.asarray(seq.ids, dtype=np.int64)
    valid = ~np.asarray(seq.is_padding, dtype=bool)
    if not valid.any():
        raise ValueError("token sequence is entirely padding")
    x = params.embedding_table[ids]  # (T, dim)
    scale = 1.0 / sqrt(params.dim)

    scores = (x @ params.pooling_queries.T).T * scale  # (heads, T)
    scores = np.where(valid[None, :], scores, -np.inf)
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    weights[:, ~valid] = 0.0
    weights /= weights.sum(axis=1, keepdims=True)

    pooled = weights @ x                    # (heads, dim)
    concat = pooled.reshape(-1)             # (heads*dim,)
    projected = concat @ params.output_projection  # (dim,)
    score = float(projected @ params.head_weights + params.head_bias)

    if not (np.isfinite(score) and np.all(np.isfinite(projected)) and np.all(np.isfinite(weights))):
        raise NumericalOverflowError("numerical overflow")
    return ForwardCache(
        ids=ids,
        valid=valid,
        token_embeddings=x,
        attention=weights,
        pooled_concat=concat,
        projected=projected,
        score=score,
    )


def score_neural(params: ScorerParams, inp: ScorerInput) -> float:
    """Score a query/context pair with the attention-pooling scorer."""
    seq = tokenize(inp.query, inp.sentences, params.bucket_count)
    return forward_with_cache(params, seq).score


class NeuralScorer:
    """Callable wrapper binding :func:`score_neural` to fixed parameters.

    Parameters are treated as immutable while scoring; concurrent callers
    are safe.
    """

    def __init__(self, params: ScorerParams):
        self.params = params

    def __call__(self, inp: ScorerInput) -> float:
        return score_neural(self.params, inp)


# --------------------------------------------------------------------------
# Lexical scorer
# --------------------------------------------------------------------------


def score_lexical(idf_table: Mapping[str, float], inp: ScorerInput) -> float:
    """Sum of IDF weights of distinct query terms present in the context.

    Terms absent from the table weigh zero; an empty context scores zero.
    """
    context_terms = set()
    for sentence in inp.sentences:
        context_terms.update(words(sentence))
    return float(
        sum(idf_table.get(t, 0.0) for t in set(words(inp.query)) if t in context_terms)
    )


class LexicalScorer:
    def __init__(self, idf_table: Mapping[str, float]):
        self.idf_table = dict(idf_table)

    def __call__(self, inp: ScorerInput) -> float:
        return score_lexical(self.idf_table, inp)


def build_idf_table(documents: Iterable[str]) -> dict[str, float]:
    """Corpus-derived weights: weight(t) = log(1 + N / df(t))."""
    df: dict[str, int] = {}
    n_docs = 0
    for doc in documents:
        n_docs += 1
        for term in set(words(doc)):
            df[term] = df.get(term, 0) + 1
    return {t: log(1.0 + n_docs / d) for t, d in df.items()}


def save_idf_table(table: Mapping[str, float], path: str | Path) -> None:
    """Write "term<TAB>weight" lines, UTF-8, sorted by term."""
    with open(path, "w", encoding="utf-8") as fh:
        for term in sorted(table):
            fh.write(f"{term}\t{table[term]!r}\n")


def load_idf_table(path: str | Path) -> dict[str, float]:
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                term, weight = line.split("\t")
                table[term] = float(weight)
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: malformed IDF line") from exc
    return table


# --------------------------------------------------------------------------
# Batch scoring
# --------------------------------------------------------------------------


def score_batch(
    scorer: Callable[[ScorerInput], float],
    inputs: Sequence[ScorerInput],
    parallelism: int = 1,
) -> list[float]:
    """Score each input independently; results are positionally aligned and
    bitwise identical regardless of ``parallelism``."""

    def one(pair: tuple[int, ScorerInput]) -> float:
        idx, inp = pair
        try:
            return scorer(inp)
        except Exception as exc:
            raise ScoringError(idx, str(exc)) from exc

    if parallelism <= 1 or len(inputs) <= 1:
        return [one(p) for p in enumerate(inputs)]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, enumerate(inputs)))


# --------------------------------------------------------------------------
# Binary parameter serialization
# --------------------------------------------------------------------------

_MAGIC = b"LOOP1"


def save_params(params: ScorerParams, path: str | Path) -> None:
    """Flat binary: magic, (dim, heads, bucket_count) as little-endian u32,
    then row-major float64 arrays in declared field order."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", params.dim, params.heads, params.bucket_count))
        for arr in (
            params.embedding_table,
            params.pooling_queries,
            params.output_projection,
            params.head_weights,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", params.head_bias))


def load_params(path: str | Path) -> ScorerParams:
    data = Path(path).read_bytes()
    if data[:5] != _MAGIC:
        raise ValueError(f"{path}: bad magic, not a scorer parameter file")
    dim, heads, buckets = struct.unpack_from("<III", data, 5)
    offset = 5 + 12

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        return arr.astype(np.float64)

    emb = take((buckets, dim))
    queries = take((heads, dim))
    proj = take((heads * dim, dim))
    weights = take((dim,))
    (bias,) = struct.unpack_from("<d", data, offset)
    offset += 8
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in parameter file")
    return ScorerParams(
        embedding_table=emb,
        pooling_queries=queries,
        output_projection=proj,
        head_weights=weights,
        head_bias=float(bias),
        dim=dim,
        heads=heads,
    )
