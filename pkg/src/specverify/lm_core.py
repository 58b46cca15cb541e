"""Token-distribution models and sampling utilities.

Small n-gram models stand in for the draft, companion and target LLMs.
Every distribution is a dense float64 vector over the shared vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

PROB_ATOL = 1e-9


class Vocabulary:
    """Dense token <-> id mapping; ids follow first appearance."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = []
        self._ids: dict[str, int] = {}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = len(self.tokens)
                self.tokens.append(tok)
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 distinct tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(V={len(self)})"

    def id(self, tok: str) -> int:
        return self._ids[tok]

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        try:
            return np.fromiter((self._ids[t] for t in tokens), dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


def tokenize(text: str, mode: str = "char") -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "whitespace":
        return text.split()
    raise ValueError(f"unknown tokenizer mode {mode!r}")


def detokenize(tokens: Sequence[str], mode: str = "char") -> str:
    return "".join(tokens) if mode == "char" else " ".join(tokens)


def check_dist(p, name: str = "dist") -> np.ndarray:
    """Validate a probability vector and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


def normalize(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        raise ValueError("cannot normalize a vector with no mass")
    return v / total


def _count_windows(ids: np.ndarray, width: int, V: int):
    """Yield (window as list, count) for every distinct length-``width`` window."""
    windows = sliding_window_view(ids, width)
    if V ** width < 2 ** 62:
        # pack each window into one integer; much faster than a row-wise unique
        radix = V ** np.arange(width - 1, -1, -1, dtype=np.int64)
        codes, freq = np.unique(windows @ radix, return_counts=True)
        rows = (codes[:, None] // radix) % V
    else:
        rows, freq = np.unique(windows, axis=0, return_counts=True)
    return zip(rows.tolist(), freq.tolist())


class NGramModel(BaseEstimator):
    """Add-alpha smoothed n-gram model with stupid backoff.

    ``P(t | ctx) = (count(ctx, t) + alpha) / (count(ctx) + alpha * V)`` for
    the longest suffix of the context (at most ``order - 1`` tokens) that was
    seen in training. Unseen contexts back off one order at a time down to
    the unigram table, which always exists.

    Parameters
    ----------
    order : int
        n-gram order; the model conditions on ``order - 1`` previous tokens.
    alpha : float
        Additive smoothing constant, must be positive.
    vocabulary : Vocabulary, optional
        Shared vocabulary. Needed when several models must agree on ids
        but are trained on different corpora. Defaults to the training
        corpus' tokens in order of first appearance.
    """

    def __init__(self, order: int = 2, alpha: float = 0.1, vocabulary: Optional[Vocabulary] = None):
        self.order = order
        self.alpha = alpha
        self.vocabulary = vocabulary

    def fit(self, X: Sequence[str], y=None) -> "NGramModel":
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        tokens = list(X)
        if not tokens:
            raise ValueError("empty corpus")
        if len(tokens) < self.order:
            raise ValueError("corpus shorter than model order")
        self.vocabulary_ = self.vocabulary if self.vocabulary is not None else Vocabulary(tokens)
        ids = self.vocabulary_.encode(tokens)
        V = len(self.vocabulary_)
        # counts_[k] maps a length-k context tuple to its next-token counts
        self.counts_: list[dict[tuple, np.ndarray]] = []
        for k in range(self.order):
            table: dict[tuple, np.ndarray] = {}
            for row, c in _count_windows(ids, k + 1, V):
                ctx = tuple(row[:-1])
                vec = table.get(ctx)
                if vec is None:
                    vec = table[ctx] = np.zeros(V, dtype=np.float64)
                vec[row[-1]] = c
            self.counts_.append(table)
        self._cache: dict[tuple, np.ndarray] = {}
        return self

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary_)

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        """Next-token distribution for a context of token ids.

        Returned arrays are shared with an internal memo and marked read-only.
        """
        k = min(self.order - 1, len(context))
        ctx = tuple(int(t) for t in context[len(context) - k:]) if k else ()
        hit = self._cache.get(ctx)
        if hit is not None:
            return hit
        V = self.vocab_size
        for j in range(k, -1, -1):
            sub = ctx[k - j:]
            counts = self.counts_[j].get(sub)
            if counts is not None:
                dist = (counts + self.alpha) / (counts.sum() + self.alpha * V)
                break
        dist.setflags(write=False)
        self._cache[ctx] = dist
        return dist

    def backoff_level(self, context: Sequence[int]) -> int:
        """Context length actually used by :meth:`next_dist`."""
        k = min(self.order - 1, len(context))
        ctx = tuple(int(t) for t in context[len(context) - k:]) if k else ()
        for j in range(k, -1, -1):
            if ctx[k - j:] in self.counts_[j]:
                return j
        raise AssertionError("unigram table missing")  # pragma: no cover

    def to_dict(self) -> dict:
        check_is_fitted(self, "counts_")
        tables = []
        for table in self.counts_:
            rows = []
            for ctx, vec in table.items():
                nz = np.flatnonzero(vec)
                rows.append([list(ctx), nz.tolist(), vec[nz].astype(np.int64).tolist()])
            tables.append(rows)
        return {
            "format": "specverify.ngram/1",
            "order": self.order,
            "alpha": self.alpha,
            "vocab": list(self.vocabulary_.tokens),
            "counts": tables,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NGramModel":
        if data.get("format") != "specverify.ngram/1":
            raise ValueError("not a serialized n-gram model")
        vocab = Vocabulary(data["vocab"])
        model = cls(order=int(data["order"]), alpha=float(data["alpha"]), vocabulary=vocab)
        model.vocabulary_ = vocab
        V = len(vocab)
        model.counts_ = []
        for rows in data["counts"]:
            table = {}
            for ctx, idx, cnt in rows:
                vec = np.zeros(V, dtype=np.float64)
                vec[idx] = cnt
                table[tuple(ctx)] = vec
            model.counts_.append(table)
        model._cache = {}
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_ngram(corpus: Sequence[str], order: int, alpha: float, vocabulary: Optional[Vocabulary] = None) -> NGramModel:
    return NGramModel(order=order, alpha=alpha, vocabulary=vocabulary).fit(corpus)


def next_dist(model: NGramModel, context: Sequence[int]) -> np.ndarray:
    return model.next_dist(context)


class StaticModel:
    """Context-free model that always returns the same distribution.

    Handy for exercising decoding code against fixed (P_d, P_t) pairs.
    """

    def __init__(self, probs):
        self.probs = check_dist(probs, "probs").copy()
        self.probs.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.probs.size

    def next_dist(self, context) -> np.ndarray:
        return self.probs


@dataclass(frozen=True)
class SamplingConfig:
    """Temperature / top-k / top-p settings applied before sampling."""

    temperature: float = 1.0
    top_k: Optional[int] = None
    top_p: Optional[float] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.temperature == 1.0 and self.top_k is None and (self.top_p is None or self.top_p == 1.0)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SamplingConfig":
        d = d or {}
        return cls(temperature=float(d.get("temperature", 1.0)), top_k=d.get("top_k"), top_p=d.get("top_p"))

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "top_k": self.top_k, "top_p": self.top_p}


# Recommended hyperparameters of the two model families used in the SV
# evaluation (repetition penalty is not modelled).
SAMPLING_PRESETS = {
    "identity": SamplingConfig(),
    "qwen2.5": SamplingConfig(temperature=0.7, top_k=20, top_p=0.8),
    "llama": SamplingConfig(temperature=0.6, top_p=0.9),
}


def apply_sampling_filters(dist, cfg: SamplingConfig) -> np.ndarray:
    """Apply temperature, then top-k, then top-p, then renormalize."""
    p = np.asarray(dist, dtype=np.float64)
    if cfg.is_identity:
        return p
    if cfg.temperature != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(p) / cfg.temperature
        logp -= logp.max()
        p = np.exp(logp)
        p /= p.sum()
    V = p.size
    if (cfg.top_k is not None and cfg.top_k < V) or (cfg.top_p is not None and cfg.top_p < 1.0):
        order = np.argsort(-p, kind="stable")
        keep = np.zeros(V, dtype=bool)
        k = V if cfg.top_k is None else min(cfg.top_k, V)
        kept = order[:k]
        if cfg.top_p is not None and cfg.top_p < 1.0:
            sorted_p = p[kept] / p[kept].sum()
            mass_before = np.cumsum(sorted_p) - sorted_p
            # a token survives while the mass ahead of it is short of top_p
            kept = kept[mass_before < cfg.top_p - 1e-12]
        keep[kept] = True
        p = np.where(keep, p, 0.0)
        total = p.sum()
        assert total > 0, "sampling filters removed all probability mass"
        p /= total
    return p


def sample_token(dist, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one token id."""
    return int(sample_tokens(dist, np.array([rng.random()]))[0])


def sample_tokens(dist, u: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF: map uniforms ``u`` in [0, 1) to token ids."""
    dist = np.asarray(dist, dtype=np.float64)
    cdf = np.cumsum(dist)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    last = int(np.flatnonzero(dist > 0)[-1])
    return np.minimum(idx, last)
