"""(S, A) -> acceptance-probability profiles and information-gain analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DEFAULT_S_BINS = 20
DEFAULT_A_BINS = 15


@dataclass(frozen=True)
class ProfileRecord:
    s: float
    a: float
    true_accept_prob: float
    accepted: bool


def records_to_arrays(records: Sequence[ProfileRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into an (n, 2) indicator matrix and a target vector."""
    X = np.array([[r.s, r.a] for r in records], dtype=np.float64).reshape(-1, 2)
    y = np.array([r.true_accept_prob for r in records], dtype=np.float64)
    return X, y


def adaptive_edges(samples, n_bins: int) -> np.ndarray:
    """Equal-frequency bin edges.

    Bins are right-closed ``(e[i], e[i+1]]``. Upper edges are the
    ``k / n_bins`` order statistics, so bins hold about the same number of
    samples; the lower edge sits just below the minimum so that a heavy atom
    at the minimum still gets its own bin. Repeated quantiles collapse,
    leaving at most ``n_bins`` bins (one for a constant sample).
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    cuts = np.unique(np.quantile(x, np.arange(1, n_bins + 1) / n_bins, method="inverted_cdf"))
    return np.concatenate([[np.nextafter(x.min(), -np.inf)], cuts])


def n_bins_of(edges: np.ndarray) -> int:
    return max(1, len(edges) - 1)


def assign_bins(values, edges: np.ndarray) -> np.ndarray:
    """Bin index per value; bins are right-closed, out-of-range values clamp."""
    idx = np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, n_bins_of(edges) - 1)


class AcceptanceProfile(RegressorMixin, BaseEstimator):
    """Mean acceptance probability per (S, A) cell on adaptive bins.

    ``fit(X, y)`` takes an ``(n, 2)`` array of ``(s, a)`` indicator pairs and
    the oracle acceptance probability of each drafted token. ``predict``
    looks a cell up; empty cells fall back to their S-row mean, then to the
    global mean.

    Pass ``s_edges`` / ``a_edges`` to bin on fixed boundaries instead, which
    makes profiles from different runs mergeable.
    """

    def __init__(self, n_s_bins: int = DEFAULT_S_BINS, n_a_bins: int = DEFAULT_A_BINS,
                 s_edges=None, a_edges=None):
        self.n_s_bins = n_s_bins
        self.n_a_bins = n_a_bins
        self.s_edges = s_edges
        self.a_edges = a_edges

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns (s, a)")
        if np.any((y < 0) | (y > 1)):
            raise ValueError("acceptance probabilities must lie in [0, 1]")
        self.s_edges_ = np.asarray(self.s_edges, dtype=np.float64) if self.s_edges is not None \
            else adaptive_edges(X[:, 0], self.n_s_bins)
        self.a_edges_ = np.asarray(self.a_edges, dtype=np.float64) if self.a_edges is not None \
            else adaptive_edges(X[:, 1], self.n_a_bins)
        shape = (n_bins_of(self.s_edges_), n_bins_of(self.a_edges_))
        si = assign_bins(X[:, 0], self.s_edges_)
        ai = assign_bins(X[:, 1], self.a_edges_)
        flat = si * shape[1] + ai
        size = shape[0] * shape[1]
        self.counts_ = np.bincount(flat, minlength=size).reshape(shape).astype(np.int64)
        self.sums_ = np.bincount(flat, weights=y, minlength=size).reshape(shape)
        self._finalize()
        return self

    def _finalize(self):
        total = self.counts_.sum()
        self.n_records_ = int(total)
        self.global_mean_ = float(self.sums_.sum() / total) if total else 0.0
        row_n = self.counts_.sum(axis=1)
        row_mean = np.divide(self.sums_.sum(axis=1), row_n, out=np.full(row_n.shape, self.global_mean_),
                             where=row_n > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = self.sums_ / self.counts_
        self.means_ = np.clip(np.where(self.counts_ > 0, means, row_mean[:, None]), 0.0, 1.0)

    @property
    def shape_(self) -> tuple[int, int]:
        return self.counts_.shape

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=np.float64)
        return self.means_[assign_bins(X[:, 0], self.s_edges_), assign_bins(X[:, 1], self.a_edges_)]

    def lookup(self, s: float, a: float) -> float:
        """Scalar lookup, cheaper than :meth:`predict` for one point."""
        si = min(max(int(np.searchsorted(self.s_edges_, s, side="left")) - 1, 0), self.counts_.shape[0] - 1)
        ai = min(max(int(np.searchsorted(self.a_edges_, a, side="left")) - 1, 0), self.counts_.shape[1] - 1)
        return float(self.means_[si, ai])

    def merge(self, other: "AcceptanceProfile") -> "AcceptanceProfile":
        """Cell-wise sum of two profiles binned on identical edges."""
        check_is_fitted(self, "counts_")
        check_is_fitted(other, "counts_")
        if not (np.array_equal(self.s_edges_, other.s_edges_) and np.array_equal(self.a_edges_, other.a_edges_)):
            raise ValueError("profiles use different bin edges")
        out = AcceptanceProfile(self.n_s_bins, self.n_a_bins, self.s_edges_, self.a_edges_)
        out.s_edges_, out.a_edges_ = self.s_edges_.copy(), self.a_edges_.copy()
        out.counts_ = self.counts_ + other.counts_
        out.sums_ = self.sums_ + other.sums_
        out._finalize()
        return out

    def to_dict(self, meta: Optional[dict] = None) -> dict:
        check_is_fitted(self, "counts_")
        cells = [
            {"si": int(i), "ai": int(j), "count": int(self.counts_[i, j]), "sum": float(self.sums_[i, j])}
            for i, j in zip(*np.nonzero(self.counts_))
        ]
        meta = dict(meta or {})
        meta.setdefault("n_records", self.n_records_)
        return {"s_edges": self.s_edges_.tolist(), "a_edges": self.a_edges_.tolist(), "cells": cells, "meta": meta}

    @classmethod
    def from_dict(cls, data: dict) -> "AcceptanceProfile":
        s_edges = np.asarray(data["s_edges"], dtype=np.float64)
        a_edges = np.asarray(data["a_edges"], dtype=np.float64)
        prof = cls(n_bins_of(s_edges), n_bins_of(a_edges), s_edges, a_edges)
        prof.s_edges_, prof.a_edges_ = s_edges, a_edges
        shape = (n_bins_of(s_edges), n_bins_of(a_edges))
        prof.counts_ = np.zeros(shape, dtype=np.int64)
        prof.sums_ = np.zeros(shape)
        for c in data["cells"]:
            prof.counts_[c["si"], c["ai"]] += int(c["count"])
            prof.sums_[c["si"], c["ai"]] += float(c["sum"])
        prof._finalize()
        prof.meta_ = data.get("meta", {})
        return prof

    def save(self, path, meta: Optional[dict] = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(meta), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AcceptanceProfile":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_profile(records: Sequence[ProfileRecord], n_s_bins: int = DEFAULT_S_BINS,
                  n_a_bins: int = DEFAULT_A_BINS) -> AcceptanceProfile:
    if not records:
        raise ValueError("need at least one profiling record")
    X, y = records_to_arrays(records)
    return AcceptanceProfile(n_s_bins, n_a_bins).fit(X, y)


def lookup_acceptance(profile: AcceptanceProfile, s: float, a: float) -> float:
    return profile.lookup(s, a)


# -- information gain ---------------------------------------------------------

@dataclass
class InfoGainReport:
    resolution: str
    h_x: float
    h_x_given_s: float
    h_x_given_a: float
    h_x_given_sa: float
    i_x_sa: float
    n_records: int = 0
    cells: int = 0

    def row(self) -> dict:
        return {
            "resolution": self.resolution,
            "h_x": self.h_x,
            "h_x_s": self.h_x_given_s,
            "h_x_a": self.h_x_given_a,
            "h_x_sa": self.h_x_given_sa,
            "i_x_sa": self.i_x_sa,
        }


INFO_GAIN_COLUMNS = ["resolution", "h_x", "h_x_s", "h_x_a", "h_x_sa", "i_x_sa"]


def _entropy_bits(labels: np.ndarray, miller_madow: bool = False) -> float:
    _, counts = np.unique(labels, return_counts=True)
    n = counts.sum()
    p = counts / n
    h = float(-(p * np.log2(p)).sum())
    if miller_madow:
        h += (len(counts) - 1) / (2.0 * n * math.log(2))
    return max(h, 0.0)


def conditional_entropy(x_labels, y_labels, miller_madow: bool = False) -> float:
    """Plug-in H(X|Y) in bits: sum over y of P(y) * H(X | Y=y)."""
    x = np.asarray(x_labels)
    y = np.asarray(y_labels)
    order = np.argsort(y, kind="stable")
    y_sorted, x_sorted = y[order], x[order]
    bounds = np.flatnonzero(np.diff(y_sorted)) + 1
    n = x.size
    h = 0.0
    for chunk in np.split(x_sorted, bounds):
        h += chunk.size / n * _entropy_bits(chunk, miller_madow)
    return h


def discretize_equal_width(values, n_bins: int) -> np.ndarray:
    """Equal-width bins on [0, 1]; ``floor(v * n)`` with v = 1 in the last bin."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.floor(v * n_bins).astype(np.int64), 0, n_bins - 1)


Resolution = Union[int, str]


def info_gain_report(records: Union[Sequence[ProfileRecord], tuple], x_bins: int = 10,
                     resolution: Resolution = "adaptive", n_s_bins: int = DEFAULT_S_BINS,
                     n_a_bins: int = DEFAULT_A_BINS, miller_madow: bool = False) -> InfoGainReport:
    """Entropy of the binned acceptance probability and what S, A explain.

    ``resolution`` is either an integer n (n equal-width bins on [0, 1] for S
    and for A) or ``"adaptive"`` (equal-frequency bins, ``n_s_bins`` by
    ``n_a_bins``). ``records`` may also be an ``(X, y)`` pair of arrays.
    """
    if isinstance(records, tuple):
        X, y = records
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    else:
        X, y = records_to_arrays(records)
    if y.size < 2:
        raise ValueError("need at least two records")
    xl = discretize_equal_width(y, x_bins)
    if resolution == "adaptive":
        s_edges = adaptive_edges(X[:, 0], n_s_bins)
        a_edges = adaptive_edges(X[:, 1], n_a_bins)
        sl, al = assign_bins(X[:, 0], s_edges), assign_bins(X[:, 1], a_edges)
        na = n_bins_of(a_edges)
    else:
        n = int(resolution)
        sl, al = discretize_equal_width(X[:, 0], n), discretize_equal_width(X[:, 1], n)
        na = n
    sal = sl * na + al
    cells = int(np.unique(sal).size)
    label = f"adaptive({cells})" if resolution == "adaptive" else f"{int(resolution)}x{int(resolution)}"
    h_x = _entropy_bits(xl, miller_madow)
    h_s = conditional_entropy(xl, sl, miller_madow)
    h_a = conditional_entropy(xl, al, miller_madow)
    h_sa = conditional_entropy(xl, sal, miller_madow)
    return InfoGainReport(label, h_x, h_s, h_a, h_sa, h_x - h_sa, n_records=int(y.size), cells=cells)


def info_gain_table(records, x_bins: int = 10, resolutions: Iterable[Resolution] = (5, 10, 20, "adaptive"),
                    **kwargs) -> list[InfoGainReport]:
    return [info_gain_report(records, x_bins=x_bins, resolution=r, **kwargs) for r in resolutions]


def write_info_gain_csv(reports: Sequence[InfoGainReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=INFO_GAIN_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.row().items()})


# -- correlation --------------------------------------------------------------

class CorrelationReport(NamedTuple):
    pearson: float
    spearman: float
    n: int

    @property
    def defined(self) -> bool:
        return not (math.isnan(self.pearson) or math.isnan(self.spearman))


def correlation_report(x, y) -> CorrelationReport:
    """Pearson and Spearman correlation; NaN when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and the same length")
    if x.size < 3:
        raise ValueError("need at least three pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return CorrelationReport(math.nan, math.nan, int(x.size))
    xc, yc = x - x.mean(), y - y.mean()
    pearson = float((xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc)))
    spearman = float(stats.spearmanr(x, y).statistic)
    return CorrelationReport(pearson, spearman, int(x.size))


def records_as_dicts(records: Iterable[ProfileRecord]) -> list[dict]:
    return [asdict(r) for r in records]
