"""Goodput-driven choice of verification lengths."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

# Relative slack under which two goodput values count as equal.
TIE_RTOL = 1e-12


class LatencyModel:
    """Step latency as a function of the number of verified positions.

    Parametric form: ``base`` up to ``knee`` positions, then ``slope`` seconds
    per extra position. A measured ``table`` {n: seconds} overrides it, with
    linear interpolation between points, constant extrapolation below the
    smallest n and linear extrapolation (last segment's slope) above the
    largest.
    """

    def __init__(self, base: float = 1.0, knee: int = 0, slope: float = 0.0, table: Optional[dict] = None):
        if not base > 0:
            raise ValueError("base must be positive")
        if knee < 0 or slope < 0:
            raise ValueError("knee and slope must be non-negative")
        self.base = float(base)
        self.knee = int(knee)
        self.slope = float(slope)
        self.table = None
        if table:
            pts = sorted((int(k), float(v)) for k, v in table.items())
            xs = np.array([p[0] for p in pts], dtype=np.float64)
            ys = np.array([p[1] for p in pts], dtype=np.float64)
            if np.any(np.diff(ys) < 0):
                raise ValueError("measured latency table must be non-decreasing")
            self.table = (xs, ys)

    def __call__(self, n: float) -> float:
        return self.latency(n)

    def latency(self, n: float) -> float:
        if self.table is None:
            return self.base + self.slope * max(0.0, n - self.knee)
        xs, ys = self.table
        if n <= xs[0]:
            return float(ys[0])
        if n >= xs[-1]:
            tail = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) if xs.size > 1 else 0.0
            return float(ys[-1] + tail * (n - xs[-1]))
        return float(np.interp(n, xs, ys))

    def to_dict(self) -> dict:
        if self.table is not None:
            return {"table": {str(int(x)): float(y) for x, y in zip(*self.table)}}
        return {"base": self.base, "knee": self.knee, "slope": self.slope}

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyModel":
        if "table" in d:
            table = d["table"]
            return cls(base=max(min(table.values()), 1e-12), table=table)
        if set(d) - {"base", "knee", "slope"}:
            raise ValueError(f"unknown latency model keys {sorted(set(d) - {'base', 'knee', 'slope'})}")
        return cls(base=float(d.get("base", 1.0)), knee=int(d.get("knee", 0)), slope=float(d.get("slope", 0.0)))

    @classmethod
    def load(cls, path) -> "LatencyModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __repr__(self) -> str:
        if self.table is not None:
            return f"LatencyModel(table={len(self.table[0])} points)"
        return f"LatencyModel(base={self.base}, knee={self.knee}, slope={self.slope})"


# A GPU-like default: 20 ms per step, flat up to 64 positions, then 0.25 ms
# per extra position.
DEFAULT_LATENCY = {"base": 0.020, "knee": 64, "slope": 0.00025}


def default_latency() -> LatencyModel:
    return LatencyModel.from_dict(DEFAULT_LATENCY)


def _check_chain(chain) -> np.ndarray:
    p = np.asarray(chain, dtype=np.float64)
    if p.ndim != 1 or np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("acceptance chain must be a 1-D vector in [0, 1]")
    return p


def p_gamma_n(chain, gamma: int, n: int) -> float:
    """P(N = n | gamma): n leading acceptances, then a rejection unless n = gamma."""
    p = _check_chain(chain)
    if not 0 <= gamma <= p.size:
        raise ValueError("gamma outside [0, len(chain)]")
    if not 0 <= n <= gamma:
        raise ValueError("n must satisfy 0 <= n <= gamma")
    head = float(np.prod(p[:n]))
    return head if n == gamma else head * (1.0 - p[n])


def expected_accepted(chain, gamma: int) -> float:
    """E(N | gamma) via the prefix-product identity sum_k prod_{i<=k} p_i."""
    p = _check_chain(chain)
    if not 0 <= gamma <= p.size:
        raise ValueError("gamma outside [0, len(chain)]")
    if gamma == 0:
        return 0.0
    # sequential sum keeps the result monotone in gamma to the last ulp
    return float(np.cumsum(np.cumprod(p[:gamma]))[-1])


def goodput(chain, gamma: int, lat: LatencyModel, bonus: bool = True) -> float:
    """Expected emitted tokens per second for one query verifying ``gamma`` drafts.

    The target pass covers gamma + 1 positions; with ``bonus`` the numerator
    counts the correction/bonus token every step emits.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return (expected_accepted(chain, gamma) + (1.0 if bonus else 0.0)) / lat.latency(gamma + 1)


def _cmp(new: float, old: float) -> int:
    if abs(new - old) <= TIE_RTOL * max(abs(new), abs(old)):
        return 0
    return 1 if new > old else -1


def optimal_gamma(chain, lat: LatencyModel, bonus: bool = True) -> tuple[int, float]:
    """Grow gamma while goodput improves; on the first decline take the last best.

    Equal goodput keeps scanning; the smaller gamma of a plateau is kept.
    """
    p = _check_chain(chain)
    if p.size == 0:
        raise ValueError("empty chain")
    extra = 1.0 if bonus else 0.0
    cum = np.concatenate([[0.0], np.cumsum(np.cumprod(p))])
    best_g, best = 0, extra / lat.latency(1)
    prev = best
    for g in range(1, p.size + 1):
        cur = (cum[g] + extra) / lat.latency(g + 1)
        c = _cmp(cur, prev)
        if c < 0:
            break
        if c > 0:
            best_g, best = g, cur
        prev = cur
    return best_g, float(best)


@dataclass
class ScheduleDecision:
    gammas: list[int]
    predicted_expected_accepted: float
    predicted_latency: float
    predicted_goodput: float
    trace: list[tuple[int, int, float, float]] = field(default_factory=list, repr=False)
    """Accepted greedy additions as (query, new gamma, marginal gain, goodput)."""

    @property
    def predicted_tokens(self) -> float:
        return self.predicted_expected_accepted + len(self.gammas)


def batch_schedule(chains: Sequence, lat: LatencyModel, bonus: bool = True) -> ScheduleDecision:
    """Greedy batch-wide choice of verification lengths.

    Starts from gamma_q = 0 for every query and repeatedly extends the query
    whose next drafted token has the largest marginal gain in expected
    accepted length (the prefix product up to that token; lower query id wins
    ties). Stops as soon as an extension would not strictly raise predicted
    goodput. Latency is evaluated on total positions sum(gamma_q + 1).
    """
    if len(chains) == 0:
        raise ValueError("need at least one query")
    chains = [_check_chain(c) for c in chains]
    prefix = [np.cumprod(c) for c in chains]
    gammas = [0] * len(chains)
    extra = 1.0 if bonus else 0.0
    expected = 0.0
    positions = len(chains)
    cur = (expected + extra * len(chains)) / lat.latency(positions)
    trace = []
    # best-first over each query's next candidate; key (-gain, query id)
    heap = [(-float(pre[0]), q) for q, pre in enumerate(prefix) if pre.size]
    heapq.heapify(heap)
    while heap:
        neg_gain, q = heap[0]
        gain = -neg_gain
        new = (expected + gain + extra * len(chains)) / lat.latency(positions + 1)
        if _cmp(new, cur) <= 0:
            break
        heapq.heappop(heap)
        gammas[q] += 1
        expected += gain
        positions += 1
        cur = new
        trace.append((q, gammas[q], gain, new))
        if gammas[q] < prefix[q].size:
            heapq.heappush(heap, (-float(prefix[q][gammas[q]]), q))
    return ScheduleDecision(gammas, expected, lat.latency(positions), cur, trace)


class GoodputScheduler(BaseEstimator):
    """Estimator-style wrapper: predicts verification lengths for a batch.

    ``predict(chains)`` returns the per-query gamma chosen by
    :func:`batch_schedule` (or per query by :func:`optimal_gamma` when
    ``policy="per_query"``).
    """

    def __init__(self, latency: Optional[LatencyModel] = None, policy: str = "batch", bonus: bool = True):
        self.latency = latency
        self.policy = policy
        self.bonus = bonus

    def fit(self, X=None, y=None):
        self.latency_ = self.latency if self.latency is not None else default_latency()
        if self.policy not in ("batch", "per_query"):
            raise ValueError(f"unknown policy {self.policy!r}")
        return self

    def decide(self, chains) -> ScheduleDecision:
        lat = getattr(self, "latency_", None) or self.fit().latency_
        if self.policy == "batch":
            return batch_schedule(chains, lat, self.bonus)
        gammas = [optimal_gamma(c, lat, self.bonus)[0] for c in chains]
        exp = sum(expected_accepted(c, g) for c, g in zip(chains, gammas))
        positions = sum(g + 1 for g in gammas)
        extra = len(gammas) if self.bonus else 0
        return ScheduleDecision(gammas, exp, lat.latency(positions), (exp + extra) / lat.latency(positions))

    def predict(self, chains) -> np.ndarray:
        return np.asarray(self.decide(chains).gammas, dtype=np.int64)
