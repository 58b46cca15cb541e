"""Trace analyses: fairness, verification waste, throughput breakdowns."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..scheduler import LatencyModel, expected_accepted
from ..spec_decode import MovingAverageState, ema_predict_update
from .scenario import OracleScenario
from .simulate import StepRecord


@dataclass
class QueryFairness:
    query_id: int
    steps: int
    avg_gamma: float
    histogram: list[int]  # index g -> number of steps verifying g tokens


@dataclass
class FairnessReport:
    draft_len: int
    queries: list[QueryFairness]
    overall_avg_gamma: float

    def bottom(self, k: int = 5) -> list[QueryFairness]:
        return sorted(self.queries, key=lambda q: (q.avg_gamma, q.query_id))[:k]

    def top(self, k: int = 5) -> list[QueryFairness]:
        return sorted(self.queries, key=lambda q: (-q.avg_gamma, q.query_id))[:k]

    def columns(self) -> list[str]:
        return ["case", "query_id", "avg_gamma", "steps"] + [f"gamma_{g}" for g in range(self.draft_len + 1)]

    def rows(self, k: int = 5) -> list[list]:
        out = []
        for case, qs in (("worst", self.bottom(k)), ("best", self.top(k)), ("all", self.queries)):
            for q in qs:
                out.append([case, q.query_id, round(q.avg_gamma, 6), q.steps] + q.histogram)
        return out

    def write_csv(self, path, k: int = 5) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.columns())
            w.writerows(self.rows(k))
            w.writerow(["overall", "", round(self.overall_avg_gamma, 6), sum(q.steps for q in self.queries)]
                       + [""] * (self.draft_len + 1))


def fairness_report(trace: Sequence[StepRecord], draft_len: Optional[int] = None) -> FairnessReport:
    """Per-query verification-length averages and histograms."""
    by_q: dict[int, list[int]] = defaultdict(list)
    for r in trace:
        by_q[r.query_id].append(r.gamma)
    k = draft_len if draft_len is not None else max((r.gamma for r in trace), default=0)
    queries = []
    for q in sorted(by_q):
        gs = by_q[q]
        hist = np.bincount(gs, minlength=k + 1)[: k + 1].tolist()
        queries.append(QueryFairness(q, len(gs), sum(gs) / len(gs), hist))
    all_g = [r.gamma for r in trace]
    return FairnessReport(k, queries, sum(all_g) / len(all_g) if all_g else 0.0)


def _steps(trace: Sequence[StepRecord]) -> dict[int, list[StepRecord]]:
    steps: dict[int, list[StepRecord]] = defaultdict(list)
    for r in trace:
        steps[r.step].append(r)
    return steps


def waste_report(trace: Sequence[StepRecord], lat: Optional[LatencyModel] = None) -> dict:
    """Share of verified positions that were rejected, and of steps costlier than target decoding.

    A step is costlier when its latency per emitted token exceeds that of
    target decoding the same live batch, ``lat(B) / B``; this part needs
    ``lat`` and is omitted without it.
    """
    verified = sum(r.gamma for r in trace)
    rejected = sum(r.gamma - r.accepted for r in trace)
    out = {
        "verified_positions": verified,
        "rejected_positions": rejected,
        "waste_fraction": rejected / verified if verified else 0.0,
    }
    if lat is not None:
        steps = _steps(trace)
        costly = 0
        for rows in steps.values():
            b = len(rows)
            per_token = rows[0].latency / sum(r.emitted for r in rows)
            baseline = lat.latency(b) / b
            if per_token > baseline * (1 + 1e-12):
                costly += 1
        out["steps"] = len(steps)
        out["costlier_steps"] = costly
        out["costlier_step_fraction"] = costly / len(steps) if steps else 0.0
    return out


def throughput_by_accepted(trace: Sequence[StepRecord]) -> list[dict]:
    """Mean per-query throughput, grouped by the number of accepted tokens."""
    groups: dict[int, list[float]] = defaultdict(list)
    for r in trace:
        groups[r.accepted].append(r.emitted / r.latency)
    return [{"accepted": n, "count": len(v), "mean_throughput": float(np.mean(v))} for n, v in sorted(groups.items())]


def compare_predictors(scenario: OracleScenario, profile, n_steps: int, alphas=(0.1, 0.3, 0.5, 0.9),
                       seed: int = 0) -> dict:
    """MSE of accepted-length predictions: profile lookup vs moving averages.

    Each step drafts ``scenario.draft_len`` tokens and verifies all of them.
    The reference is the true expected accepted count E(N | draft_len) from
    the true per-token probabilities. The profile predicts it from its
    looked-up chain; each moving average predicts it from past observed
    accepted counts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE3A]))
    k = scenario.draft_len
    states = {a: MovingAverageState(0.0, a) for a in alphas}
    se_profile = 0.0
    se_ema = {a: 0.0 for a in alphas}
    for _ in range(n_steps):
        p, s, a = scenario.draw(rng)
        truth = expected_accepted(p, k)
        pred = expected_accepted(profile.predict(np.column_stack([s, a])), k)
        se_profile += (pred - truth) ** 2
        n = 0
        while n < k and rng.random() < p[n]:
            n += 1
        for alpha in alphas:
            guess, states[alpha] = ema_predict_update(states[alpha], n)
            se_ema[alpha] += (guess - truth) ** 2
    return {"profile": se_profile / n_steps, "ema": {a: v / n_steps for a, v in se_ema.items()}}
