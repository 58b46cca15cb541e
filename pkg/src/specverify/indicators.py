"""Draft/companion alignment indicators."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class IndicatorPair(NamedTuple):
    s: float
    a: float


def compute_indicators(p_draft, p_companion, token: int) -> IndicatorPair:
    """Overlap S = sum(min(P_d, P_c)) and A = min(1, P_c(t) / P_d(t)).

    ``token`` must have been sampleable from ``p_draft``.
    """
    p_draft = np.asarray(p_draft, dtype=np.float64)
    p_companion = np.asarray(p_companion, dtype=np.float64)
    pd_t = p_draft[token]
    if not pd_t > 0:
        raise ValueError(f"token {token} has zero draft probability")
    s = float(np.minimum(p_draft, p_companion).sum())
    a = min(1.0, float(p_companion[token]) / float(pd_t))
    return IndicatorPair(min(s, 1.0), a)


def divergence(p, q) -> float:
    """1 - sum(min(P, Q)), i.e. total variation distance."""
    return max(0.0, 1.0 - float(np.minimum(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)).sum()))
