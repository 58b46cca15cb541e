"""Draft / verify speculative decoding and the moving-average baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lm_core import SamplingConfig, apply_sampling_filters, sample_token, sample_tokens


@dataclass
class DraftedToken:
    token_id: int
    draft_prob: float
    draft_dist: np.ndarray = field(repr=False)
    position: int


@dataclass
class VerifyOutcome:
    accepted_count: int
    correction_token: int
    per_position_accept_prob: list[float]
    accepted_tokens: list[int]

    @property
    def emitted(self) -> list[int]:
        """Tokens appended to the sequence this step (accepted + correction)."""
        return self.accepted_tokens + [self.correction_token]


def residual_distribution(p_target, p_draft) -> np.ndarray:
    """normalize(max(0, P_t - P_d)); raises if P_t does not exceed P_d anywhere."""
    diff = np.maximum(0.0, np.asarray(p_target, dtype=np.float64) - np.asarray(p_draft, dtype=np.float64))
    total = diff.sum()
    if not total > 0:
        raise ValueError("residual distribution is identically zero (P_t == P_d)")
    return diff / total


def draft_tokens(draft_model, context: Sequence[int], draft_len: int, cfg: SamplingConfig,
                 rng: np.random.Generator) -> list[DraftedToken]:
    if draft_len < 1:
        raise ValueError("draft_len must be >= 1")
    ctx = list(context)
    out = []
    for i in range(1, draft_len + 1):
        dist = apply_sampling_filters(draft_model.next_dist(ctx), cfg)
        tok = sample_token(dist, rng)
        out.append(DraftedToken(token_id=tok, draft_prob=float(dist[tok]), draft_dist=dist, position=i))
        ctx.append(tok)
    return out


def verify_and_correct(target_model, context: Sequence[int], drafted: Sequence[DraftedToken], verify_len: int,
                       cfg: SamplingConfig, rng: np.random.Generator, full_oracle: bool = False) -> VerifyOutcome:
    """Verify the first ``verify_len`` drafted tokens against the target.

    Token i is kept with probability min(1, P_t/P_d). The first rejection is
    replaced by a draw from the residual distribution; if every verified token
    survives, a bonus token is drawn from P_t. ``verify_len == 0`` is plain
    target decoding of one token.

    ``per_position_accept_prob`` covers positions up to the first rejection;
    with ``full_oracle`` it is extended over the whole verified prefix, still
    conditioning on the drafted tokens.
    """
    if not 0 <= verify_len <= len(drafted):
        raise ValueError(f"verify_len {verify_len} outside [0, {len(drafted)}]")
    ctx = list(context)
    accepted: list[int] = []
    ratios: list[float] = []
    for d in drafted[:verify_len]:
        p_t = apply_sampling_filters(target_model.next_dist(ctx), cfg)
        ratio = min(1.0, p_t[d.token_id] / d.draft_prob)
        ratios.append(ratio)
        if rng.random() < ratio:
            accepted.append(d.token_id)
            ctx.append(d.token_id)
            continue
        correction = sample_token(residual_distribution(p_t, d.draft_dist), rng)
        if full_oracle:
            ratios.extend(_remaining_ratios(target_model, ctx, d, drafted[d.position:verify_len], cfg))
        return VerifyOutcome(len(accepted), correction, ratios, accepted)
    p_t = apply_sampling_filters(target_model.next_dist(ctx), cfg)
    return VerifyOutcome(len(accepted), sample_token(p_t, rng), ratios, accepted)


def _remaining_ratios(target_model, ctx, rejected, rest, cfg):
    # oracle values for positions after a rejection, on the drafted context
    ctx = ctx + [rejected.token_id]
    out = []
    for d in rest:
        p_t = apply_sampling_filters(target_model.next_dist(ctx), cfg)
        out.append(min(1.0, p_t[d.token_id] / d.draft_prob))
        ctx.append(d.token_id)
    return out


def speculative_sample(p_draft, p_target, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised single-position draft-then-verify for fixed distributions.

    Returns ``n`` emitted tokens. Uses the same acceptance and residual rules
    as :func:`verify_and_correct` with ``verify_len=1``; the emitted token is
    either the accepted draft or the residual correction.
    """
    p_draft = np.asarray(p_draft, dtype=np.float64)
    p_target = np.asarray(p_target, dtype=np.float64)
    drafts = sample_tokens(p_draft, rng.random(n))
    ratio = np.minimum(1.0, p_target[drafts] / p_draft[drafts])
    accept = rng.random(n) < ratio
    out = drafts.copy()
    n_rej = int((~accept).sum())
    if n_rej:
        out[~accept] = sample_tokens(residual_distribution(p_target, p_draft), rng.random(n_rej))
    return out


@dataclass
class MovingAverageState:
    ema: float = 0.0
    alpha_ema: float = 0.3

    def __post_init__(self):
        if not 0 < self.alpha_ema <= 1:
            raise ValueError("alpha_ema must lie in (0, 1]")


def ema_predict_update(state: MovingAverageState, observed_accepted: float) -> tuple[float, MovingAverageState]:
    prediction = state.ema
    new = state.alpha_ema * observed_accepted + (1.0 - state.alpha_ema) * state.ema
    return prediction, MovingAverageState(ema=new, alpha_ema=state.alpha_ema)
