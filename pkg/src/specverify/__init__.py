"""Speculative verification: companion-guided verification lengths for speculative decoding."""

from .indicators import IndicatorPair, compute_indicators, divergence
from .lm_core import (NGramModel, SamplingConfig, StaticModel, Vocabulary, apply_sampling_filters, next_dist,
                      sample_token, train_ngram)
from .profiler import (AcceptanceProfile, InfoGainReport, ProfileRecord, adaptive_edges, build_profile,
                       correlation_report, info_gain_report, lookup_acceptance)
from .scheduler import (GoodputScheduler, LatencyModel, ScheduleDecision, batch_schedule, expected_accepted,
                        goodput, optimal_gamma, p_gamma_n)
from .spec_decode import (DraftedToken, MovingAverageState, VerifyOutcome, draft_tokens, ema_predict_update,
                          residual_distribution, verify_and_correct)

__version__ = "0.1.0"
