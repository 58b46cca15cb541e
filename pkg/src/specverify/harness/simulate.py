"""Batch simulation of target decoding, SD and SV under a latency model."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..indicators import compute_indicators, divergence
from ..lm_core import (SAMPLING_PRESETS, NGramModel, SamplingConfig, apply_sampling_filters, tokenize)
from ..profiler import AcceptanceProfile, ProfileRecord
from ..scheduler import LatencyModel, batch_schedule, default_latency
from ..spec_decode import draft_tokens, verify_and_correct
from .corpus import sample_prompts
from .scenario import OracleScenario

MODES = ("target", "sd", "sv", "sv-oracle")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Unusable input data: vocabulary mismatch, corrupt files (exit code 3)."""


def substream(seed: int, query_id: int, step: int) -> np.random.Generator:
    """Independent RNG per (run seed, query, step); worker-count agnostic."""
    return np.random.default_rng(np.random.SeedSequence([seed, query_id, step]))


@dataclass
class RunConfig:
    mode: str = "sv"
    draft_len: int = 5
    batch_size: int = 1
    max_new_tokens: int = 64
    max_steps: Optional[int] = None
    seed: int = 0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    latency: LatencyModel = field(default_factory=default_latency)
    bonus: bool = True
    workers: int = 1
    # n-gram backend
    draft_model: Optional[str] = None
    companion_model: Optional[str] = None
    target_model: Optional[str] = None
    corpus: Optional[str] = None
    tokenizer: str = "char"
    prompt_len: int = 16
    # either backend
    profile: Optional[str] = None
    # synthetic backend
    scenario: Optional[OracleScenario] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.draft_len < 1:
            raise ConfigError("draft_len must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "RunConfig":
        d = dict(d)
        base_dir = Path(base_dir) if base_dir is not None else Path(".")
        known = set(cls.__dataclass_fields__)
        models = d.pop("models", None)
        if models:
            for role in ("draft", "companion", "target"):
                if role in models:
                    d[f"{role}_model"] = models[role]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            sampling = d.get("sampling")
            if isinstance(sampling, str):
                if sampling not in SAMPLING_PRESETS:
                    raise ConfigError(f"unknown sampling preset {sampling!r}")
                d["sampling"] = SAMPLING_PRESETS[sampling]
            elif sampling is not None:
                d["sampling"] = SamplingConfig.from_dict(sampling)
            lat = d.get("latency")
            if isinstance(lat, str):
                d["latency"] = LatencyModel.load(_resolve(lat, base_dir))
            elif lat is not None:
                d["latency"] = LatencyModel.from_dict(lat)
            if d.get("scenario") is not None:
                sc = dict(d["scenario"])
                sc.setdefault("draft_len", d.get("draft_len", 5))
                d["scenario"] = OracleScenario.from_dict(sc)
        except (TypeError, ValueError, OSError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        for key in ("draft_model", "companion_model", "target_model", "corpus", "profile"):
            if d.get(key) is not None:
                d[key] = str(_resolve(d[key], base_dir))
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.check_files()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    def check_files(self) -> None:
        for key in ("draft_model", "companion_model", "target_model", "corpus", "profile"):
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key} file not found: {p}")
        if self.scenario is None:
            needed = ["target_model", "corpus"]
            if self.mode != "target":
                needed.append("draft_model")
            if self.mode == "sv":
                needed += ["companion_model", "profile"]
            missing = [k for k in needed if getattr(self, k) is None]
            if missing:
                raise ConfigError(f"mode {self.mode!r} needs {missing}")
        elif self.mode == "sv" and self.profile is None:
            raise ConfigError("sv mode needs a profile")


def _resolve(p: str, base_dir: Path) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base_dir / path


@dataclass
class StepRecord:
    step: int
    query_id: int
    mode: str
    gamma: int
    accepted: int
    latency: float
    s: list = field(default_factory=list)
    a: list = field(default_factory=list)
    tokens: tuple = ()

    @property
    def emitted(self) -> int:
        return self.accepted + 1


@dataclass
class _Prep:
    rng: np.random.Generator
    chain: Optional[np.ndarray] = None
    s: list = field(default_factory=list)
    a: list = field(default_factory=list)
    payload: object = None


class NGramBackend:
    """Draft / companion / target n-gram trio decoding real token streams."""

    def __init__(self, draft: Optional[NGramModel], target: NGramModel, companion: Optional[NGramModel] = None,
                 profile: Optional[AcceptanceProfile] = None, sampling: SamplingConfig = SamplingConfig(),
                 draft_len: int = 5):
        vocabs = [m.vocabulary_ for m in (draft, companion, target) if m is not None]
        if any(v != vocabs[0] for v in vocabs[1:]):
            raise DataError("draft, companion and target vocabularies differ")
        self.draft, self.target, self.companion = draft, target, companion
        self.profile = profile
        self.sampling = sampling
        self.draft_len = draft_len
        self.vocabulary = target.vocabulary_
        self.contexts: dict[int, list[int]] = {}

    def start(self, query_id: int, prompt: Sequence[int]) -> None:
        self.contexts[query_id] = list(prompt)

    def output(self, query_id: int, prompt_len: int) -> list[int]:
        return self.contexts[query_id][prompt_len:]

    def prepare(self, query_id: int, mode: str, rng: np.random.Generator) -> _Prep:
        prep = _Prep(rng)
        if mode == "target":
            return prep
        ctx = self.contexts[query_id]
        drafted = draft_tokens(self.draft, ctx, self.draft_len, self.sampling, rng)
        prep.payload = drafted
        if mode == "sv":
            run = list(ctx)
            chain = np.empty(len(drafted))
            for i, d in enumerate(drafted):
                p_c = apply_sampling_filters(self.companion.next_dist(run), self.sampling)
                s, a = compute_indicators(d.draft_dist, p_c, d.token_id)
                prep.s.append(s)
                prep.a.append(a)
                chain[i] = self.profile.lookup(s, a)
                run.append(d.token_id)
            prep.chain = chain
        elif mode == "sv-oracle":
            run = list(ctx)
            chain = np.empty(len(drafted))
            for i, d in enumerate(drafted):
                p_t = apply_sampling_filters(self.target.next_dist(run), self.sampling)
                chain[i] = min(1.0, p_t[d.token_id] / d.draft_prob)
                run.append(d.token_id)
            prep.chain = chain
        return prep

    def verify(self, query_id: int, prep: _Prep, gamma: int) -> tuple[int, tuple]:
        ctx = self.contexts[query_id]
        drafted = prep.payload or []
        out = verify_and_correct(self.target, ctx, drafted, gamma, self.sampling, prep.rng)
        ctx.extend(out.emitted)
        return out.accepted_count, tuple(out.emitted)


class OracleBackend:
    """Synthetic backend: acceptance is Bernoulli in a known true probability."""

    def __init__(self, scenario: OracleScenario, profile: Optional[AcceptanceProfile] = None, draft_len: int = 5):
        self.scenario = scenario
        self.profile = profile
        self.draft_len = draft_len

    def start(self, query_id: int, prompt=None) -> None:
        pass

    def prepare(self, query_id: int, mode: str, rng: np.random.Generator) -> _Prep:
        prep = _Prep(rng)
        if mode == "target":
            return prep
        p, s, a = self.scenario.draw(rng, self.draft_len)
        prep.payload = p
        if mode == "sv":
            prep.s, prep.a = s.tolist(), a.tolist()
            prep.chain = np.array([self.profile.lookup(si, ai) for si, ai in zip(prep.s, prep.a)])
        elif mode == "sv-oracle":
            prep.chain = p
        return prep

    def verify(self, query_id: int, prep: _Prep, gamma: int) -> tuple[int, tuple]:
        n = 0
        for i in range(gamma):
            if prep.rng.random() < prep.payload[i]:
                n += 1
            else:
                break
        return n, ()


def run_simulation(cfg: RunConfig, queries: Optional[Sequence[Sequence[int]]] = None, backend=None,
                   ) -> tuple[list[StepRecord], dict]:
    """Run ``cfg.batch_size`` queries to completion; returns (trace, summary).

    Every step drafts for each live query, picks verification lengths (0 for
    target decoding, ``draft_len`` for SD, the greedy batch schedule for SV),
    verifies and charges ``latency(sum(gamma_q + 1))`` for the step. A query
    leaves the batch once it has produced ``max_new_tokens`` tokens.
    """
    if backend is None:
        backend = build_backend(cfg)
    if cfg.mode == "sv" and getattr(backend, "profile", None) is None:
        raise ConfigError("sv mode needs an acceptance profile")
    n_queries = cfg.batch_size if queries is None else len(queries)
    if queries is None and isinstance(backend, NGramBackend):
        queries = default_prompts(cfg, backend, n_queries)
    for q in range(n_queries):
        backend.start(q, None if queries is None else queries[q])
    generated = [0] * n_queries
    live = list(range(n_queries))
    trace: list[StepRecord] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    mapper = pool.map if pool else map
    step = 0
    try:
        while live and (cfg.max_steps is None or step < cfg.max_steps):
            preps = list(mapper(lambda q: backend.prepare(q, cfg.mode, substream(cfg.seed, q, step)), live))
            if cfg.mode == "target":
                gammas = [0] * len(live)
            elif cfg.mode == "sd":
                gammas = [cfg.draft_len] * len(live)
            else:
                gammas = batch_schedule([p.chain for p in preps], cfg.latency, cfg.bonus).gammas
            outs = list(mapper(lambda item: backend.verify(*item), zip(live, preps, gammas)))
            latency = cfg.latency.latency(sum(g + 1 for g in gammas))
            still = []
            for q, prep, g, (n_acc, toks) in zip(live, preps, gammas, outs):
                trace.append(StepRecord(step, q, cfg.mode, g, n_acc, latency, prep.s, prep.a, toks))
                generated[q] += n_acc + 1
                if generated[q] < cfg.max_new_tokens:
                    still.append(q)
            live = still
            step += 1
    finally:
        if pool:
            pool.shutdown()
    return trace, summarize(trace)


def default_prompts(cfg: RunConfig, backend: NGramBackend, n: int) -> list[list[int]]:
    text = Path(cfg.corpus).read_text(encoding="utf-8")
    try:
        ids = backend.vocabulary.encode(tokenize(text, cfg.tokenizer))
    except KeyError as exc:
        raise DataError(f"corpus token outside model vocabulary: {exc}") from exc
    return sample_prompts(ids, n, cfg.prompt_len, cfg.seed)


def build_backend(cfg: RunConfig):
    try:
        profile = AcceptanceProfile.load(cfg.profile) if cfg.profile else None
        if cfg.scenario is not None:
            return OracleBackend(cfg.scenario, profile, cfg.draft_len)
        target = NGramModel.load(cfg.target_model)
        draft = NGramModel.load(cfg.draft_model) if cfg.draft_model else None
        companion = NGramModel.load(cfg.companion_model) if cfg.companion_model else None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load model/profile: {exc}") from exc
    return NGramBackend(draft, target, companion, profile, cfg.sampling, cfg.draft_len)


def summarize(trace: Sequence[StepRecord]) -> dict:
    """Goodput, mean accepted length and verification waste of a trace."""
    step_latency: dict[int, float] = {}
    tokens = accepted = verified = 0
    for r in trace:
        step_latency[r.step] = r.latency
        tokens += r.emitted
        accepted += r.accepted
        verified += r.gamma
    total_latency = sum(step_latency.values())
    return {
        "goodput": tokens / total_latency if total_latency > 0 else 0.0,
        "mean_accepted": accepted / len(trace) if trace else 0.0,
        "waste_fraction": (verified - accepted) / verified if verified else 0.0,
        "steps": len(step_latency),
        "tokens": tokens,
        "latency_total": total_latency,
    }


# -- trace files --------------------------------------------------------------

def trace_columns(draft_len: int) -> list[str]:
    return (["step", "query_id", "mode", "gamma", "accepted", "latency_model_s"]
            + [f"s_{i}" for i in range(1, draft_len + 1)] + [f"a_{i}" for i in range(1, draft_len + 1)])


def write_trace(trace: Sequence[StepRecord], path, draft_len: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(trace_columns(draft_len))
        for r in trace:
            s = [repr(float(v)) for v in r.s] + [""] * (draft_len - len(r.s))
            a = [repr(float(v)) for v in r.a] + [""] * (draft_len - len(r.a))
            w.writerow([r.step, r.query_id, r.mode, r.gamma, r.accepted, repr(float(r.latency))] + s + a)


def read_trace(path) -> tuple[list[StepRecord], int]:
    """Parse a trace CSV; returns (records, draft_len)."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty trace file {path}") from None
        k = sum(1 for h in header if h.startswith("s_"))
        if header != trace_columns(k):
            raise DataError(f"unexpected trace header in {path}")
        out = []
        for row in reader:
            try:
                s = [float(v) for v in row[6:6 + k] if v != ""]
                a = [float(v) for v in row[6 + k:6 + 2 * k] if v != ""]
                out.append(StepRecord(int(row[0]), int(row[1]), row[2], int(row[3]), int(row[4]), float(row[5]), s, a))
            except (ValueError, IndexError) as exc:
                raise DataError(f"malformed trace row {row!r}") from exc
    return out, k


# -- profiling runs -----------------------------------------------------------

@dataclass(frozen=True)
class ProfilingObservation:
    s: float
    a: float
    true_accept_prob: float
    accepted: bool
    div_dc: float = math.nan
    div_dt: float = math.nan
    position: int = 0

    def record(self) -> ProfileRecord:
        return ProfileRecord(self.s, self.a, self.true_accept_prob, self.accepted)


OBSERVATION_COLUMNS = ["position", "s", "a", "true_accept_prob", "accepted", "div_dc", "div_dt"]


def profile_ngram(draft: NGramModel, companion: NGramModel, target: NGramModel, prompts: Sequence[Sequence[int]],
                  draft_len: int = 5, sampling: SamplingConfig = SamplingConfig(), seed: int = 0,
                  max_new_tokens: int = 64) -> list[ProfilingObservation]:
    """Run plain SD and record indicators against oracle acceptance.

    For every drafted position the companion and target are evaluated on the
    drafted prefix, giving (S, A), the true acceptance probability
    min(1, P_t/P_d) and both divergences. Positions after a rejection are
    recorded with ``accepted=False``.
    """
    obs: list[ProfilingObservation] = []
    for q, prompt in enumerate(prompts):
        ctx = list(prompt)
        produced = 0
        step = 0
        while produced < max_new_tokens:
            rng = substream(seed, q, step)
            drafted = draft_tokens(draft, ctx, draft_len, sampling, rng)
            out = verify_and_correct(target, ctx, drafted, draft_len, sampling, rng)
            run = list(ctx)
            for i, d in enumerate(drafted):
                p_c = apply_sampling_filters(companion.next_dist(run), sampling)
                p_t = apply_sampling_filters(target.next_dist(run), sampling)
                s, a = compute_indicators(d.draft_dist, p_c, d.token_id)
                obs.append(ProfilingObservation(
                    s, a, min(1.0, float(p_t[d.token_id]) / d.draft_prob), i < out.accepted_count,
                    divergence(d.draft_dist, p_c), divergence(d.draft_dist, p_t), i + 1))
                run.append(d.token_id)
            ctx.extend(out.emitted)
            produced += len(out.emitted)
            step += 1
    return obs


def profile_scenario(scenario: OracleScenario, n_steps: int, seed: int = 0) -> list[ProfilingObservation]:
    """Profiling records from a synthetic scenario (SD with full drafts)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    obs = []
    for _ in range(n_steps):
        p, s, a = scenario.draw(rng)
        alive = True
        for i in range(p.size):
            hit = alive and rng.random() < p[i]
            alive = hit
            obs.append(ProfilingObservation(float(s[i]), float(a[i]), float(p[i]), bool(hit), position=i + 1))
    return obs


def fit_profile(observations: Sequence[ProfilingObservation], n_s_bins: int = 20, n_a_bins: int = 15
                ) -> AcceptanceProfile:
    X = np.array([[o.s, o.a] for o in observations], dtype=np.float64)
    y = np.array([o.true_accept_prob for o in observations], dtype=np.float64)
    return AcceptanceProfile(n_s_bins, n_a_bins).fit(X, y)


def write_observations(observations: Sequence[ProfilingObservation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(OBSERVATION_COLUMNS)
        for o in observations:
            w.writerow([o.position, repr(o.s), repr(o.a), repr(o.true_accept_prob), int(o.accepted),
                        repr(o.div_dc), repr(o.div_dt)])


def read_observations(path) -> list[ProfilingObservation]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != OBSERVATION_COLUMNS:
            raise DataError(f"unexpected records header in {path}")
        try:
            return [ProfilingObservation(float(r["s"]), float(r["a"]), float(r["true_accept_prob"]),
                                         bool(int(r["accepted"])), float(r["div_dc"]), float(r["div_dt"]),
                                         int(r["position"])) for r in reader]
        except ValueError as exc:
            raise DataError(f"malformed records file {path}: {exc}") from exc
