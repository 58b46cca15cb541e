"""Command line entry point: ``specverify {make-corpus,train,profile,run,analyze}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..lm_core import SAMPLING_PRESETS, NGramModel, SamplingConfig, Vocabulary, tokenize
from ..profiler import correlation_report, info_gain_table, write_info_gain_csv
from ..scheduler import LatencyModel
from .corpus import sample_prompts, synthetic_corpus
from .reports import fairness_report, throughput_by_accepted, waste_report
from .scenario import OracleScenario
from .simulate import (ConfigError, DataError, RunConfig, fit_profile, profile_ngram, profile_scenario,
                       read_observations, read_trace, run_simulation, write_observations, write_trace)

log = logging.getLogger("specverify")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _read_corpus(path, mode):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    tokens = tokenize(text, mode)
    if not tokens:
        raise DataError(f"corpus {path} is empty")
    return tokens


def cmd_make_corpus(args):
    text = synthetic_corpus(args.chars, seed=args.seed)
    Path(args.out).write_text(text, encoding="utf-8")
    log.info("wrote %d characters to %s", len(text), args.out)


def cmd_train(args):
    tokens = _read_corpus(args.corpus, args.tokenizer)
    vocab = Vocabulary(tokens)
    half = len(tokens) // 2
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = {
        "draft": (args.draft_order, tokens[:half]),
        "companion": (args.companion_order, tokens[half:]),
        "target": (args.target_order, tokens),
    }
    for role, (order, toks) in plan.items():
        try:
            model = NGramModel(order=order, alpha=args.alpha, vocabulary=vocab).fit(toks)
        except ValueError as exc:
            raise ConfigError(f"{role}: {exc}") from exc
        model.save(out / f"{role}.json")
        log.info("%s: order %d on %d tokens (V=%d)", role, order, len(toks), len(vocab))
    (out / "models.json").write_text(json.dumps({
        "tokenizer": args.tokenizer, "alpha": args.alpha, "corpus": str(args.corpus),
        "draft": "draft.json", "companion": "companion.json", "target": "target.json"}, indent=1))


def _sampling(args) -> SamplingConfig:
    if args.sampling in SAMPLING_PRESETS:
        return SAMPLING_PRESETS[args.sampling]
    raise ConfigError(f"unknown sampling preset {args.sampling!r}")


def cmd_profile(args):
    if args.scenario:
        try:
            scenario = OracleScenario.from_dict(json.loads(Path(args.scenario).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad scenario file: {exc}") from exc
        obs = profile_scenario(scenario, args.steps, seed=args.seed)
        meta = {"scenario": scenario.to_dict()}
    else:
        if not args.models or not args.corpus:
            raise ConfigError("profile needs --models and --corpus (or --scenario)")
        mdir = Path(args.models)
        try:
            draft, companion, target = (NGramModel.load(mdir / f"{r}.json") for r in ("draft", "companion", "target"))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load models from {mdir}: {exc}") from exc
        if not (draft.vocabulary_ == companion.vocabulary_ == target.vocabulary_):
            raise DataError("model vocabularies differ")
        tokens = _read_corpus(args.corpus, args.tokenizer)
        try:
            ids = target.vocabulary_.encode(tokens)
        except KeyError as exc:
            raise DataError(str(exc)) from exc
        prompts = sample_prompts(ids, args.prompts, args.prompt_len, args.seed)
        obs = profile_ngram(draft, companion, target, prompts, args.draft_len, _sampling(args), args.seed,
                            args.max_new_tokens)
        meta = {"models": str(mdir), "corpus": str(args.corpus), "draft_len": args.draft_len,
                "sampling": _sampling(args).to_dict()}
    profile = fit_profile(obs, args.s_bins, args.a_bins)
    meta["n_records"] = len(obs)
    profile.save(args.out, meta)
    log.info("profile %dx%d from %d records -> %s", *profile.shape_, len(obs), args.out)
    if args.info_gain:
        records = [o.record() for o in obs]
        reports = info_gain_table(records, x_bins=args.x_bins, n_s_bins=args.s_bins, n_a_bins=args.a_bins)
        write_info_gain_csv(reports, args.info_gain)
    if args.records:
        write_observations(obs, args.records)


def cmd_run(args):
    cfg = RunConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    trace, summary = run_simulation(cfg)
    write_trace(trace, args.trace, cfg.draft_len)
    Path(args.summary).write_text(json.dumps(summary, indent=1, sort_keys=True))
    log.info("%s: goodput %.4f tok/s over %d steps", cfg.mode, summary["goodput"], summary["steps"])


def cmd_analyze(args):
    trace, k = read_trace(args.trace)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lat = None
    if args.latency:
        try:
            lat = LatencyModel.load(args.latency)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad latency model: {exc}") from exc
    fairness_report(trace, k).write_csv(out / "fairness.csv", args.top)
    waste = waste_report(trace, lat)
    with open(out / "waste.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(waste))
        w.writerow(list(waste.values()))
    with open(out / "throughput_by_accepted.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["accepted", "count", "mean_throughput"], lineterminator="\n")
        w.writeheader()
        w.writerows(throughput_by_accepted(trace))
    if args.records:
        obs = read_observations(args.records)
        dc = np.array([o.div_dc for o in obs])
        dt = np.array([o.div_dt for o in obs])
        ok = np.isfinite(dc) & np.isfinite(dt)
        with open(out / "correlation.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["n", "pearson", "spearman"])
            if ok.sum() >= 3:
                r = correlation_report(dc[ok], dt[ok])
                w.writerow([r.n, r.pearson, r.spearman])
            else:
                w.writerow([int(ok.sum()), "nan", "nan"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specverify", description="Speculative verification simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="write a seeded synthetic text corpus")
    p.add_argument("out")
    p.add_argument("--chars", type=int, default=1_100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("train", help="train draft/companion/target n-gram models")
    p.add_argument("corpus")
    p.add_argument("--out-dir", default="models")
    p.add_argument("--tokenizer", choices=["char", "whitespace"], default="char")
    p.add_argument("--draft-order", type=int, default=2)
    p.add_argument("--companion-order", type=int, default=2)
    p.add_argument("--target-order", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="profiling run -> acceptance profile + info-gain report")
    p.add_argument("--models", help="directory written by `train`")
    p.add_argument("--corpus")
    p.add_argument("--scenario", help="synthetic scenario JSON instead of models")
    p.add_argument("--tokenizer", choices=["char", "whitespace"], default="char")
    p.add_argument("--draft-len", type=int, default=5)
    p.add_argument("--prompts", type=int, default=64)
    p.add_argument("--prompt-len", type=int, default=16)
    p.add_argument("--max-new-tokens", type=int, default=128)
    p.add_argument("--steps", type=int, default=20000, help="scenario profiling steps")
    p.add_argument("--sampling", default="identity", help=f"one of {sorted(SAMPLING_PRESETS)}")
    p.add_argument("--s-bins", type=int, default=20)
    p.add_argument("--a-bins", type=int, default=15)
    p.add_argument("--x-bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="profile.json")
    p.add_argument("--info-gain", help="write the entropy / information-gain CSV here")
    p.add_argument("--records", help="write per-token profiling records CSV here")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("run", help="simulate a RunConfig -> trace CSV + summary JSON")
    p.add_argument("config")
    p.add_argument("--trace", default="trace.csv")
    p.add_argument("--summary", default="summary.json")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="fairness / waste / correlation reports from a trace")
    p.add_argument("trace")
    p.add_argument("--records", help="profiling records CSV for the divergence correlation")
    p.add_argument("--latency", help="latency model JSON (enables costlier-step accounting)")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out-dir", default="analysis")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
