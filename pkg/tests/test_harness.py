import csv
import math

import numpy as np
import pytest

from specverify.harness.reports import compare_predictors, fairness_report, throughput_by_accepted, waste_report
from specverify.harness.scenario import OracleScenario, generate_oracle_scenario
from specverify.harness.simulate import (ConfigError, DataError, NGramBackend, OracleBackend, RunConfig, StepRecord,
                                         fit_profile, profile_ngram, profile_scenario, read_observations, read_trace,
                                         run_simulation, write_observations, write_trace)
from specverify.lm_core import NGramModel, SamplingConfig, Vocabulary
from specverify.profiler import info_gain_report
from specverify.scheduler import LatencyModel, expected_accepted

LAT = LatencyModel(4, 0, 1)


def tv(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum()


def rec(step, q, gamma, accepted, latency=1.0):
    return StepRecord(step, q, "sv", gamma, accepted, latency)


@pytest.fixture(scope="module")
def oracle_profile():
    return fit_profile(profile_scenario(OracleScenario(), 5000, seed=1))


@pytest.fixture(scope="module")
def trio_profile(small_trio):
    draft, companion, target, ids = small_trio
    prompts = [ids[i:i + 8].tolist() for i in range(0, 4000, 50)]
    return fit_profile(profile_ngram(draft, companion, target, prompts, draft_len=3, seed=0, max_new_tokens=32))


class TestScenario:
    def test_deterministic(self):
        a = list(generate_oracle_scenario({"noise": 0.2}, seed=3, n_steps=20))
        b = list(generate_oracle_scenario({"noise": 0.2}, seed=3, n_steps=20))
        for x, y in zip(a, b):
            for u, v in zip(x, y):
                np.testing.assert_array_equal(u, v)

    def test_noiseless_and_ranges(self):
        for p, s, a in generate_oracle_scenario(OracleScenario(), seed=0, n_steps=50):
            assert set(p) <= {0.05, 0.95} and len(set(p)) == 1
            np.testing.assert_array_equal(s, p)
            np.testing.assert_array_equal(a, p)
        for p, s, a in generate_oracle_scenario({"noise": 0.5, "granularity": "position"}, seed=0, n_steps=50):
            assert np.all((s >= 0) & (s <= 1) & (a >= 0) & (a <= 1))

    def test_roundtrip_inf(self):
        sc = OracleScenario(noise=math.inf)
        d = sc.to_dict()
        assert d["noise"] == "inf"
        assert OracleScenario.from_dict(d) == sc

    @pytest.mark.parametrize("kw", [dict(levels=(1.5,), weights=(1,)), dict(weights=(1,)), dict(noise=-1),
                                    dict(granularity="token")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            OracleScenario(**kw)

    def test_noiseless_info_gain(self):
        obs = profile_scenario(OracleScenario(levels=(0.05, 0.5, 0.95), weights=(1, 1, 1)), 3000, seed=0)
        rep = info_gain_report([o.record() for o in obs], resolution="adaptive")
        assert rep.h_x > 1.0
        assert rep.h_x_given_sa == pytest.approx(0.0, abs=1e-12)

    def test_infinite_noise_collapses(self):
        sc = OracleScenario(noise=math.inf)
        prof = fit_profile(profile_scenario(sc, 20000, seed=0))
        pred = prof.means_[prof.counts_ > 0]
        assert abs(prof.global_mean_ - 0.5) < 0.02
        assert np.abs(pred - prof.global_mean_).max() < 0.15
        cfg = RunConfig(mode="sv", batch_size=1, max_new_tokens=10 ** 9, max_steps=20000, latency=LAT, scenario=sc)
        trace, summary = run_simulation(cfg, backend=OracleBackend(sc, prof, 5))
        freq = np.bincount([r.gamma for r in trace], minlength=6) / len(trace)
        # gamma is chosen blind to p, so each gamma earns its fixed-gamma SD rate
        tokens = [0.5 * (expected_accepted([0.05] * 5, g) + 1) + 0.5 * (expected_accepted([0.95] * 5, g) + 1)
                  for g in range(6)]
        blind = (freq @ tokens) / (freq @ [LAT(g + 1) for g in range(6)])
        assert summary["goodput"] == pytest.approx(blind, rel=0.03)


class TestSimulation:
    def test_target_mode(self, oracle_profile):
        cfg = RunConfig(mode="target", batch_size=1, max_new_tokens=10, latency=LAT, scenario=OracleScenario())
        trace, summary = run_simulation(cfg, backend=OracleBackend(OracleScenario()))
        assert summary["tokens"] == 10 and summary["steps"] == 10
        assert summary["goodput"] == pytest.approx(1 / LAT(1))
        assert all(r.gamma == 0 and r.accepted == 0 for r in trace)

    def test_target_mode_ngram(self, small_trio):
        draft, _, target, ids = small_trio
        cfg = RunConfig(mode="target", batch_size=2, max_new_tokens=10, latency=LAT)
        backend = NGramBackend(None, target)
        trace, summary = run_simulation(cfg, queries=[ids[:8].tolist(), ids[8:16].tolist()], backend=backend)
        assert summary["tokens"] == 20
        assert len(backend.output(0, 8)) == 10
        assert summary["goodput"] == pytest.approx(2 / LAT(2))

    def test_sd_with_identical_models(self, small_trio):
        _, _, target, ids = small_trio
        cfg = RunConfig(mode="sd", draft_len=4, batch_size=3, max_new_tokens=30, latency=LAT)
        trace, summary = run_simulation(cfg, queries=[ids[i:i + 8].tolist() for i in (0, 50, 100)],
                                        backend=NGramBackend(target, target, draft_len=4))
        assert all(r.accepted == 4 for r in trace)
        assert summary["mean_accepted"] == 4 and summary["waste_fraction"] == 0

    def test_sv_oracle_picks_exhaustive_argmax(self, oracle_profile):
        sc = OracleScenario()
        cfg = RunConfig(mode="sv", batch_size=1, max_new_tokens=10 ** 9, max_steps=3000, latency=LAT, scenario=sc)
        trace, sv = run_simulation(cfg, backend=OracleBackend(sc, oracle_profile, 5))
        for r in trace:
            chain = r.s  # noiseless: s equals the true level
            best = max(range(6), key=lambda g: ((expected_accepted(chain, g) + 1) / LAT(g + 1), -g))
            assert r.gamma == best
        sd_cfg = RunConfig(mode="sd", batch_size=1, max_new_tokens=10 ** 9, max_steps=3000, latency=LAT, scenario=sc)
        _, sd = run_simulation(sd_cfg, backend=OracleBackend(sc, oracle_profile, 5))
        assert sv["goodput"] >= sd["goodput"]

    def test_summary_recomputed_from_trace(self, oracle_profile):
        sc = OracleScenario(noise=0.1)
        cfg = RunConfig(mode="sv", batch_size=6, max_new_tokens=40, latency=LAT, scenario=sc)
        trace, summary = run_simulation(cfg, backend=OracleBackend(sc, oracle_profile, 5))
        steps = {}
        for r in trace:
            steps.setdefault(r.step, []).append(r)
            assert 0 <= r.accepted <= r.gamma <= 5
        assert all(len({r.query_id for r in rows}) == len(rows) for rows in steps.values())
        lat_total = sum(LAT(sum(r.gamma + 1 for r in rows)) for rows in steps.values())
        assert summary["goodput"] == pytest.approx(sum(r.accepted + 1 for r in trace) / lat_total, rel=1e-12)
        # each query stops once it reaches max_new_tokens
        per_q = {}
        for r in trace:
            per_q[r.query_id] = per_q.get(r.query_id, 0) + r.emitted
        assert all(40 <= v < 40 + 6 for v in per_q.values())

    def test_workers_do_not_change_trace(self, small_trio, trio_profile, tmp_path):
        draft, companion, target, ids = small_trio
        prompts = [ids[i:i + 8].tolist() for i in range(0, 400, 40)]
        paths = []
        for workers in (1, 4):
            cfg = RunConfig(mode="sv", draft_len=3, batch_size=10, max_new_tokens=20, latency=LAT, workers=workers,
                            seed=5)
            backend = NGramBackend(draft, target, companion, trio_profile, draft_len=3)
            trace, _ = run_simulation(cfg, queries=prompts, backend=backend)
            paths.append(tmp_path / f"t{workers}.csv")
            write_trace(trace, paths[-1], 3)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_vocabulary_mismatch(self, small_trio):
        _, _, target, _ = small_trio
        other = NGramModel(2, 0.1, Vocabulary("xyz")).fit(list("xyzzy"))
        with pytest.raises(DataError):
            NGramBackend(other, target)

    def test_sv_needs_profile(self):
        sc = OracleScenario()
        cfg = RunConfig(mode="sd", scenario=sc)
        cfg.mode = "sv"
        with pytest.raises(ConfigError):
            run_simulation(cfg, backend=OracleBackend(sc, None))


def test_token_stream_equivalence(small_trio, trio_profile):
    """sv-mode output streams follow the target's law (per-position marginals)."""
    draft, companion, target, ids = small_trio
    prompt = ids[:8].tolist()
    exact = np.zeros((3, 5))
    # exact marginals of three target-decoded tokens by enumeration
    p1 = target.next_dist(prompt)
    for a in range(5):
        p2 = target.next_dist(prompt + [a])
        exact[0, a] += p1[a]
        for b in range(5):
            exact[1, b] += p1[a] * p2[b]
            exact[2] += p1[a] * p2[b] * target.next_dist(prompt + [a, b])
    counts = np.zeros((3, 5))
    n_runs, per_run = 5, 20000
    for seed in range(n_runs):
        cfg = RunConfig(mode="sv", draft_len=3, batch_size=per_run, max_new_tokens=3, seed=seed, latency=LAT)
        backend = NGramBackend(draft, target, companion, trio_profile, draft_len=3)
        run_simulation(cfg, queries=[prompt] * per_run, backend=backend)
        for q in range(per_run):
            out = backend.output(q, len(prompt))[:3]
            counts[np.arange(3), out] += 1
    emp = counts / (n_runs * per_run)
    for pos in range(3):
        assert tv(emp[pos], exact[pos]) < 0.01


class TestTraceIO:
    def test_roundtrip(self, tmp_path):
        trace = [StepRecord(0, 0, "sv", 2, 1, 0.25, [0.5, 0.25], [1.0, 0.125]), StepRecord(0, 1, "sv", 0, 0, 0.25)]
        write_trace(trace, tmp_path / "t.csv", 3)
        with open(tmp_path / "t.csv") as f:
            header = next(csv.reader(f))
        assert header == ["step", "query_id", "mode", "gamma", "accepted", "latency_model_s", "s_1", "s_2", "s_3",
                          "a_1", "a_2", "a_3"]
        back, k = read_trace(tmp_path / "t.csv")
        assert k == 3
        assert [(r.step, r.query_id, r.gamma, r.accepted, r.latency, r.s, r.a) for r in back] == \
               [(r.step, r.query_id, r.gamma, r.accepted, r.latency, r.s, r.a) for r in trace]

    def test_bad_header(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            read_trace(tmp_path / "t.csv")

    def test_observations_roundtrip(self, tmp_path):
        obs = profile_scenario(OracleScenario(noise=0.1), 50, seed=2)
        write_observations(obs, tmp_path / "o.csv")
        assert [repr(o) for o in read_observations(tmp_path / "o.csv")] == [repr(o) for o in obs]


class TestRunConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"mode": "sd", "scenario": {}, "colour": 1})

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"mode": "sd", "target_model": "nope.json", "corpus": "c.txt"}, tmp_path)
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"mode": "target"}, tmp_path)

    @pytest.mark.parametrize("kw", [dict(mode="fast"), dict(draft_len=0), dict(batch_size=0), dict(workers=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw)

    def test_presets_and_latency(self):
        cfg = RunConfig.from_dict({"mode": "sd", "scenario": {"noise": "inf"}, "sampling": "qwen2.5",
                                   "latency": {"base": 2, "knee": 1, "slope": 0.5}, "draft_len": 7})
        assert cfg.sampling == SamplingConfig(temperature=0.7, top_k=20, top_p=0.8)
        assert cfg.latency(3) == 3.0
        assert cfg.scenario.draft_len == 7 and math.isinf(cfg.scenario.noise)


class TestFairness:
    def test_hand_trace(self):
        trace = [rec(i, 0, g, 0) for i, g in enumerate([5, 5, 1])] + [rec(i, 1, 1, 0) for i in range(3)]
        rep = fairness_report(trace, 5)
        assert rep.queries[0].avg_gamma == pytest.approx(11 / 3)
        assert rep.queries[1].avg_gamma == 1
        assert rep.queries[0].histogram == [0, 1, 0, 0, 0, 2]
        assert rep.queries[1].histogram == [0, 3, 0, 0, 0, 0]
        assert rep.overall_avg_gamma == pytest.approx(14 / 6)

    def test_constant_gamma(self):
        rep = fairness_report([rec(i, 7, 3, 2) for i in range(4)], 5)
        assert rep.queries[0].avg_gamma == 3 and rep.queries[0].histogram == [0, 0, 0, 4, 0, 0]

    def test_bottom_and_top(self, tmp_path):
        # query q verifies gamma = q % 6 on half its steps, 5 on the rest
        order = [3, 8, 1, 9, 0, 4, 7, 2, 6, 5]
        trace = []
        for rank, q in enumerate(order):
            for step in range(10):
                trace.append(rec(step, q, 5 if step < rank else 0, 0))
        rep = fairness_report(trace, 5)
        assert [q.query_id for q in rep.bottom(5)] == order[:5]
        assert [q.query_id for q in rep.top(5)] == order[::-1][:5]
        rep.write_csv(tmp_path / "f.csv")
        rows = list(csv.reader(open(tmp_path / "f.csv")))
        assert rows[0][:4] == ["case", "query_id", "avg_gamma", "steps"]
        assert rows[0][4:] == [f"gamma_{g}" for g in range(6)]
        assert [r[1] for r in rows[1:6]] == [str(q) for q in order[:5]]


class TestWaste:
    def test_all_accepted(self):
        assert waste_report([rec(0, 0, 4, 4), rec(1, 0, 2, 2)])["waste_fraction"] == 0

    def test_all_rejected(self):
        lat = LatencyModel(1.0, 0, 0.1)
        trace = [rec(s, q, 3, 0, lat(8)) for s in range(3) for q in range(2)]
        out = waste_report(trace, lat)
        assert out["waste_fraction"] == 1
        assert out["costlier_step_fraction"] == 1

    def test_quarter_kept(self):
        assert waste_report([rec(i, 0, 4, 1) for i in range(5)])["waste_fraction"] == 0.75

    def test_throughput_by_accepted(self):
        out = throughput_by_accepted([rec(0, 0, 4, 1, 2.0), rec(1, 0, 4, 1, 4.0), rec(2, 0, 4, 3, 2.0)])
        assert out == [{"accepted": 1, "count": 2, "mean_throughput": 0.75},
                       {"accepted": 3, "count": 1, "mean_throughput": 2.0}]


def test_compare_predictors_shape(oracle_profile):
    out = compare_predictors(OracleScenario(), oracle_profile, 500, alphas=(0.3,), seed=0)
    assert set(out) == {"profile", "ema"} and set(out["ema"]) == {0.3}
    assert out["profile"] < out["ema"][0.3]
