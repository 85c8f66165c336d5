"""End-to-end acceptance suite, one test per numbered claim.

Each test is self-contained and carries its wall-clock budget as an
assertion. The trained model pool and the thirty-seed scenario runs are
expensive, so they are module fixtures shared by the tests that need
them; their build time is charged against the budget of the first test
that requests them (the accuracy-direction one, which has the largest
allowance), and later consumers only pay for their own assertions.

Run with ``pytest -v`` to get one pass/fail line per criterion.
"""

import hashlib
import time

import numpy as np
import pytest

from edgehealth import cli, edgesim as es, rl
from edgehealth.adaptive import (
    ModalitySensing,
    SensingConfig,
    build_default_pool,
    data_volume,
    full_sensing,
    run_scenario,
)
from edgehealth.calibrate import calibrate
from edgehealth.features import FeatureVector, extract_features
from edgehealth.models import evaluate
from edgehealth.quality import (
    RELIABLE,
    UNRELIABLE,
    assess_modalities,
    compute_rmssd,
    detect_peaks,
    estimate_snr,
    rmssd_report,
)
from edgehealth.seeding import child_seed, rng_for
from edgehealth.signals import (
    NoiseSpec,
    generate_window,
    inject_noise,
    standard_scenarios,
)

MODALITIES = ("ecg", "eda", "ppg")
NOMINAL_HZ = {"ecg": 100.0, "eda": 4.0, "ppg": 64.0}
WINDOW_S = 60.0

_BUILD: dict = {}
_CHARGED: set = set()


def _charge(*names) -> float:
    """Build seconds for shared fixtures not yet billed to any test."""
    total = 0.0
    for name in names:
        if name in _BUILD and name not in _CHARGED:
            total += _BUILD[name]
            _CHARGED.add(name)
    return total


@pytest.fixture(scope="module")
def pool():
    t0 = time.monotonic()
    built = build_default_pool(n_windows=200, seed=0)
    _BUILD["pool"] = time.monotonic() - t0
    return built


@pytest.fixture(scope="module")
def scenario_runs(pool):
    """Thirty independent seed streams per scenario and mode."""
    t0 = time.monotonic()
    scenarios = standard_scenarios()
    seeds = tuple(range(30))
    runs = {
        (sid, mode): run_scenario(
            scenarios[sid], seeds, mode, pool, n_windows=210
        )
        for sid in ("S1", "S2", "S3", "S4")
        for mode in ("amser", "baseline")
    }
    _BUILD["runs"] = time.monotonic() - t0
    return runs


# --------------------------------------------------------------------------
# 1. placement-ordering reproduction by the calibrated latency model

def test_c1_calibrated_model_reproduces_placement_orderings():
    t0 = time.monotonic()
    fit = calibrate()
    elapsed = time.monotonic() - t0

    assert fit.orderings_total == 18
    assert fit.orderings_matched == 18
    assert fit.median_rel_err <= 0.15

    # two spot cells, checked against the model directly
    def model_s(app, policy, sampling, bandwidth):
        rows = [
            r for r in fit.per_target
            if (r["app"], r["policy"], r["sampling"], r["bandwidth"])
            == (app, policy, sampling, bandwidth)
        ]
        assert len(rows) == 1
        return rows[0]["model_s"]

    cell = [model_s("stress", p, "high", "low")
            for p in ("partial", "local", "cloud")]
    assert cell[0] < cell[1] < cell[2]
    cell = [model_s("fall", p, "high", "low")
            for p in ("local", "cloud", "partial")]
    assert cell[0] < cell[1] < cell[2]

    assert elapsed <= 60.0


# --------------------------------------------------------------------------
# 2. the event simulator agrees with the closed-form latency when no
#    request ever queues behind another

def test_c2_uncontended_simulation_matches_analytic_latency():
    t0 = time.monotonic()
    pipes = es.default_pipelines()
    topo = es.default_topology()
    rng = np.random.default_rng(0)
    apps = sorted(pipes)
    worst = 0.0
    n_configs = 1000
    for _ in range(n_configs):
        pipe = pipes[apps[rng.integers(0, len(apps))]]
        placements = es.enumerate_placements(pipe.n_stages)
        placement = placements[rng.integers(0, len(placements))]
        tier = es.BANDWIDTH_TIERS[rng.integers(0, 3)]
        level = es.SAMPLING_LEVELS[rng.integers(0, 2)]
        workload = es.WorkloadSpec(
            users=1, period_s=500.0, duration_s=400.0, jitter_frac=0.1
        )
        trace = es.simulate(
            pipe, topo, workload, placement, bandwidth_tier=tier,
            sampling_level=level, seed=int(rng.integers(0, 2**31)),
        )
        assert len(trace.records) == 1
        got = trace.records[0].response_us / 1e6
        want = es.analytic_latency(pipe, placement, topo, tier, level)
        worst = max(worst, abs(got - want))
    assert worst <= 1e-9
    assert time.monotonic() - t0 <= 60.0


# --------------------------------------------------------------------------
# 3. learned placement quality: oracle match on a frozen small MDP, and
#    the user-count sweep against brute-force static policies

GRID_BASE = (0.492, 1.075, 0.817, 0.927, 0.832, 0.551)
GRID_EDGE_W = (0.077, 0.273, 0.2, 0.009, 0.211, 0.418)
GRID_CLOUD_W = (0.342, 0.287, 0.023, 0.093, 0.053, 0.11)
GRID_USERS_W = (0.05, 0.139, 0.068, 0.08, 0.098, 0.072)
_LEVEL = {"low": 0, "med": 1, "high": 2}


def _grid_states():
    return [rl.QState(u, e, c, "medium", "grid")
            for u in range(1, 6) for e in rl.UTIL_BINS for c in rl.UTIL_BINS]


def _grid_mean(state, action):
    return -(GRID_BASE[action]
             + GRID_EDGE_W[action] * _LEVEL[state.edge_bin]
             + GRID_CLOUD_W[action] * _LEVEL[state.cloud_bin]
             + GRID_USERS_W[action] * (state.users_bin - 1))


def _grid_env(table, eps, rng_seed, episode):
    rng = rng_for(rng_seed, "pulls")
    out = []
    for state in _grid_states():
        action = rl.choose_action(table, state, eps, rng)
        reward = _grid_mean(state, action) + 0.05 * rng.standard_normal()
        rl.q_update(table, state, action, reward)
        out.append(-reward)
    return float(np.mean(out))


def test_c3_learned_placement_matches_oracle_and_best_static():
    t0 = time.monotonic()

    # part one: 45-state environment with a known optimal arm per state
    for seed in (0, 1):
        table = rl.QTable(_grid_states(), n_actions=6, alpha=0.3, gamma=0.0)
        table, _ = rl.train(table, _grid_env, episodes=300, seed=seed)
        eligible = matched = 0
        for state in _grid_states():
            if sum(table.visits[state]) < 30:
                continue
            eligible += 1
            best = max(range(6), key=lambda a: (_grid_mean(state, a), -a))
            matched += table.greedy_action(state) == best
        assert eligible == 45
        assert matched / eligible >= 0.95

    # part two: 1..5-user sweep on the execution simulator
    tier, level = "medium", "high"
    period, duration = 2.0, 60.0
    counts = (1, 2, 3, 4, 5)
    eval_seeds = (100, 101, 102)
    topo = es.default_topology()
    pipe = es.default_pipelines()["imgclass"]
    placements = es.enumerate_placements(pipe.n_stages)

    def static_mean(placement, users):
        means = [
            es.simulate(
                pipe, topo,
                es.WorkloadSpec(users, period, duration, jitter_frac=0.1),
                placement, bandwidth_tier=tier, sampling_level=level, seed=s,
            ).mean_response_s()
            for s in eval_seeds
        ]
        return float(np.mean(means))

    best = {
        n: min(static_mean(pl, n) for pl in placements) for n in counts
    }
    table = rl.QTable.build(apps=("imgclass",), n_actions=len(placements))
    env = rl.sim_episode_env(
        pipe, topo, bandwidth_tier=tier, sampling_level=level,
        user_counts=counts, period_s=period, duration_s=duration,
    )
    table, _ = rl.train(table, env, episodes=300, seed=1)
    learned = {
        n: rl.evaluate_greedy(
            table, pipe, topo, bandwidth_tier=tier, sampling_level=level,
            users=n, period_s=period, duration_s=duration, seeds=eval_seeds,
        )
        for n in counts
    }
    for n in counts:
        assert learned[n] <= 1.05 * best[n], (
            "users=%d learned=%.4f best=%.4f" % (n, learned[n], best[n])
        )
    # below three users the learned policy's response stays flat
    assert abs(learned[2] - learned[1]) <= 0.02 * learned[1]

    assert time.monotonic() - t0 <= 300.0


# --------------------------------------------------------------------------
# 4. adaptive accuracy strictly beats the fixed pipeline under noise,
#    and matches it bit for bit on the clean scenario

def _bootstrap_lower(diffs, n_boot=2000, alpha=0.05):
    rng = np.random.default_rng(0)
    diffs = np.asarray(diffs, dtype=float)
    means = [
        float(np.mean(diffs[rng.integers(0, len(diffs), len(diffs))]))
        for _ in range(n_boot)
    ]
    return float(np.percentile(means, 100 * alpha / 2))


def test_c4_adaptive_accuracy_direction(scenario_runs):
    t0 = time.monotonic()

    clean_a = scenario_runs[("S1", "amser")]
    clean_b = scenario_runs[("S1", "baseline")]
    assert clean_a.accuracy == clean_b.accuracy
    assert clean_a.window_predictions == clean_b.window_predictions
    assert len(clean_a.window_predictions) == 210

    for sid in ("S2", "S3", "S4"):
        a = scenario_runs[(sid, "amser")]
        b = scenario_runs[(sid, "baseline")]
        diffs = [
            sa.accuracy - sb.accuracy
            for sa, sb in zip(a.per_seed, b.per_seed)
        ]
        assert len(diffs) >= 30
        assert a.accuracy > b.accuracy
        lower = _bootstrap_lower(diffs)
        assert lower > 0.0, "%s: CI lower bound %.4f" % (sid, lower)

    elapsed = time.monotonic() - t0 + _charge("pool", "runs")
    assert elapsed <= 300.0


# --------------------------------------------------------------------------
# 5. efficiency trends: monotone speedup, exact analytic data reduction,
#    and at least 2x from dropping one high-rate modality

def test_c5_efficiency_trends(scenario_runs):
    t0 = time.monotonic()

    speedup = {
        sid: scenario_runs[(sid, "amser")].speedup_vs_baseline
        for sid in ("S1", "S2", "S3", "S4")
    }
    # the clean scenario never changes configuration, so its ratio sits at
    # 1.0 up to rounding of the accumulated cost mean
    assert abs(speedup["S1"] - 1.0) <= 1e-9
    assert 1.0 < speedup["S2"] < speedup["S3"] < speedup["S4"]

    def config_with(rates):
        return SensingConfig({
            m: ModalitySensing(rates[m] is not None,
                               rates[m] if rates[m] else NOMINAL_HZ[m])
            for m in MODALITIES
        })

    base = data_volume(full_sensing(), WINDOW_S, 2)
    expected = {
        "S1": 1.0,
        # every modality noisy: all rates halved
        "S2": base / data_volume(
            config_with({m: NOMINAL_HZ[m] / 2 for m in MODALITIES}),
            WINDOW_S, 2),
        # first corrupted modality dropped, the rest untouched
        "S3": base / data_volume(
            config_with({"ecg": None, "eda": 4.0, "ppg": 64.0}),
            WINDOW_S, 2),
        # both high-rate modalities dropped
        "S4": base / data_volume(
            config_with({"ecg": None, "ppg": None, "eda": 4.0}),
            WINDOW_S, 2),
    }
    for sid in ("S1", "S2", "S3", "S4"):
        got = scenario_runs[(sid, "amser")].data_reduction_vs_baseline
        assert got == expected[sid], "%s: %r != %r" % (sid, got, expected[sid])
        assert scenario_runs[(sid, "baseline")].data_reduction_vs_baseline == 1.0
        assert abs(scenario_runs[(sid, "baseline")].speedup_vs_baseline - 1.0) <= 1e-9

    # drop-one case: losing the highest-rate modality saves at least half
    assert expected["S3"] >= 2.0

    assert time.monotonic() - t0 <= 60.0


# --------------------------------------------------------------------------
# 6. the fused three-modality model dominates every single-modality model
#    on clean data

def test_c6_fused_model_dominates_single_modalities(pool):
    t0 = time.monotonic()
    vectors = []
    for i in range(120):
        label = i % 2
        blocks = {
            m: extract_features(generate_window(
                m, label, WINDOW_S, seed=child_seed(123, "eval", str(i), m)))
            for m in MODALITIES
        }
        vectors.append(FeatureVector("e%03d" % i, blocks, label))

    def accuracy(key_name):
        key = next(k for k in pool.models if k.name == key_name)
        return evaluate(pool.models[key], vectors)["accuracy"]

    fused = accuracy("ecg52-eda42-ppg42")
    singles = {name: accuracy(name) for name in ("ecg52", "eda42", "ppg42")}
    for name, acc in singles.items():
        assert fused >= acc, "fused %.3f < %s %.3f" % (fused, name, acc)

    assert time.monotonic() - t0 <= 120.0


# --------------------------------------------------------------------------
# 7. signal-layer oracles: blind SNR, the RMSSD hand case, peak detection,
#    and artifact windows being flagged unreliable

def test_c7_signal_layer_oracles():
    t0 = time.monotonic()

    # blind SNR within +/-1 dB across 600 noisy windows
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(600):
        m = MODALITIES[i % 3]
        target = rng.uniform(-5.0, 30.0)
        rng.integers(0, 2)
        sig = generate_window(m, i % 2, WINDOW_S, seed=1000 + i)
        noisy = inject_noise(
            sig, NoiseSpec(kind="wander", target_snr_db=target), seed=5000 + i
        )
        worst = max(worst, abs(estimate_snr(noisy) - noisy.truth.true_snr_db))
    assert worst <= 1.0, "worst SNR error %.3f dB" % worst

    # hand-computable RMSSD: intervals 0.8, 0.9, 0.8 s give exactly 100 ms
    assert abs(compute_rmssd([0.0, 0.8, 1.7, 2.5]) - 100.0) <= 1e-9

    # peak detection on clean cardiac signals
    tp = fp = fn = 0
    for m in ("ecg", "ppg"):
        for i in range(40):
            sig = generate_window(m, i % 2, WINDOW_S, seed=9000 + i)
            det = list(detect_peaks(sig))
            truth = list(sig.truth.true_peak_times_s)
            ti = 0
            for p in det:
                while ti < len(truth) and truth[ti] < p - 0.15:
                    ti += 1
                    fn += 1
                if ti < len(truth) and abs(truth[ti] - p) <= 0.15:
                    tp += 1
                    ti += 1
                else:
                    fp += 1
            fn += len(truth) - ti
    f1 = 2 * tp / (2 * tp + fp + fn)
    assert f1 >= 0.99, "peak F1 %.4f" % f1

    # an artifact-hit window is flagged and its RMSSD marked invalid
    sig = generate_window("ecg", 0, WINDOW_S, seed=42)
    corrupted = inject_noise(
        sig, NoiseSpec(kind="wander+artifact", target_snr_db=8.0), seed=43
    )
    report = assess_modalities({"ecg": corrupted})
    assert report.label("ecg") == UNRELIABLE
    flagged = rmssd_report(detect_peaks(corrupted), report.label("ecg"))
    assert flagged["reliable"] is False
    clean_report = assess_modalities({"ecg": sig})
    assert clean_report.label("ecg") == RELIABLE
    assert rmssd_report(detect_peaks(sig), clean_report.label("ecg"))["reliable"]

    assert time.monotonic() - t0 <= 120.0


# --------------------------------------------------------------------------
# 8. determinism: every command, run twice with the same configuration and
#    seed, produces byte-identical artifacts

ACCEPT_CFG = """\
[signals]
n_windows = 6

[pool]
n_windows = 40

[amser]
n_seeds = 2
n_windows = 6

[rl]
episodes = 10
user_counts = [1, 2]
eval_seeds = [100]

[calibrate]
max_passes = 2
"""


def _tree_digest(root):
    digests = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digests[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return digests


def test_c8_every_command_is_byte_deterministic(tmp_path):
    t0 = time.monotonic()
    cfg = tmp_path / "accept.toml"
    cfg.write_text(ACCEPT_CFG)
    outs = (tmp_path / "first", tmp_path / "second")
    for out in outs:
        for command in ("generate", "train-pool", "adapt", "simulate",
                        "train-rl", "calibrate", "report"):
            code = cli.main([command, "--config", str(cfg),
                             "--out", str(out)])
            assert code == 0, command
    first, second = (_tree_digest(out) for out in outs)
    assert sorted(first) == sorted(second)
    different = [name for name in first if first[name] != second[name]]
    assert different == []
    assert len(first) >= 40  # traces, pools, q-tables, reports, summaries
    assert time.monotonic() - t0 <= 180.0
