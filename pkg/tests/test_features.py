from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.signal import decimate

from edgehealth.features import (
    DEFAULT_REDUCED_COUNTS,
    FEATURE_TEMPLATES,
    MODALITY_ORDER,
    RATE_INSENSITIVE,
    FeaturePlan,
    FeatureVector,
    aggregate,
    default_plan,
    extract_features,
    rank_features,
    read_features_csv,
    write_features_csv,
)
from edgehealth.quality import NOISY, RELIABLE, UNRELIABLE, ModalityQuality, QualityReport
from edgehealth.signals import Signal, generate_window


def _report(ecg=RELIABLE, eda=RELIABLE, ppg=RELIABLE):
    return QualityReport(
        {
            "ecg": ModalityQuality(20.0, ecg),
            "eda": ModalityQuality(20.0, eda),
            "ppg": ModalityQuality(20.0, ppg),
        }
    )


def _dataset(n=24, duration=40.0):
    vecs = []
    for i in range(n):
        c = i % 2
        blocks = {
            m: extract_features(generate_window(m, c, duration, seed=900 + i))
            for m in MODALITY_ORDER
        }
        vecs.append(FeatureVector(f"w{i:03d}", blocks, c))
    return vecs


def test_template_sizes():
    assert len(FEATURE_TEMPLATES["ecg"]) == 52
    assert len(FEATURE_TEMPLATES["eda"]) == 42
    assert len(FEATURE_TEMPLATES["ppg"]) == 42
    for names in FEATURE_TEMPLATES.values():
        assert len(set(names)) == len(names)


def test_full_extraction_counts_and_determinism():
    for m, want in (("ecg", 52), ("eda", 42), ("ppg", 42)):
        sig = generate_window(m, 1, 60.0, seed=17)
        a = extract_features(sig)
        b = extract_features(sig)
        assert len(a) == want
        assert np.array_equal(a.values, b.values)
        assert np.all(np.isfinite(a.values))


def test_zero_signal_gives_zero_features():
    block = extract_features(Signal("ecg", 100.0, np.zeros(6000)))
    assert np.max(np.abs(block.values)) == 0.0


def test_reduced_plan_selection():
    plan = default_plan()
    reduced = FeaturePlan(
        rankings=plan.rankings, k={"ecg": 12}, reduced=plan.reduced
    )
    sig = generate_window("ecg", 0, 60.0, seed=17)
    block = extract_features(sig, reduced)
    assert len(block) == 12
    assert block.names == plan.rankings["ecg"][:12]


def test_plan_validation():
    with pytest.raises(ValueError, match="permutation"):
        FeaturePlan(rankings={"ecg": FEATURE_TEMPLATES["ecg"][:-1]})
    with pytest.raises(ValueError):
        FeaturePlan(rankings={"ecg": FEATURE_TEMPLATES["ecg"]}, k={"ecg": 0})
    with pytest.raises(ValueError):
        FeaturePlan(rankings={"emg": ("a", "b")})


def test_short_window_rejected():
    with pytest.raises(ValueError, match="at least 1 s"):
        extract_features(Signal("ecg", 100.0, np.zeros(50)))


def test_ranking_prefers_separating_feature():
    # two synthetic features: one separates the classes perfectly, one is
    # constant; build minimal vectors by hand on a fake single-feature plan
    rng = np.random.default_rng(4)
    vecs = []
    for i in range(30):
        c = i % 2
        ecg = extract_features(generate_window("ecg", 0, 20.0, seed=600 + i))
        # overwrite two known columns to force the outcome
        vals = ecg.values.copy()
        names = list(ecg.names)
        vals[names.index("mean")] = float(c)  # perfect separator
        vals[names.index("std")] = 1.0  # constant
        ecg.values = vals
        vecs.append(FeatureVector(f"w{i:02d}", {"ecg": ecg}, c))
    ranking = rank_features(vecs, "ecg")
    assert ranking[0] == "mean"
    assert ranking[-1] == "std"
    _ = rng  # rng kept for symmetry with sibling tests


def test_ranking_tie_breaks_by_name():
    # make every feature constant except two identical separators named so
    # their scores tie exactly; "iqr" sorts before "mad"
    vecs = []
    for i in range(20):
        c = i % 2
        ecg = extract_features(generate_window("ecg", 0, 20.0, seed=700 + i))
        vals = np.zeros_like(ecg.values)
        names = list(ecg.names)
        vals[names.index("iqr")] = float(c)
        vals[names.index("mad")] = float(c)
        ecg.values = vals
        vecs.append(FeatureVector(f"w{i:02d}", {"ecg": ecg}, c))
    ranking = rank_features(vecs, "ecg")
    assert ranking[0] == "iqr"
    assert ranking[1] == "mad"


def test_ranking_stable_under_row_permutation():
    vecs = _dataset(20)
    base = rank_features(vecs, "ppg")
    shuffled = list(vecs)
    np.random.default_rng(9).shuffle(shuffled)
    assert rank_features(shuffled, "ppg") == base


def test_ranking_requires_two_classes():
    vecs = _dataset(6)
    mono = [FeatureVector(v.window_id, v.blocks, 0) for v in vecs]
    with pytest.raises(ValueError, match="two classes"):
        rank_features(mono, "ecg")


def test_aggregate_counts_for_documented_cases():
    vecs = _dataset(2)
    plan = default_plan()
    blocks = vecs[0].blocks
    assert len(aggregate(blocks, _report(), plan)) == 136
    assert len(aggregate(blocks, _report(ecg=NOISY), plan)) == 12 + 42 + 42
    assert len(aggregate(blocks, _report(ecg=UNRELIABLE), plan)) == 42 + 42


def test_aggregate_feature_count_pure_in_labels():
    # the advertised property: count depends only on labels and plan,
    # checked across every label combination
    vecs = _dataset(2)
    plan = default_plan()
    sizes = {
        "ecg": {RELIABLE: 52, NOISY: DEFAULT_REDUCED_COUNTS["ecg"], UNRELIABLE: 0},
        "eda": {RELIABLE: 42, NOISY: DEFAULT_REDUCED_COUNTS["eda"], UNRELIABLE: 0},
        "ppg": {RELIABLE: 42, NOISY: DEFAULT_REDUCED_COUNTS["ppg"], UNRELIABLE: 0},
    }
    for combo in itertools.product((RELIABLE, NOISY, UNRELIABLE), repeat=3):
        rep = _report(*combo)
        want = sum(sizes[m][lab] for m, lab in zip(MODALITY_ORDER, combo))
        for v in vecs:
            if want == 0:
                with pytest.raises(ValueError, match="no usable input"):
                    aggregate(v.blocks, rep, plan)
            else:
                assert len(aggregate(v.blocks, rep, plan)) == want


def test_aggregate_keeps_fixed_modality_order():
    vecs = _dataset(1)
    fv = aggregate(vecs[0].blocks, _report(), default_plan())
    assert tuple(fv.blocks) == MODALITY_ORDER
    names = fv.names()
    assert names[0].startswith("ecg.")
    assert names[-1].startswith("ppg.")


def test_downsampling_moves_only_rate_sensitive_features():
    for m in MODALITY_ORDER:
        for s in range(4):
            sig = generate_window(m, s % 2, 60.0, seed=500 + s)
            full = extract_features(sig)
            x2 = decimate(sig.samples, 2, ftype="fir", zero_phase=True)
            half = extract_features(Signal(m, sig.sampling_rate_hz / 2, x2))
            fi = dict(zip(full.names, full.values))
            hi = dict(zip(half.names, half.values))
            for n in RATE_INSENSITIVE[m]:
                rel = abs(fi[n] - hi[n]) / max(abs(fi[n]), abs(hi[n]), 1e-12)
                assert rel < 0.01, (m, n, rel)


def test_features_csv_roundtrip(tmp_path):
    vecs = _dataset(5)
    plan = default_plan()
    agg = [
        aggregate(v.blocks, _report(), plan, window_id=v.window_id, label=v.label)
        for v in vecs
    ]
    path = tmp_path / "feats.csv"
    write_features_csv(agg, path)
    back = read_features_csv(path)
    assert len(back) == 5
    assert back[0].names() == agg[0].names()
    assert back[3].label == agg[3].label
    assert np.allclose(back[2].concat(), agg[2].concat(), rtol=0, atol=0)
