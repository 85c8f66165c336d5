from __future__ import annotations

import numpy as np
import pytest

from edgehealth.features import (
    FEATURE_TEMPLATES,
    MODALITY_ORDER,
    FeatureBlock,
    FeatureVector,
    extract_features,
)
from edgehealth.models import (
    ModelKey,
    Prediction,
    TrainedModel,
    default_keys,
    evaluate,
    load_pool,
    predict,
    save_pool,
    tiered_predict,
    train_pool,
)
from edgehealth.signals import NoiseSpec, generate_window, inject_noise

KEY_FULL = ModelKey((("ecg", 52), ("eda", 42), ("ppg", 42)))
KEY_EP = ModelKey((("eda", 42), ("ppg", 42)))


def _vec(i, seed, noise=None, noise_seed=0):
    c = i % 2
    blocks = {}
    for j, m in enumerate(MODALITY_ORDER):
        sig = generate_window(m, c, 60.0, seed=seed)
        if noise and m in noise:
            sig = inject_noise(sig, noise[m], noise_seed + j)
        blocks[m] = extract_features(sig)
    return FeatureVector(f"w{i:04d}", blocks, c)


@pytest.fixture(scope="module")
def train_set():
    return [_vec(i, 2000 + i) for i in range(144)]


@pytest.fixture(scope="module")
def pool(train_set):
    return train_pool(train_set, [KEY_FULL, KEY_EP], family="knn", seed=7)


@pytest.fixture(scope="module")
def fresh_set():
    return [_vec(i, 9000 + i) for i in range(60)]


@pytest.fixture(scope="module")
def stack(train_set, pool):
    cheap = train_pool(train_set, [KEY_FULL], family="centroid", seed=7)
    return [cheap.get(KEY_FULL), pool.get(KEY_FULL)]


def _hand_model(family, params, n_features=1, classes=(0, 1)):
    names = tuple(f"ecg.{n}" for n in FEATURE_TEMPLATES["ecg"][:n_features])
    return TrainedModel(
        key=ModelKey((("ecg", n_features),)),
        family=family,
        feature_names=names,
        classes=classes,
        scaler_mean=np.zeros(n_features),
        scaler_scale=np.ones(n_features),
        params=params,
        train_meta={"seed": 0, "dataset_hash": "", "holdout_accuracy": 0.0,
                    "n_train": 0, "n_holdout": 0},
        inference_cost_mops=1e-6,
    )


def _hand_vec(values, label=None, n_features=1):
    names = FEATURE_TEMPLATES["ecg"][:n_features]
    block = FeatureBlock(
        "ecg", tuple(names), np.asarray(values, dtype=float),
        np.ones(n_features, dtype=bool),
    )
    return FeatureVector("probe", {"ecg": block}, label)


class TestModelKey:
    def test_canonical_order_and_name(self):
        key = ModelKey((("ppg", 42), ("ecg", 52)))
        assert key.counts == (("ecg", 52), ("ppg", 42))
        assert key.name == "ecg52-ppg42"
        assert key.modalities == ("ecg", "ppg")
        assert key.count_for("ppg") == 42

    def test_name_round_trip(self):
        for name in ("ecg52-eda42-ppg42", "eda11", "ecg12-ppg11"):
            assert ModelKey.from_name(name).name == name

    def test_rejects_bad_keys(self):
        with pytest.raises(ValueError):
            ModelKey(())
        with pytest.raises(ValueError):
            ModelKey((("ecg", 52), ("ecg", 12)))
        with pytest.raises(ValueError):
            ModelKey((("emg", 5),))
        with pytest.raises(ValueError):
            ModelKey((("ecg", 0),))
        with pytest.raises(ValueError):
            ModelKey((("ecg", 53),))
        with pytest.raises(ValueError):
            ModelKey.from_name("ecg")

    def test_default_keys_cover_every_state_combination(self):
        keys = default_keys()
        names = {k.name for k in keys}
        assert len(keys) == 26
        assert "ecg52-eda42-ppg42" in names
        assert "ecg12-eda11-ppg11" in names
        assert "eda42-ppg42" in names
        assert "eda42" in names
        assert "ecg12" in names


class TestTraining:
    def test_full_model_holdout_accuracy(self, pool):
        # the separability the default generator is tuned for
        assert pool.get(KEY_FULL).train_meta["holdout_accuracy"] >= 0.90

    def test_all_families_train_well(self, train_set):
        for fam in ("centroid", "ensemble", "knn"):
            p = train_pool(train_set, [KEY_FULL], family=fam, seed=7)
            assert p.get(KEY_FULL).train_meta["holdout_accuracy"] >= 0.85, fam

    def test_training_is_deterministic(self, train_set, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        keys = [KEY_FULL, ModelKey((("ecg", 12),))]
        save_pool(train_pool(train_set, keys, family="ensemble", seed=3), a)
        save_pool(train_pool(train_set, keys, family="ensemble", seed=3), b)
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    def test_single_class_rejected(self, train_set):
        mono = [FeatureVector(v.window_id, v.blocks, 0) for v in train_set[:20]]
        with pytest.raises(ValueError, match="single class"):
            train_pool(mono, [KEY_FULL], seed=0)

    def test_absent_modality_rejected(self, train_set):
        no_eda = [
            FeatureVector(v.window_id, {m: v.blocks[m] for m in ("ecg", "ppg")}, v.label)
            for v in train_set[:20]
        ]
        with pytest.raises(ValueError, match="absent from dataset"):
            train_pool(no_eda, [KEY_EP], seed=0)

    def test_half_rate_dataset_feeds_reduced_keys(self):
        # synthetic blocks: the half-rate variant is offset by +100, so the
        # trained scaler tells us which table the columns came from
        rng = np.random.default_rng(0)
        names = FEATURE_TEMPLATES["ecg"]
        full, half = [], []
        for i in range(40):
            c = i % 2
            base = rng.normal(float(c), 1.0, size=len(names))
            blocks = {"ecg": FeatureBlock("ecg", names, base, np.ones(len(names), bool))}
            shifted = {"ecg": FeatureBlock("ecg", names, base + 100.0, np.ones(len(names), bool))}
            full.append(FeatureVector(f"w{i:02d}", blocks, c))
            half.append(FeatureVector(f"w{i:02d}", shifted, c))
        keys = [ModelKey((("ecg", 52),)), ModelKey((("ecg", 12),))]
        p = train_pool(full, keys, family="centroid", seed=1, half_rate_dataset=half)
        assert abs(float(np.mean(p.get(keys[0]).scaler_mean))) < 5.0
        assert float(np.mean(p.get(keys[1]).scaler_mean)) > 50.0


class TestPredict:
    def test_knn_memorizes_training_rows(self, train_set):
        subset = train_set[:40]
        p = train_pool(subset, [KEY_FULL], family="knn", seed=5, family_params={"k": 1})
        model = p.get(KEY_FULL)
        stored = {tuple(row) for row in model.params["x"]}
        train_side = []
        for v in subset:
            have = dict(zip(v.names(), v.concat()))
            z = model.standardize(np.array([have[n] for n in model.feature_names]))
            if tuple(z) in stored:
                train_side.append(v)
        # exactly the 70% that landed on the training side of the split,
        # and each of them is its own nearest neighbor
        assert len(train_side) == model.train_meta["n_train"]
        for v in train_side:
            pred = predict(model, v)
            assert pred.label == v.label
            assert pred.confidence == 1.0

    def test_knn_hand_case_is_exact(self):
        model = _hand_model("knn", {"k": 1, "x": np.array([[0.0], [1.0]]),
                                    "y": np.array([0, 1])})
        pred = predict(model, _hand_vec([0.0]))
        assert pred == Prediction(0, 1.0, model.key, 1, model.inference_cost_mops)
        assert evaluate(model, [_hand_vec([0.0], 0), _hand_vec([1.0], 1)])["accuracy"] == 1.0

    def test_centroid_equidistant_tie(self):
        model = _hand_model("centroid", {"centroids": np.array([[-1.0], [1.0]])})
        pred = predict(model, _hand_vec([0.0]))
        assert pred.label == 0  # lowest class index wins the tie
        assert pred.confidence == 0.5

    def test_missing_feature_is_an_error(self, pool):
        probe = _hand_vec([0.0])
        with pytest.raises(ValueError, match="lacks"):
            predict(pool.get(KEY_FULL), probe)

    def test_predict_deterministic(self, pool, fresh_set):
        m = pool.get(KEY_FULL)
        assert predict(m, fresh_set[0]) == predict(m, fresh_set[0])


class TestTiered:
    def test_threshold_zero_exits_at_tier_one(self, stack, fresh_set):
        pred = tiered_predict(stack, fresh_set[0], 0.0)
        assert pred.exited_at_tier == 1
        assert pred.cost_mops == stack[0].inference_cost_mops

    def test_unreachable_threshold_runs_all_tiers(self, stack, fresh_set):
        pred = tiered_predict(stack, fresh_set[0], 1.0)
        assert pred.exited_at_tier == 2
        assert pred.cost_mops == sum(m.inference_cost_mops for m in stack)

    def test_early_exit_saves_cost_on_clean_data(self, stack, fresh_set):
        r = evaluate(stack, fresh_set, confidence_threshold=0.8)
        full_stack_cost = sum(m.inference_cost_mops for m in stack)
        assert r["mean_exited_at_tier"] < 2.0
        assert r["mean_cost_mops"] < full_stack_cost
        assert r["accuracy"] >= 0.85

    def test_empty_stack_rejected(self, fresh_set):
        with pytest.raises(ValueError, match="at least one tier"):
            tiered_predict([], fresh_set[0], 0.5)

    def test_threshold_out_of_range(self, stack, fresh_set):
        with pytest.raises(ValueError):
            tiered_predict(stack, fresh_set[0], 1.5)


class TestEvaluate:
    def test_empty_set_rejected(self, pool):
        with pytest.raises(ValueError, match="non-empty"):
            evaluate(pool.get(KEY_FULL), [])

    def test_label_outside_classes_rejected(self, pool, fresh_set):
        rogue = FeatureVector("rogue", fresh_set[0].blocks, 7)
        with pytest.raises(ValueError, match="outside trained classes"):
            evaluate(pool.get(KEY_FULL), [rogue])

    def test_stack_needs_threshold(self, pool, fresh_set):
        with pytest.raises(ValueError, match="confidence_threshold"):
            evaluate([pool.get(KEY_FULL)], fresh_set)


class TestNoiseSensitivity:
    def test_dropping_the_corrupted_modality_helps(self, pool):
        # windows with a motion artifact burst on top of ECG wander; EDA and
        # PPG stay clean. The quality-blind full model should do clearly
        # worse than the model that never sees the corrupted channel.
        bad = NoiseSpec(kind="wander+artifact", target_snr_db=8.0)
        windows = [
            _vec(i, 12000 + i, noise={"ecg": bad}, noise_seed=15000 + 10 * i)
            for i in range(40)
        ]
        acc_full = evaluate(pool.get(KEY_FULL), windows)["accuracy"]
        acc_ep = evaluate(pool.get(KEY_EP), windows)["accuracy"]
        assert acc_ep - acc_full > 0.2


class TestPersistence:
    def test_round_trip_predictions_identical(self, pool, fresh_set, tmp_path):
        save_pool(pool, tmp_path / "pool")
        back = load_pool(tmp_path / "pool")
        assert set(back.models) == set(pool.models)
        for key in (KEY_FULL, KEY_EP):
            for v in fresh_set[:10]:
                assert predict(back.get(key), v) == predict(pool.get(key), v)

    def test_manifest_contents(self, pool, tmp_path):
        save_pool(pool, tmp_path / "pool")
        back = load_pool(tmp_path / "pool")
        man = back.manifest()
        entry = man["ecg52-eda42-ppg42"]
        assert entry["family"] == "knn"
        assert entry["n_features"] == 136
        assert entry["inference_cost_mops"] > 0
        assert 0.0 <= entry["holdout_accuracy"] <= 1.0
        assert back.plan.rankings.keys() == pool.plan.rankings.keys()

    def test_resave_is_byte_identical(self, pool, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        save_pool(pool, a)
        save_pool(pool, b)
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
