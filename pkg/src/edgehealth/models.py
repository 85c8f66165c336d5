"""Classifier pool keyed by modality subset and per-modality feature count.

Three deterministic, dependency-light model families share one training
path: nearest-centroid, distance-weighted k-nearest-neighbor, and a small
seeded tree ensemble. Features are pulled out of labeled FeatureVectors by
namespaced name, standardized with training-set statistics (z-scores are
clipped so one off-distribution input dimension cannot dominate a distance),
and every model records its held-out accuracy on a fixed seeded 70/30 split
at train time.

A pool holds one model per ModelKey, covering every sensing configuration
the runtime controller can select. Keys whose feature count for a modality
is below the plan's full count are trained on the half-rate variant of the
dataset when one is supplied, because that is the sampling rate those
models will see in deployment.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .features import (
    FEATURE_TEMPLATES,
    MODALITY_ORDER,
    FeaturePlan,
    FeatureVector,
    default_plan,
)

__all__ = [
    "FAMILIES",
    "FAMILY_COST_PER_FEATURE_MOPS",
    "ModelKey",
    "TrainedModel",
    "Prediction",
    "ModelPool",
    "default_keys",
    "train_pool",
    "predict",
    "tiered_predict",
    "evaluate",
    "save_pool",
    "load_pool",
]

FAMILIES = ("centroid", "knn", "ensemble")

# Per-feature inference cost in mega-ops. The constants reflect the real
# relative work at our default sizes: a centroid model does ~3*C ops per
# feature, the tree ensemble a few tens, and brute-force k-NN ~3 ops per
# feature per stored training row (~170 rows).
FAMILY_COST_PER_FEATURE_MOPS = {
    "centroid": 6e-6,
    "ensemble": 5e-5,
    "knn": 5e-4,
}

# Standardized features are clipped to this many sigmas. Keeps a single
# wildly off-distribution dimension (a near-constant training column, or a
# corrupted input) from swamping every distance computation.
_Z_CLIP = 6.0

# Temperature of the nearest-centroid softmin confidence.
_SOFTMIN_TAU = 0.25

_KEY_PART = re.compile(r"^([a-z]+)(\d+)$")


@dataclass(frozen=True)
class ModelKey:
    """Ordered (modality, feature_count) pairs naming one pool entry."""

    counts: tuple

    def __post_init__(self):
        pairs = tuple((str(m).lower(), int(c)) for m, c in self.counts)
        if not pairs:
            raise ValueError("ModelKey needs at least one modality")
        mods = [m for m, _ in pairs]
        if len(set(mods)) != len(mods):
            raise ValueError("duplicate modality in ModelKey %r" % (pairs,))
        for m, c in pairs:
            template = FEATURE_TEMPLATES.get(m)
            if template is None:
                raise ValueError("unknown modality %r in ModelKey" % m)
            if not 1 <= c <= len(template):
                raise ValueError(
                    "count %d for %r outside [1, %d]" % (c, m, len(template))
                )
        ordered = tuple(sorted(pairs, key=lambda p: MODALITY_ORDER.index(p[0])))
        object.__setattr__(self, "counts", ordered)

    @property
    def name(self) -> str:
        return "-".join("%s%d" % (m, c) for m, c in self.counts)

    @property
    def modalities(self) -> tuple:
        return tuple(m for m, _ in self.counts)

    def count_for(self, modality: str) -> int:
        for m, c in self.counts:
            if m == modality:
                return c
        raise KeyError(modality)

    @staticmethod
    def from_name(name: str) -> "ModelKey":
        pairs = []
        for part in name.split("-"):
            match = _KEY_PART.match(part)
            if match is None:
                raise ValueError("bad ModelKey name %r" % name)
            pairs.append((match.group(1), int(match.group(2))))
        return ModelKey(tuple(pairs))


@dataclass
class TrainedModel:
    key: ModelKey
    family: str
    feature_names: tuple  # namespaced "modality.feature", fixed order
    classes: tuple  # sorted class labels
    scaler_mean: np.ndarray
    scaler_scale: np.ndarray
    params: dict
    train_meta: dict  # seed, dataset_hash, holdout_accuracy, n_train, n_holdout
    inference_cost_mops: float

    def standardize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.scaler_mean) / self.scaler_scale
        return np.clip(z, -_Z_CLIP, _Z_CLIP)


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    model_key: ModelKey
    exited_at_tier: int = 1
    cost_mops: float = 0.0


@dataclass
class ModelPool:
    models: dict  # ModelKey -> TrainedModel
    plan: FeaturePlan
    meta: dict = field(default_factory=dict)

    def get(self, key: ModelKey) -> TrainedModel:
        try:
            return self.models[key]
        except KeyError:
            raise KeyError("pool has no model for key %s" % key.name) from None

    def manifest(self) -> dict:
        entries = {}
        for key in sorted(self.models, key=lambda k: k.name):
            model = self.models[key]
            entries[key.name] = {
                "family": model.family,
                "holdout_accuracy": model.train_meta["holdout_accuracy"],
                "inference_cost_mops": model.inference_cost_mops,
                "n_features": len(model.feature_names),
            }
        return entries


def default_keys(plan: FeaturePlan | None = None) -> tuple:
    """Every sensing configuration the controller can ask for.

    Each modality is independently full, reduced, or absent; the all-absent
    combination is excluded. With three modalities that is 26 keys.
    """
    plan = plan or default_plan()
    out = {}
    options = {}
    for m in MODALITY_ORDER:
        full = plan.k.get(m, len(FEATURE_TEMPLATES[m]))
        reduced = plan.reduced.get(m, full)
        options[m] = (None, reduced, full)
    for combo in _product([options[m] for m in MODALITY_ORDER]):
        pairs = tuple(
            (m, c) for m, c in zip(MODALITY_ORDER, combo) if c is not None
        )
        if not pairs:
            continue
        key = ModelKey(pairs)
        out[key.name] = key
    return tuple(out[n] for n in sorted(out))


def _product(pools):
    if not pools:
        yield ()
        return
    for head in pools[0]:
        for rest in _product(pools[1:]):
            yield (head,) + rest


# ---------------------------------------------------------------------------
# training

def _dataset_hash(vectors) -> str:
    h = hashlib.sha256()
    for v in vectors:
        h.update(v.window_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(str(v.label).encode("ascii"))
        h.update(b"\x00")
        for name in v.names():
            h.update(name.encode("utf-8"))
            h.update(b"\x00")
        h.update(np.ascontiguousarray(v.concat(), dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _block_table(vectors, modality: str):
    """Stack one modality's block values across vectors; returns (names, matrix)."""
    names = None
    rows = []
    for v in vectors:
        block = v.blocks.get(modality)
        if block is None:
            raise ValueError(
                "key requests modality %r absent from dataset row %r"
                % (modality, v.window_id)
            )
        if names is None:
            names = block.names
        elif block.names != names:
            raise ValueError("inconsistent %r feature layout across dataset" % modality)
        rows.append(np.asarray(block.values, dtype=float))
    return names, np.stack(rows)


def _key_matrix(key: ModelKey, plan: FeaturePlan, tables) -> tuple:
    """Column-select a key's features out of per-modality block tables."""
    names_out = []
    cols = []
    for m, c in key.counts:
        block_names, mat = tables(m, c)
        pos = {n: i for i, n in enumerate(block_names)}
        want = plan.active_names(m, c)
        missing = [n for n in want if n not in pos]
        if missing:
            raise ValueError(
                "dataset blocks for %r lack planned features: %s"
                % (m, ", ".join(missing))
            )
        cols.append(mat[:, [pos[n] for n in want]])
        names_out.extend("%s.%s" % (m, n) for n in want)
    return tuple(names_out), np.concatenate(cols, axis=1)


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _build_tree(Z, yi, n_classes, rng, depth, min_leaf):
    counts = np.bincount(yi, minlength=n_classes)
    majority = int(np.argmax(counts))
    if depth == 0 or len(yi) < 2 * min_leaf or counts.max() == len(yi):
        return {"leaf": majority}
    d = Z.shape[1]
    feats = rng.choice(d, size=min(max(1, int(round(math.sqrt(d)))), d), replace=False)
    parent = _gini(counts)
    best = None
    for f in feats:
        v = Z[:, f]
        uniq = np.unique(v)
        if len(uniq) < 2:
            continue
        mids = 0.5 * (uniq[:-1] + uniq[1:])
        if len(mids) > 16:
            sel = np.unique(np.round(np.linspace(0, len(mids) - 1, 16)).astype(int))
            mids = mids[sel]
        for thr in mids:
            left = v <= thr
            nl = int(left.sum())
            nr = len(v) - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            g = (
                nl * _gini(np.bincount(yi[left], minlength=n_classes))
                + nr * _gini(np.bincount(yi[~left], minlength=n_classes))
            ) / len(v)
            if best is None or g < best[0] - 1e-12:
                best = (g, int(f), float(thr), left)
    if best is None or best[0] >= parent - 1e-9:
        return {"leaf": majority}
    _, f, thr, left = best
    return {
        "f": f,
        "t": thr,
        "lo": _build_tree(Z[left], yi[left], n_classes, rng, depth - 1, min_leaf),
        "hi": _build_tree(Z[~left], yi[~left], n_classes, rng, depth - 1, min_leaf),
    }


def _fit_family(family, Z, yi, n_classes, rng, family_params):
    opts = dict(family_params or {})
    if family == "centroid":
        centroids = np.stack([Z[yi == c].mean(axis=0) for c in range(n_classes)])
        return {"centroids": centroids}
    if family == "knn":
        k = int(opts.get("k", 5))
        if not 1 <= k <= len(yi):
            raise ValueError("knn k=%d outside [1, %d]" % (k, len(yi)))
        return {"k": k, "x": Z.copy(), "y": yi.copy()}
    if family == "ensemble":
        n_trees = int(opts.get("n_trees", 15))
        depth = int(opts.get("max_depth", 3))
        min_leaf = int(opts.get("min_leaf", 2))
        trees = []
        for _ in range(n_trees):
            boot = rng.integers(0, len(yi), len(yi))
            trees.append(_build_tree(Z[boot], yi[boot], n_classes, rng, depth, min_leaf))
        return {"n_trees": n_trees, "trees": trees}
    raise ValueError("unknown model family %r (known: %s)" % (family, ", ".join(FAMILIES)))


def _predict_std(model: TrainedModel, z: np.ndarray):
    """Family dispatch on an already-standardized vector -> (class_index, confidence)."""
    params = model.params
    if model.family == "centroid":
        dist = np.linalg.norm(params["centroids"] - z, axis=1) / math.sqrt(len(z))
        weights = np.exp(-(dist - dist.min()) / _SOFTMIN_TAU)
        idx = int(np.argmin(dist))
        return idx, float(weights[idx] / weights.sum())
    if model.family == "knn":
        dist = np.linalg.norm(params["x"] - z, axis=1)
        order = np.argsort(dist, kind="stable")[: params["k"]]
        w = 1.0 / np.maximum(dist[order], 1e-12)
        scores = np.zeros(len(model.classes))
        np.add.at(scores, params["y"][order], w)
        idx = int(np.argmax(scores))
        return idx, float(scores[idx] / scores.sum())
    if model.family == "ensemble":
        votes = np.zeros(len(model.classes))
        for tree in params["trees"]:
            node = tree
            while "leaf" not in node:
                node = node["lo"] if z[node["f"]] <= node["t"] else node["hi"]
            votes[node["leaf"]] += 1.0
        idx = int(np.argmax(votes))
        return idx, float(votes[idx] / votes.sum())
    raise ValueError("unknown model family %r" % model.family)


def train_pool(
    dataset,
    keys,
    family: str = "knn",
    seed: int = 0,
    plan: FeaturePlan | None = None,
    half_rate_dataset=None,
    family_params: dict | None = None,
) -> ModelPool:
    """Train one model per key on a labeled FeatureVector dataset.

    The 70/30 train/holdout split is drawn once from the seed and shared by
    every key, so held-out accuracies are paired across pool entries. When
    ``half_rate_dataset`` is given (same window_ids, features extracted from
    2x-downsampled signals), any modality whose count in a key is below the
    plan's full count takes its columns from there instead; those models
    serve halved-rate sensing configurations and should be trained on what
    they will see.
    """
    plan = plan or default_plan()
    rows = sorted(
        (v for v in dataset if v.label is not None), key=lambda v: v.window_id
    )
    if len(rows) < 4:
        raise ValueError("need at least 4 labeled vectors, got %d" % len(rows))
    labels = np.array([int(v.label) for v in rows])
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ValueError("training dataset covers a single class")
    class_index = {c: i for i, c in enumerate(classes)}
    yi = np.array([class_index[int(v.label)] for v in rows])

    half_rows = None
    if half_rate_dataset is not None:
        half_rows = sorted(half_rate_dataset, key=lambda v: v.window_id)
        if [v.window_id for v in half_rows] != [v.window_id for v in rows]:
            raise ValueError("half-rate dataset window_ids do not match dataset")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(rows))
    n_holdout = max(1, int(round(0.3 * len(rows))))
    test_idx = np.sort(perm[:n_holdout])
    train_idx = np.sort(perm[n_holdout:])
    for part, part_name in ((train_idx, "train"), (test_idx, "holdout")):
        if len(np.unique(yi[part])) < len(classes):
            raise ValueError(
                "seeded split leaves the %s side short of a class; "
                "use more data or another seed" % part_name
            )

    dshash = _dataset_hash(rows)
    full_counts = {
        m: plan.k.get(m, len(FEATURE_TEMPLATES[m])) for m in MODALITY_ORDER
    }
    table_cache: dict = {}

    def tables(modality, count):
        use_half = half_rows is not None and count != full_counts.get(modality)
        cache_key = (modality, use_half)
        if cache_key not in table_cache:
            source = half_rows if use_half else rows
            table_cache[cache_key] = _block_table(source, modality)
        return table_cache[cache_key]

    key_list = sorted(set(keys), key=lambda k: k.name)
    if not key_list:
        raise ValueError("no keys to train")
    models: dict = {}
    for key in key_list:
        names, X = _key_matrix(key, plan, tables)
        Xtr, Xte = X[train_idx], X[test_idx]
        mu = Xtr.mean(axis=0)
        sd = Xtr.std(axis=0)
        scale = np.where(sd > 1e-12, sd, 1.0)
        Ztr = np.clip((Xtr - mu) / scale, -_Z_CLIP, _Z_CLIP)

        digest = int.from_bytes(hashlib.sha256(key.name.encode()).digest()[:8], "big")
        key_rng = np.random.default_rng([seed, digest])
        params = _fit_family(family, Ztr, yi[train_idx], len(classes), key_rng, family_params)

        model = TrainedModel(
            key=key,
            family=family,
            feature_names=names,
            classes=classes,
            scaler_mean=mu,
            scaler_scale=scale,
            params=params,
            train_meta={
                "seed": int(seed),
                "dataset_hash": dshash,
                "holdout_accuracy": 0.0,
                "n_train": int(len(train_idx)),
                "n_holdout": int(len(test_idx)),
            },
            inference_cost_mops=max(
                len(names) * FAMILY_COST_PER_FEATURE_MOPS[family], 1e-9
            ),
        )
        hits = 0
        for row, want in zip(Xte, yi[test_idx]):
            idx, _ = _predict_std(model, model.standardize(row))
            hits += int(idx == want)
        model.train_meta["holdout_accuracy"] = hits / len(test_idx)
        models[key] = model

    meta = {
        "seed": int(seed),
        "family": family,
        "dataset_hash": dshash,
        "n_vectors": len(rows),
        "classes": list(classes),
    }
    return ModelPool(models=models, plan=plan, meta=meta)


# ---------------------------------------------------------------------------
# inference

def predict(model: TrainedModel, features: FeatureVector) -> Prediction:
    """Deterministic label + confidence for one feature vector."""
    have = dict(zip(features.names(), features.concat()))
    missing = [n for n in model.feature_names if n not in have]
    if missing:
        raise ValueError(
            "feature vector lacks %d features required by %s (first: %s)"
            % (len(missing), model.key.name, missing[0])
        )
    x = np.array([have[n] for n in model.feature_names], dtype=float)
    idx, conf = _predict_std(model, model.standardize(x))
    return Prediction(
        label=model.classes[idx],
        confidence=conf,
        model_key=model.key,
        exited_at_tier=1,
        cost_mops=model.inference_cost_mops,
    )


def tiered_predict(tiers, features: FeatureVector, confidence_threshold: float) -> Prediction:
    """Run a cost-ordered model stack with confidence-gated early exit.

    Tiers are evaluated in the order given; the first prediction whose
    confidence reaches the threshold is returned, else the last tier's.
    ``cost_mops`` accumulates over every tier actually evaluated, so a
    threshold of 0 costs exactly tier one.
    """
    tiers = list(tiers)
    if not tiers:
        raise ValueError("tiered_predict needs at least one tier")
    if not 0.0 <= confidence_threshold <= 1.0:
        raise ValueError("confidence_threshold must be in [0, 1]")
    spent = 0.0
    pred = None
    for i, model in enumerate(tiers, start=1):
        pred = predict(model, features)
        spent += model.inference_cost_mops
        if pred.confidence >= confidence_threshold:
            return replace(pred, exited_at_tier=i, cost_mops=spent)
    return replace(pred, exited_at_tier=len(tiers), cost_mops=spent)


def evaluate(model_or_tiers, vectors, confidence_threshold: float | None = None) -> dict:
    """Exact-match accuracy, mean confidence, and mean cost over a labeled set."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("evaluate needs a non-empty set")
    if isinstance(model_or_tiers, TrainedModel):
        tiers = [model_or_tiers]
        threshold = 0.0
    else:
        tiers = list(model_or_tiers)
        if not tiers:
            raise ValueError("evaluate needs at least one model")
        if confidence_threshold is None:
            raise ValueError("a tier stack needs a confidence_threshold")
        threshold = confidence_threshold
    classes = set(tiers[-1].classes)
    hits = 0
    conf_sum = 0.0
    cost_sum = 0.0
    tier_sum = 0.0
    for v in vectors:
        if v.label is None or v.label not in classes:
            raise ValueError(
                "label %r of %r outside trained classes %s"
                % (v.label, v.window_id, sorted(classes))
            )
        pred = tiered_predict(tiers, v, threshold)
        hits += int(pred.label == v.label)
        conf_sum += pred.confidence
        cost_sum += pred.cost_mops
        tier_sum += pred.exited_at_tier
    n = len(vectors)
    return {
        "accuracy": hits / n,
        "mean_confidence": conf_sum / n,
        "mean_cost_mops": cost_sum / n,
        "mean_exited_at_tier": tier_sum / n,
        "n": n,
    }


# ---------------------------------------------------------------------------
# persistence

_POOL_FORMAT = 1


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        if obj.dtype.kind in "iu":
            return [int(v) for v in obj.tolist()] if obj.ndim == 1 else [
                _to_jsonable(row) for row in obj
            ]
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _dump_json(payload, path) -> None:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
        fh.write("\n")


def save_pool(pool: ModelPool, directory) -> None:
    """One JSON file per model plus a manifest, byte-stable across re-runs."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": _POOL_FORMAT,
        "meta": _to_jsonable(pool.meta),
        "plan": {
            "rankings": {m: list(r) for m, r in sorted(pool.plan.rankings.items())},
            "k": {m: int(v) for m, v in sorted(pool.plan.k.items())},
            "reduced": {m: int(v) for m, v in sorted(pool.plan.reduced.items())},
        },
        "models": {},
    }
    for key in sorted(pool.models, key=lambda k: k.name):
        model = pool.models[key]
        fname = key.name + ".json"
        payload = {
            "format": _POOL_FORMAT,
            "key": key.name,
            "family": model.family,
            "feature_names": list(model.feature_names),
            "classes": list(model.classes),
            "scaler_mean": _to_jsonable(model.scaler_mean),
            "scaler_scale": _to_jsonable(model.scaler_scale),
            "params": _to_jsonable(model.params),
            "train_meta": _to_jsonable(model.train_meta),
            "inference_cost_mops": float(model.inference_cost_mops),
        }
        _dump_json(payload, os.path.join(directory, fname))
        manifest["models"][key.name] = {
            "file": fname,
            "family": model.family,
            "holdout_accuracy": model.train_meta["holdout_accuracy"],
            "inference_cost_mops": float(model.inference_cost_mops),
            "n_features": len(model.feature_names),
        }
    _dump_json(manifest, os.path.join(directory, "manifest.json"))


def _params_from_json(family, params):
    if family == "centroid":
        return {"centroids": np.array(params["centroids"], dtype=float)}
    if family == "knn":
        return {
            "k": int(params["k"]),
            "x": np.array(params["x"], dtype=float),
            "y": np.array(params["y"], dtype=int),
        }
    return params


def load_pool(directory) -> ModelPool:
    with open(os.path.join(directory, "manifest.json"), encoding="ascii") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _POOL_FORMAT:
        raise ValueError("unsupported pool format %r" % manifest.get("format"))
    plan_raw = manifest["plan"]
    plan = FeaturePlan(
        rankings={m: tuple(r) for m, r in plan_raw["rankings"].items()},
        k={m: int(v) for m, v in plan_raw["k"].items()},
        reduced={m: int(v) for m, v in plan_raw["reduced"].items()},
    )
    models = {}
    for name, entry in manifest["models"].items():
        with open(os.path.join(directory, entry["file"]), encoding="ascii") as fh:
            payload = json.load(fh)
        key = ModelKey.from_name(payload["key"])
        models[key] = TrainedModel(
            key=key,
            family=payload["family"],
            feature_names=tuple(payload["feature_names"]),
            classes=tuple(int(c) for c in payload["classes"]),
            scaler_mean=np.array(payload["scaler_mean"], dtype=float),
            scaler_scale=np.array(payload["scaler_scale"], dtype=float),
            params=_params_from_json(payload["family"], payload["params"]),
            train_meta=payload["train_meta"],
            inference_cost_mops=float(payload["inference_cost_mops"]),
        )
    return ModelPool(models=models, plan=plan, meta=manifest.get("meta", {}))
