"""Per-modality feature extraction, ranking, and quality-aware aggregation.

Templates are parameterized families: shared time-domain statistics,
per-modality spectral band powers with normalized ratios and shape
summaries, beat-interval (HRV) features for the pulsatile modalities, and
tonic/phasic decomposition summaries for EDA. The family parameters are
chosen so the defaults come out at exactly 52 (ecg), 42 (eda), and 42 (ppg)
features; the counts are the interface contract, the identities are ours.

Undefined values (say RMSSD on a window with two detectable beats) are
imputed to zero and tracked in a parallel validity mask, so downstream
numeric code never sees NaN or Inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sp_signal
from scipy import stats as sp_stats

from .modalities import get_modality
from .quality import RELIABLE, UNRELIABLE, QualityReport, compute_rmssd, detect_peaks
from .signals import Signal

__all__ = [
    "FeatureBlock",
    "FeatureVector",
    "FeaturePlan",
    "FEATURE_TEMPLATES",
    "DEFAULT_REDUCED_COUNTS",
    "RATE_INSENSITIVE",
    "MODALITY_ORDER",
    "default_plan",
    "extract_features",
    "rank_features",
    "aggregate",
    "write_features_csv",
    "read_features_csv",
]

MODALITY_ORDER = ("ecg", "eda", "ppg")

_STAT_NAMES = (
    "mean",
    "std",
    "rms",
    "min",
    "max",
    "ptp",
    "median",
    "iqr",
    "mad",
    "skew",
    "kurtosis",
    "zcr",
)

_BANDS = {
    "ecg": (
        (0.05, 0.5),
        (0.5, 4.0),
        (4.0, 8.0),
        (8.0, 15.0),
        (15.0, 25.0),
        (25.0, 35.0),
        (35.0, 45.0),
        (45.0, 50.0),
    ),
    "ppg": (
        (0.05, 0.5),
        (0.5, 1.5),
        (1.5, 3.0),
        (3.0, 5.0),
        (5.0, 8.0),
        (8.0, 12.0),
    ),
    "eda": (
        (0.01, 0.05),
        (0.05, 0.25),
        (0.25, 0.5),
        (0.5, 1.0),
        (1.0, 2.0),
    ),
}

# spectral shape features appended after the band powers/ratios
_SHAPE_NAMES = {
    "ecg": ("centroid", "flatness", "sef50", "sef90"),
    "ppg": ("centroid", "flatness", "sef50", "sef90"),
    "eda": ("centroid", "flatness"),
}

_HRV_NAMES = {
    "ecg": (
        "peak_rate_hz",
        "mean_rr",
        "median_rr",
        "sdnn",
        "rmssd",
        "cv_rr",
        "iqr_rr",
        "rr_min",
        "rr_max",
        "rr_range",
        "rr_mad",
        "pnn20",
        "pnn50",
        "sd1",
        "sd2",
        "sd_ratio",
        "hr_mean",
        "hr_std",
        "hr_min",
        "hr_max",
    ),
    "ppg": (
        "peak_rate_hz",
        "mean_rr",
        "median_rr",
        "sdnn",
        "rmssd",
        "cv_rr",
        "iqr_rr",
        "rr_min",
        "rr_max",
        "pnn20",
        "pnn50",
        "sd1",
        "sd2",
        "hr_mean",
    ),
}

_EDA_NAMES = (
    "tonic_mean",
    "tonic_std",
    "tonic_slope",
    "tonic_min",
    "tonic_max",
    "tonic_range",
    "phasic_rms",
    "phasic_max",
    "phasic_energy",
    "phasic_skew",
    "phasic_kurtosis",
    "phasic_zcr",
    "scr_count",
    "scr_rate_per_min",
    "scr_amp_mean",
    "scr_amp_max",
    "scr_amp_std",
    "scr_amp_sum",
)


def _band_names(modality: str) -> tuple:
    names = []
    for lo, hi in _BANDS[modality]:
        names.append(f"bp_{lo:g}_{hi:g}")
    for lo, hi in _BANDS[modality]:
        names.append(f"bpr_{lo:g}_{hi:g}")
    return tuple(names) + _SHAPE_NAMES[modality]


def _template(modality: str) -> tuple:
    names = _STAT_NAMES + _band_names(modality)
    if modality in _HRV_NAMES:
        names = names + _HRV_NAMES[modality]
    if modality == "eda":
        names = names + _EDA_NAMES
    return names


FEATURE_TEMPLATES = {m: _template(m) for m in MODALITY_ORDER}
assert tuple(len(FEATURE_TEMPLATES[m]) for m in MODALITY_ORDER) == (52, 42, 42)

# Reduced counts used when a modality is flagged Noisy: 12 for ecg, a
# quarter of the template (rounded up) elsewhere.
DEFAULT_REDUCED_COUNTS = {
    "ecg": 12,
    "eda": int(np.ceil(0.25 * len(FEATURE_TEMPLATES["eda"]))),
    "ppg": int(np.ceil(0.25 * len(FEATURE_TEMPLATES["ppg"]))),
}

# Features whose values survive a properly anti-aliased (FIR) 2x downsample
# within 1% on clean windows: beat-interval averages, slow-trend levels, and
# normalized band ratios whose bands sit fully inside the reduced Nyquist.
# Everything else (absolute powers, quantile-style interval statistics that
# move by one sample quantum, SCR shape features near the reduced Nyquist)
# is considered rate-sensitive and carries no cross-rate promise.
RATE_INSENSITIVE = {
    "ecg": ("peak_rate_hz", "mean_rr", "hr_mean"),
    "ppg": ("peak_rate_hz", "mean_rr", "hr_mean", "bpr_0.5_1.5", "bpr_1.5_3"),
    "eda": ("mean", "rms", "tonic_mean"),
}


@dataclass
class FeatureBlock:
    modality: str
    names: tuple
    values: np.ndarray
    validity: np.ndarray  # bool per feature; False where the value was imputed

    def __len__(self) -> int:
        return len(self.names)


@dataclass
class FeatureVector:
    window_id: str
    blocks: dict[str, FeatureBlock]
    label: int | None = None

    def concat(self) -> np.ndarray:
        parts = [self.blocks[m].values for m in MODALITY_ORDER if m in self.blocks]
        return np.concatenate(parts) if parts else np.empty(0)

    def names(self) -> tuple:
        out = []
        for m in MODALITY_ORDER:
            if m in self.blocks:
                out.extend(f"{m}.{n}" for n in self.blocks[m].names)
        return tuple(out)

    def __len__(self) -> int:
        return sum(len(b) for b in self.blocks.values())


@dataclass(frozen=True)
class FeaturePlan:
    """Ranked feature names plus how many to keep, per modality."""

    rankings: dict[str, tuple]
    k: dict[str, int] = field(default_factory=dict)
    reduced: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_REDUCED_COUNTS))

    def __post_init__(self):
        for m, ranking in self.rankings.items():
            template = FEATURE_TEMPLATES.get(m)
            if template is None:
                raise ValueError("no feature template for modality %r" % m)
            if sorted(ranking) != sorted(template):
                raise ValueError(
                    "ranking for %r is not a permutation of its template" % m
                )
            for count, what in ((self.k.get(m), "k"), (self.reduced.get(m), "reduced")):
                if count is not None and not 1 <= count <= len(template):
                    raise ValueError(
                        "%s for %r must be in [1, %d]" % (what, m, len(template))
                    )

    def active_names(self, modality: str, count: int | None = None) -> tuple:
        ranking = self.rankings[modality]
        if count is None:
            count = self.k.get(modality, len(ranking))
        return tuple(ranking[:count])

    def with_ranking(self, modality: str, ranking) -> "FeaturePlan":
        rankings = dict(self.rankings)
        rankings[modality] = tuple(ranking)
        return replace(self, rankings=rankings)


def default_plan() -> FeaturePlan:
    """Template-order rankings, full counts, stock reduced counts."""
    return FeaturePlan(
        rankings={m: FEATURE_TEMPLATES[m] for m in MODALITY_ORDER},
        k={m: len(FEATURE_TEMPLATES[m]) for m in MODALITY_ORDER},
    )


def _safe(value) -> float:
    v = float(value)
    return v if np.isfinite(v) else 0.0


def _stat_features(x: np.ndarray) -> dict:
    x0 = x - np.mean(x)
    sd = float(np.std(x))
    out = {
        "mean": float(np.mean(x)),
        "std": sd,
        "rms": float(np.sqrt(np.mean(x**2))),
        "min": float(np.min(x)),
        "max": float(np.max(x)),
        "ptp": float(np.ptp(x)),
        "median": float(np.median(x)),
        "iqr": float(np.percentile(x, 75) - np.percentile(x, 25)),
        "mad": float(np.median(np.abs(x - np.median(x)))),
        "skew": _safe(sp_stats.skew(x)) if sd > 0 else 0.0,
        "kurtosis": _safe(sp_stats.kurtosis(x)) if sd > 0 else 0.0,
        "zcr": float(np.mean(np.diff(np.signbit(x0)) != 0)) if len(x) > 1 else 0.0,
    }
    return out


def _spectral_features(x: np.ndarray, fs: float, modality: str) -> dict:
    nperseg = int(min(len(x), round(32.0 * fs)))
    freqs, psd = sp_signal.welch(x, fs=fs, nperseg=max(nperseg, 8))
    df = freqs[1] - freqs[0] if len(freqs) > 1 else 1.0
    out = {}
    powers = []
    for lo, hi in _BANDS[modality]:
        sel = (freqs >= lo) & (freqs < hi)
        powers.append(float(np.sum(psd[sel]) * df))
    total = float(sum(powers))
    for (lo, hi), p in zip(_BANDS[modality], powers):
        out[f"bp_{lo:g}_{hi:g}"] = p
    for (lo, hi), p in zip(_BANDS[modality], powers):
        out[f"bpr_{lo:g}_{hi:g}"] = p / total if total > 0 else 0.0
    p_all = float(np.sum(psd) * df)
    if p_all > 0:
        out["centroid"] = float(np.sum(freqs * psd) / np.sum(psd))
        out["flatness"] = float(
            np.exp(np.mean(np.log(psd + 1e-30))) / (np.mean(psd) + 1e-30)
        )
        cum = np.cumsum(psd) / np.sum(psd)
        out["sef50"] = float(freqs[int(np.searchsorted(cum, 0.5))])
        out["sef90"] = float(freqs[int(np.searchsorted(cum, 0.9))])
    else:
        out["centroid"] = out["flatness"] = out["sef50"] = out["sef90"] = 0.0
    return {k: out[k] for k in _band_names(modality)}


def _hrv_features(signal: Signal, modality: str) -> tuple[dict, set]:
    names = _HRV_NAMES[modality]
    out = dict.fromkeys(names, 0.0)
    invalid: set = set()
    peaks = detect_peaks(signal)
    duration = signal.duration_s
    out["peak_rate_hz"] = len(peaks) / duration if duration > 0 else 0.0
    if len(peaks) < 3:
        invalid.update(n for n in names if n != "peak_rate_hz")
        return {n: out[n] for n in names}, invalid
    rr = np.diff(peaks)
    dd = np.diff(rr)
    hr = 60.0 / rr
    mean_rr = float(np.mean(rr))
    sdnn = float(np.std(rr))
    vals = {
        "mean_rr": mean_rr,
        "median_rr": float(np.median(rr)),
        "sdnn": sdnn,
        "rmssd": compute_rmssd(peaks),
        "cv_rr": sdnn / mean_rr if mean_rr > 0 else 0.0,
        "iqr_rr": float(np.percentile(rr, 75) - np.percentile(rr, 25)),
        "rr_min": float(np.min(rr)),
        "rr_max": float(np.max(rr)),
        "rr_range": float(np.ptp(rr)),
        "rr_mad": float(np.median(np.abs(rr - np.median(rr)))),
        "pnn20": float(np.mean(np.abs(dd) > 0.020)),
        "pnn50": float(np.mean(np.abs(dd) > 0.050)),
        "sd1": float(np.sqrt(np.var(dd) / 2.0)),
        "hr_mean": float(np.mean(hr)),
        "hr_std": float(np.std(hr)),
        "hr_min": float(np.min(hr)),
        "hr_max": float(np.max(hr)),
    }
    sd2_sq = 2.0 * sdnn**2 - vals["sd1"] ** 2
    vals["sd2"] = float(np.sqrt(max(sd2_sq, 0.0)))
    vals["sd_ratio"] = vals["sd1"] / vals["sd2"] if vals["sd2"] > 0 else 0.0
    for n in names:
        if n in vals:
            out[n] = _safe(vals[n])
    return {n: out[n] for n in names}, invalid


def _eda_features(x: np.ndarray, fs: float) -> dict:
    # tonic = slow moving average; phasic = what is left
    win = max(3, int(round(4.0 * fs)) | 1)
    pad = win // 2
    xp = np.pad(x, pad, mode="edge")
    kernel = np.ones(win) / win
    tonic = np.convolve(xp, kernel, mode="valid")
    phasic = x - tonic
    t = np.arange(len(x)) / fs
    slope = float(np.polyfit(t, tonic, 1)[0]) if len(x) > 1 else 0.0
    p_sd = float(np.std(phasic))
    thr = max(3.0 * float(np.median(np.abs(phasic))), 0.02)
    idx, props = sp_signal.find_peaks(phasic, height=thr, distance=max(1, int(fs)))
    amps = props.get("peak_heights", np.empty(0))
    minutes = len(x) / fs / 60.0
    return {
        "tonic_mean": float(np.mean(tonic)),
        "tonic_std": float(np.std(tonic)),
        "tonic_slope": slope,
        "tonic_min": float(np.min(tonic)),
        "tonic_max": float(np.max(tonic)),
        "tonic_range": float(np.ptp(tonic)),
        "phasic_rms": float(np.sqrt(np.mean(phasic**2))),
        "phasic_max": float(np.max(phasic)),
        "phasic_energy": float(np.sum(phasic**2) / fs),
        "phasic_skew": _safe(sp_stats.skew(phasic)) if p_sd > 0 else 0.0,
        "phasic_kurtosis": _safe(sp_stats.kurtosis(phasic)) if p_sd > 0 else 0.0,
        "phasic_zcr": float(np.mean(np.diff(np.signbit(phasic)) != 0)),
        "scr_count": float(len(idx)),
        "scr_rate_per_min": float(len(idx)) / minutes if minutes > 0 else 0.0,
        "scr_amp_mean": float(np.mean(amps)) if len(amps) else 0.0,
        "scr_amp_max": float(np.max(amps)) if len(amps) else 0.0,
        "scr_amp_std": float(np.std(amps)) if len(amps) else 0.0,
        "scr_amp_sum": float(np.sum(amps)),
    }


def extract_features(signal: Signal, plan: FeaturePlan | None = None) -> FeatureBlock:
    """Compute the feature block for one window.

    With a plan, only the plan's top-k names for this modality are kept, in
    ranking order. Without one, the full template is returned.
    """
    modality = signal.modality.lower()
    if modality not in FEATURE_TEMPLATES:
        raise ValueError("no feature template for modality %r" % signal.modality)
    x = np.asarray(signal.samples, dtype=float)
    fs = signal.sampling_rate_hz
    if len(x) < int(fs):
        raise ValueError("extract_features needs at least 1 s of samples")

    values = dict(_stat_features(x))
    values.update(_spectral_features(x, fs, modality))
    invalid: set = set()
    if modality in _HRV_NAMES:
        hrv, invalid = _hrv_features(signal, modality)
        values.update(hrv)
    if modality == "eda":
        values.update(_eda_features(x, fs))

    if plan is not None:
        if modality not in plan.rankings:
            raise ValueError("plan has no ranking for modality %r" % modality)
        names = plan.active_names(modality)
    else:
        names = FEATURE_TEMPLATES[modality]
    unknown = [n for n in names if n not in values]
    if unknown:
        raise ValueError("plan references unknown features: %s" % ", ".join(unknown))
    vec = np.array([values[n] for n in names], dtype=float)
    valid = np.array([n not in invalid for n in names], dtype=bool)
    return FeatureBlock(modality, tuple(names), vec, valid)


def rank_features(vectors, modality: str) -> tuple:
    """Rank one modality's features by Fisher class-separability ratio.

    Rows are taken in window_id order so the ranking does not depend on how
    the caller shuffled the dataset; exact score ties break by feature
    name.
    """
    rows = sorted(
        (v for v in vectors if modality in v.blocks and v.label is not None),
        key=lambda v: v.window_id,
    )
    if not rows:
        raise ValueError("no labeled vectors carry modality %r" % modality)
    names = rows[0].blocks[modality].names
    mat = np.stack([v.blocks[modality].values for v in rows])
    labels = np.array([v.label for v in rows])
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("rank_features needs at least two classes")

    mu = mat.mean(axis=0)
    between = np.zeros(mat.shape[1])
    within = np.zeros(mat.shape[1])
    for c in classes:
        sel = mat[labels == c]
        between += len(sel) * (sel.mean(axis=0) - mu) ** 2
        within += len(sel) * sel.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = between / within
    score = np.where(within <= 1e-30, np.where(between > 1e-30, np.inf, 0.0), score)
    order = sorted(range(len(names)), key=lambda i: (-score[i], names[i]))
    return tuple(names[i] for i in order)


def aggregate(
    blocks: dict[str, FeatureBlock],
    report: QualityReport,
    plan: FeaturePlan,
    window_id: str = "",
    label: int | None = None,
) -> FeatureVector:
    """Quality-aware concatenation of per-modality blocks.

    Unreliable modalities are dropped outright; Noisy ones are shrunk to
    the plan's reduced count (top of the ranking); Reliable ones keep the
    plan's selected count. Block order is fixed (ecg, eda, ppg) so feature
    positions stay stable across windows.
    """
    out: dict[str, FeatureBlock] = {}
    for m in MODALITY_ORDER:
        if m not in blocks:
            continue
        quality = report.entries.get(m)
        lab = quality.label if quality is not None else RELIABLE
        if lab == UNRELIABLE:
            continue
        if lab == RELIABLE:
            names = plan.active_names(m)
        else:
            names = plan.active_names(m, plan.reduced.get(m, len(plan.rankings[m])))
        block = blocks[m]
        pos = {n: i for i, n in enumerate(block.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise ValueError(
                "block for %r lacks planned features: %s" % (m, ", ".join(missing))
            )
        sel = [pos[n] for n in names]
        out[m] = FeatureBlock(m, tuple(names), block.values[sel], block.validity[sel])
    if not out:
        raise ValueError("no usable input: every modality is Unreliable or missing")
    return FeatureVector(window_id, out, label)


def write_features_csv(vectors, path, header: str | None = None) -> None:
    """Dataset dump: window_id, label, then namespaced feature columns."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("nothing to write")
    names = vectors[0].names()
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(header.rstrip("\n") + "\n")
        fh.write(",".join(("window_id", "label") + names) + "\n")
        for v in vectors:
            if v.names() != names:
                raise ValueError("inconsistent feature layout across vectors")
            label = "" if v.label is None else str(v.label)
            row = ",".join(repr(float(x)) for x in v.concat())
            fh.write(f"{v.window_id},{label},{row}\n")


def read_features_csv(path) -> list:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        header = line.strip().split(",")
        if header[:2] != ["window_id", "label"]:
            raise ValueError("not a feature dataset: bad header")
        names = header[2:]
        by_mod: dict[str, list] = {}
        for full in names:
            m, _, n = full.partition(".")
            by_mod.setdefault(m, []).append(n)
        vectors = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            wid, label = parts[0], parts[1]
            vals = np.array([float(p) for p in parts[2:]], dtype=float)
            blocks = {}
            i = 0
            for m, mod_names in by_mod.items():
                k = len(mod_names)
                blocks[m] = FeatureBlock(
                    m, tuple(mod_names), vals[i : i + k], np.ones(k, dtype=bool)
                )
                i += k
            vectors.append(
                FeatureVector(wid, blocks, None if label == "" else int(label))
            )
    return vectors
