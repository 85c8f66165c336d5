"""Sense-compute co-optimization loop.

Each 60 s window, the controller reads the blind quality labels and moves
two knobs at once. The sensing knob throttles the sensor itself: an
Unreliable modality is switched off entirely, a Noisy one keeps reporting
but at half its nominal rate. The compute knob swaps the classifier: the
model pool holds one entry per sensing configuration, so dropping or
shrinking a modality never means feeding a model inputs it was not trained
for. A baseline mode ignores quality entirely and always ships full-rate
data into the full-modality model; speedup and data-reduction figures are
ratios against that baseline.

Latency is a modeled compute proxy, not wall clock: per-window work in
Mops (a fixed windowing overhead, a per-sample term for filtering and
spectral transforms, plus the chosen model's inference cost) divided by the
edge node's service rate. Data volume is exact integer arithmetic over
delivered samples. Both are deterministic, so scenario outcomes reproduce
bit-for-bit from their seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

from .features import (
    MODALITY_ORDER,
    FeaturePlan,
    FeatureVector,
    aggregate,
    default_plan,
    extract_features,
    rank_features,
)
from .modalities import get_modality
from .models import ModelKey, ModelPool, default_keys, predict, train_pool
from .quality import QualityReport, RELIABLE, NOISY, UNRELIABLE, assess_modalities
from .seeding import child_seed
from .signals import (
    NoiseScenario,
    NoiseSpec,
    downsample_signal,
    generate_window,
    inject_noise,
)

__all__ = [
    "WINDOW_OVERHEAD_MOPS",
    "MOPS_PER_SAMPLE",
    "RATE_DIVISORS",
    "ModalitySensing",
    "SensingConfig",
    "ComputePlan",
    "SeedOutcome",
    "ScenarioOutcome",
    "full_sensing",
    "select_plan",
    "data_volume",
    "compute_cost_mops",
    "build_training_data",
    "build_default_pool",
    "run_scenario",
]

# Per-window cost model, in Mops: fixed cost of windowing, detrending and
# quality assessment, plus work proportional to the number of delivered
# samples (filter banks and spectral transforms), plus the model's own
# inference cost. The scale is chosen so a full-rate three-modality window
# is dominated by the per-sample term, matching how the pipeline's real
# cost shifts when sensing is throttled.
WINDOW_OVERHEAD_MOPS = 300.0
MOPS_PER_SAMPLE = 0.075

# The sensing knob is discrete: full rate, half, or quarter.
RATE_DIVISORS = (1, 2, 4)

_DEFAULT_WINDOW_S = 60.0
_MODES = ("amser", "baseline")


@dataclass(frozen=True)
class ModalitySensing:
    """Sensing state of one modality: on/off and the delivered rate."""

    enabled: bool
    sampling_rate_hz: float


@dataclass
class SensingConfig:
    """Per-modality sensing settings; at least one modality must be on.

    Rates are restricted to the discrete knob positions: the nominal rate
    divided by 1, 2, or 4.
    """

    channels: dict[str, ModalitySensing]

    def __post_init__(self):
        if not any(ch.enabled for ch in self.channels.values()):
            raise ValueError("at least one modality must stay enabled")
        for m, ch in self.channels.items():
            nominal = get_modality(m).fs_hz
            if not any(
                math.isclose(ch.sampling_rate_hz, nominal / d)
                for d in RATE_DIVISORS
            ):
                raise ValueError(
                    "rate %g Hz for %r is not nominal/%s"
                    % (ch.sampling_rate_hz, m, "/".join(map(str, RATE_DIVISORS)))
                )

    def enabled_modalities(self) -> tuple:
        return tuple(
            m for m in sorted(self.channels, key=_modality_rank)
            if self.channels[m].enabled
        )

    def rate_for(self, modality: str) -> float:
        return self.channels[modality].sampling_rate_hz


@dataclass
class ComputePlan:
    """Feature selection plus the pool model that will consume it."""

    plan: FeaturePlan
    model_key: ModelKey
    tier_threshold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tier_threshold <= 1.0:
            raise ValueError("tier_threshold must be in [0, 1]")
        for m, count in self.model_key.counts:
            full = self.plan.k.get(m, len(self.plan.rankings.get(m, ())))
            reduced = self.plan.reduced.get(m, full)
            if count not in (full, reduced):
                raise ValueError(
                    "key %s asks %d %s features; plan offers %d full / %d reduced"
                    % (self.model_key.name, count, m, full, reduced)
                )


@dataclass
class SeedOutcome:
    """Aggregates for one seed's window stream."""

    seed: int
    n_windows: int
    accuracy: float
    mean_latency_proxy_s: float
    speedup_vs_baseline: float
    data_volume_bytes: int
    data_reduction_vs_baseline: float


@dataclass
class ScenarioOutcome:
    """One scenario under one mode, aggregated over every window."""

    scenario_id: str
    mode: str
    accuracy: float
    mean_latency_proxy_s: float
    speedup_vs_baseline: float
    data_volume_bytes: int
    data_reduction_vs_baseline: float
    n_windows: int
    per_seed: tuple = ()
    window_predictions: tuple = ()


def _modality_rank(m: str) -> int:
    try:
        return MODALITY_ORDER.index(m)
    except ValueError:
        return len(MODALITY_ORDER)


def full_sensing(modalities=MODALITY_ORDER) -> SensingConfig:
    """Everything on at nominal rate: the baseline configuration."""
    return SensingConfig(
        {m: ModalitySensing(True, get_modality(m).fs_hz) for m in modalities}
    )


def select_plan(report: QualityReport, pool: ModelPool):
    """Map quality labels to a sensing config and a matching compute plan.

    Reliable keeps a modality at full rate and full feature count, Noisy
    halves its rate and shrinks it to the plan's reduced count, Unreliable
    disables it. The resulting model key must exist in the pool; a missing
    key means the pool was not trained for closure over reachable labels.
    """
    if not pool.models:
        raise ValueError("model pool is empty")
    plan = pool.plan
    channels = {}
    pairs = []
    for m in sorted(report.entries, key=_modality_rank):
        label = report.label(m)
        nominal = get_modality(m).fs_hz
        if label == UNRELIABLE:
            channels[m] = ModalitySensing(False, nominal)
        elif label == NOISY:
            channels[m] = ModalitySensing(True, nominal / 2)
            pairs.append((m, plan.reduced[m]))
        elif label == RELIABLE:
            channels[m] = ModalitySensing(True, nominal)
            pairs.append((m, plan.k[m]))
        else:
            raise ValueError("unknown quality label %r for %r" % (label, m))
    if not pairs:
        raise ValueError(
            "every modality is Unreliable; no usable sensing configuration"
        )
    key = ModelKey(tuple(pairs))
    pool.get(key)  # raises KeyError on a closure violation
    return SensingConfig(channels), ComputePlan(plan, key)


def _delivered_samples(config: SensingConfig, window_s: float) -> int:
    total = 0
    for m in config.enabled_modalities():
        exact = Fraction(config.rate_for(m)) * Fraction(window_s)
        total += math.floor(exact)
    return total


def data_volume(config: SensingConfig, window_s: float,
                bytes_per_sample: int = 2) -> int:
    """Bytes shipped off the sensors for one window, exact.

    Sample counts come from integer arithmetic on exact rationals (whole
    samples only), never from float rounding.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if bytes_per_sample < 1:
        raise ValueError("bytes_per_sample must be at least 1")
    return _delivered_samples(config, window_s) * int(bytes_per_sample)


def compute_cost_mops(config: SensingConfig, inference_cost_mops: float,
                      window_s: float = _DEFAULT_WINDOW_S) -> float:
    """Modeled per-window compute work in Mops."""
    return (
        WINDOW_OVERHEAD_MOPS
        + MOPS_PER_SAMPLE * _delivered_samples(config, window_s)
        + inference_cost_mops
    )


# ---------------------------------------------------------------------------
# pool construction

def build_training_data(n_windows: int = 200, seed: int = 0,
                        window_s: float = _DEFAULT_WINDOW_S,
                        wander_snr_db: float = 8.0,
                        modalities=MODALITY_ORDER):
    """Paired training sets: clean full-rate and degraded half-rate.

    Both sets share window ids and labels. The half-rate twin carries
    moderate baseline wander and a 2x downsample on every modality: the
    input distribution a reduced model actually serves once the Noisy knob
    has fired. Class labels alternate window by window.
    """
    if n_windows < 4:
        raise ValueError("need at least 4 windows")
    full, half = [], []
    wander = NoiseSpec(kind="wander", target_snr_db=wander_snr_db)
    for i in range(n_windows):
        label = i % 2
        window_id = "w%04d" % i
        blocks_full, blocks_half = {}, {}
        for m in modalities:
            sig = generate_window(
                m, label, window_s, seed=child_seed(seed, "train", str(i), m)
            )
            blocks_full[m] = extract_features(sig)
            noisy = inject_noise(
                sig, wander, seed=child_seed(seed, "train-noise", str(i), m)
            )
            blocks_half[m] = extract_features(downsample_signal(noisy, 2))
        full.append(FeatureVector(window_id, blocks_full, label))
        half.append(FeatureVector(window_id, blocks_half, label))
    return full, half


def build_default_pool(n_windows: int = 200, seed: int = 0,
                       family: str = "knn",
                       window_s: float = _DEFAULT_WINDOW_S,
                       wander_snr_db: float = 8.0,
                       reduced_counts: dict | None = None) -> ModelPool:
    """Train the full closed pool from scratch.

    Feature rankings are computed on the degraded half-rate set, so the
    reduced counts keep features that still separate classes after the
    sensing knob has fired, rather than features that only look good on
    clean full-rate data.
    """
    full, half = build_training_data(
        n_windows=n_windows, seed=seed, window_s=window_s,
        wander_snr_db=wander_snr_db,
    )
    plan = default_plan()
    if reduced_counts is not None:
        plan = replace(plan, reduced={m: int(v) for m, v in reduced_counts.items()})
    for m in MODALITY_ORDER:
        plan = plan.with_ranking(m, rank_features(half, m))
    return train_pool(
        full, default_keys(plan), family=family, seed=seed, plan=plan,
        half_rate_dataset=half,
    )


# ---------------------------------------------------------------------------
# scenario runs

def _stream_lengths(n_windows: int, n_seeds: int) -> list:
    base, extra = divmod(n_windows, n_seeds)
    return [base + (1 if i < extra else 0) for i in range(n_seeds)]


def run_scenario(scenario: NoiseScenario, seeds, mode: str, pool: ModelPool,
                 n_windows: int = 200, window_s: float = _DEFAULT_WINDOW_S,
                 theta_noisy_db: float = 15.0, theta_drop_db: float = 5.0,
                 hysteresis_db: float = 1.0,
                 bytes_per_sample: int = 2,
                 edge_speed_mops: float | None = None) -> ScenarioOutcome:
    """Run one noise scenario end to end under one control mode.

    Windows are distributed across the given seeds; each seed's stream is
    sequential (quality labels carry hysteresis state from window to
    window) while separate seeds are independent. In ``amser`` mode every
    window goes through assess, plan selection, sensing actuation, and the
    matching pool model; in ``baseline`` mode quality is ignored and the
    full-rate full-modality pipeline runs throughout. Speedup and data
    reduction are ratios of the baseline configuration's cost and volume
    to the mode's own. Volumes are integers, so the baseline mode's data
    reduction is exactly 1.0; its speedup equals 1.0 only up to float
    rounding in the cost mean.
    """
    if mode not in _MODES:
        raise ValueError("mode must be one of %s" % (_MODES,))
    seeds = tuple(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if n_windows < 1:
        raise ValueError("n_windows must be at least 1")
    if not pool.models:
        raise ValueError("model pool is empty")
    if edge_speed_mops is None:
        from .edgesim import default_topology

        edge_speed_mops = default_topology().nodes["edge"].speed_mops_per_s

    plan = pool.plan
    modalities = tuple(m for m in MODALITY_ORDER if m in plan.rankings)
    baseline_config = full_sensing(modalities)
    full_key = ModelKey(tuple((m, plan.k[m]) for m in modalities))
    full_model = pool.get(full_key)
    base_cost = compute_cost_mops(
        baseline_config, full_model.inference_cost_mops, window_s
    )
    base_bytes = data_volume(baseline_config, window_s, bytes_per_sample)

    per_seed = []
    predictions = []
    total_hits = total_cost = 0.0
    total_bytes = 0
    for seed, length in zip(seeds, _stream_lengths(n_windows, len(seeds))):
        prev_report = None
        hits = 0
        cost_sum = 0.0
        bytes_sum = 0
        for j in range(length):
            label = j % 2
            raw = {}
            for m in modalities:
                sig = generate_window(
                    m, label, window_s,
                    seed=child_seed(seed, "window", str(j), m),
                )
                spec = scenario.spec_for(m)
                if spec.kind != "none":
                    sig = inject_noise(
                        sig, spec, seed=child_seed(seed, "noise", str(j), m)
                    )
                raw[m] = sig

            if mode == "amser":
                report = assess_modalities(
                    raw, theta_noisy_db, theta_drop_db, hysteresis_db,
                    previous=prev_report,
                )
                prev_report = report
                config, cplan = select_plan(report, pool)
                blocks = {}
                for m in config.enabled_modalities():
                    nominal = get_modality(m).fs_hz
                    factor = int(round(nominal / config.rate_for(m)))
                    sig = raw[m] if factor == 1 else downsample_signal(raw[m], factor)
                    blocks[m] = extract_features(sig)
                vector = aggregate(
                    blocks, report, plan, window_id="s%d-w%03d" % (seed, j),
                    label=label,
                )
                model = pool.get(cplan.model_key)
            else:
                config = baseline_config
                model = full_model
                blocks = {m: extract_features(raw[m]) for m in modalities}
                vector = FeatureVector("s%d-w%03d" % (seed, j), blocks, label)

            pred = predict(model, vector)
            predictions.append(int(pred.label))
            hits += int(pred.label == label)
            cost_sum += compute_cost_mops(
                config, model.inference_cost_mops, window_s
            )
            bytes_sum += data_volume(config, window_s, bytes_per_sample)

        mean_cost = cost_sum / length
        per_seed.append(SeedOutcome(
            seed=seed,
            n_windows=length,
            accuracy=hits / length,
            mean_latency_proxy_s=mean_cost / edge_speed_mops,
            speedup_vs_baseline=base_cost / mean_cost,
            data_volume_bytes=bytes_sum,
            data_reduction_vs_baseline=base_bytes * length / bytes_sum,
        ))
        total_hits += hits
        total_cost += cost_sum
        total_bytes += bytes_sum

    mean_cost = total_cost / n_windows
    return ScenarioOutcome(
        scenario_id=scenario.id,
        mode=mode,
        accuracy=total_hits / n_windows,
        mean_latency_proxy_s=mean_cost / edge_speed_mops,
        speedup_vs_baseline=base_cost / mean_cost,
        data_volume_bytes=total_bytes,
        data_reduction_vs_baseline=base_bytes * n_windows / total_bytes,
        n_windows=n_windows,
        per_seed=tuple(per_seed),
        window_predictions=tuple(predictions),
    )
