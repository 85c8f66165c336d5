"""Synthetic physiological signal generation and noise injection.

The generators produce seeded, class-conditional windows for three wearable
modalities: a beat train with P/Q/R/S/T-like waves (ecg), a pulse train with
a dicrotic notch (ppg), and a slow tonic level with phasic bursts (eda).
Morphology is kept just realistic enough for feature separability; every
waveform component is rendered with exactly zero area per event so that the
clean signal carries essentially no power inside the low-frequency band used
to measure baseline wander. That property is what makes a blind in-band SNR
estimate workable.

Noise kinds:

* ``none``: identity.
* ``wander``: two sinusoids with random frequencies inside the wander band,
  scaled so the realized clean/noise power ratio hits the requested SNR
  exactly.
* ``wander+artifact``: wander as above, then a contiguous segment is
  overwritten with a high-amplitude band-passed noise burst (motion
  artifact). Ground truth reflects the total realized corruption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .modalities import ModalityInfo, get_modality

__all__ = [
    "CLEAN_SNR_DB",
    "GroundTruth",
    "Signal",
    "NoiseSpec",
    "NoiseScenario",
    "generate_window",
    "inject_noise",
    "downsample_signal",
    "standard_scenarios",
    "write_signal_csv",
    "read_signal_csv",
    "write_signal_bin",
    "read_signal_bin",
]

# Sentinel for "no injected noise" in ground truth. Blind estimates never
# report it; they clamp to a finite ceiling (quality.SNR_CEIL_DB).
CLEAN_SNR_DB = float("inf")

# Frequencies for injected wander are drawn from this sub-band. It sits
# inside the 0.05-0.5 Hz band the estimator integrates, with margin at the
# bottom so windowing leakage stays in-band and margin at the top because
# the clean beat trains have a rising jitter-noise floor toward 0.5 Hz.
WANDER_FREQ_HZ = (0.10, 0.30)


@dataclass
class GroundTruth:
    """What the generator knows and the estimator must not see."""

    class_label: int
    clean_samples: np.ndarray
    injected_noise_power: float
    true_snr_db: float
    true_peak_times_s: np.ndarray
    # (start_s, end_s) of the overwritten artifact segment, when one exists
    artifact_span_s: tuple | None = None

    def snr_consistent(self, rel_tol: float = 1e-9) -> bool:
        """Check true_snr_db against the stored clean/noise powers."""
        if self.injected_noise_power <= 0.0:
            return self.true_snr_db == CLEAN_SNR_DB
        p_clean = float(np.mean(self.clean_samples**2))
        want = 10.0 * np.log10(p_clean / self.injected_noise_power)
        return abs(want - self.true_snr_db) <= rel_tol * max(1.0, abs(want))


@dataclass
class Signal:
    modality: str
    sampling_rate_hz: float
    samples: np.ndarray
    start_time_s: float = 0.0
    truth: GroundTruth | None = None

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sampling_rate_hz

    def times(self) -> np.ndarray:
        n = len(self.samples)
        return self.start_time_s + np.arange(n) / self.sampling_rate_hz


@dataclass(frozen=True)
class NoiseSpec:
    """Noise applied to one modality within a scenario."""

    kind: str = "none"  # none | wander | wander+artifact
    target_snr_db: float = 20.0
    artifact_duration_s: float = 5.0
    artifact_amplitude_scale: float = 6.0

    VALID_KINDS = ("none", "wander", "wander+artifact")

    def __post_init__(self):
        if self.kind not in self.VALID_KINDS:
            raise ValueError("invalid noise kind %r" % (self.kind,))
        if self.kind != "none" and not np.isfinite(self.target_snr_db):
            raise ValueError("target_snr_db must be finite for kind %r" % (self.kind,))


@dataclass(frozen=True)
class NoiseScenario:
    """A named per-modality noise assignment (S1..S4 or custom)."""

    id: str
    specs: dict[str, NoiseSpec] = field(default_factory=dict)

    def __post_init__(self):
        kinds = {m: s.kind for m, s in self.specs.items()}
        n_artifact = sum(1 for k in kinds.values() if k == "wander+artifact")
        sid = self.id.upper()
        if sid == "S1" and any(k != "none" for k in kinds.values()):
            raise ValueError("S1 must assign kind none to every modality")
        if sid == "S2" and any(k != "wander" for k in kinds.values()):
            raise ValueError("S2 must assign wander to every modality")
        if sid == "S3" and n_artifact != 1:
            raise ValueError("S3 must assign wander+artifact to exactly one modality")
        if sid == "S4" and n_artifact != 2:
            raise ValueError("S4 must assign wander+artifact to exactly two modalities")

    def spec_for(self, modality: str) -> NoiseSpec:
        return self.specs.get(modality, NoiseSpec())


def standard_scenarios(
    modalities: tuple[str, ...] = ("ecg", "eda", "ppg"),
    wander_snr_db: float = 8.0,
    artifact_duration_s: float = 5.0,
    artifact_amplitude_scale: float = 6.0,
    artifact_on: tuple[str, ...] = ("ecg", "ppg"),
) -> dict[str, NoiseScenario]:
    """The four stock scenarios.

    S1 leaves everything clean. S2 puts moderate wander on every modality.
    S3 corrupts the first entry of ``artifact_on`` with wander plus a motion
    artifact while the others stay clean; S4 corrupts the first two.
    """
    wander = {
        m: NoiseSpec(kind="wander", target_snr_db=wander_snr_db) for m in modalities
    }
    bad = NoiseSpec(
        kind="wander+artifact",
        target_snr_db=wander_snr_db,
        artifact_duration_s=artifact_duration_s,
        artifact_amplitude_scale=artifact_amplitude_scale,
    )
    s3 = {m: NoiseSpec() for m in modalities}
    s3[artifact_on[0]] = bad
    s4 = {m: NoiseSpec() for m in modalities}
    for m in artifact_on[:2]:
        s4[m] = bad
    return {
        "S1": NoiseScenario("S1", {m: NoiseSpec() for m in modalities}),
        "S2": NoiseScenario("S2", wander),
        "S3": NoiseScenario("S3", s3),
        "S4": NoiseScenario("S4", s4),
    }


def _add_bumps(samples, fs, centers, amps, waves, zero_area_width_s):
    """Accumulate per-event Gaussian wave groups, each with zero net area.

    Each event k places Sum_w A_w*exp(-(t-c_k-o_w)^2/(2s_w^2)) scaled by
    amps[k], plus one wide compensating Gaussian whose amplitude cancels the
    analytic area of the group. Events are rendered circularly (indices taken
    modulo the window length): a beat near either edge keeps its complete,
    zero-area shape instead of being truncated. Truncation would leave net
    per-beat area at the edges, and that puts clean-signal power straight
    into the low-frequency band the noise estimator integrates.
    """
    n = len(samples)
    area = sum(a * s for a, _, s in waves)
    comp_amp = -area / zero_area_width_s
    full = list(waves) + [(comp_amp, 0.0, zero_area_width_s)]
    reach = max(abs(o) + 4.0 * s for _, o, s in full)
    for c, a in zip(centers, amps):
        lo = int(np.floor((c - reach) * fs))
        hi = int(np.ceil((c + reach) * fs)) + 1
        t = np.arange(lo, hi) / fs
        acc = np.zeros(hi - lo)
        for amp_w, off_w, sig_w in full:
            acc += amp_w * np.exp(-0.5 * ((t - c - off_w) / sig_w) ** 2)
        np.add.at(samples, np.arange(lo, hi) % n, a * acc)


def _gen_beat_train(info: ModalityInfo, class_label, duration_s, rng):
    g = info.gen
    fs = info.fs_hz
    lo, hi = g["rate_bpm_range"]
    rate = float(
        np.clip(
            g["rate_bpm"]
            + g["rate_bpm_per_class"] * class_label
            + rng.normal(0.0, g["rate_bpm_sigma"]),
            lo,
            hi,
        )
    )
    jitter_s = (
        max(
            g["beat_jitter_ms"]
            + g["beat_jitter_ms_per_class"] * class_label
            + rng.normal(0.0, g["beat_jitter_ms_sigma"]),
            5.0,
        )
        / 1000.0
    )
    amp = max(
        g["amp"] + g["amp_per_class"] * class_label + rng.normal(0.0, g["amp_sigma"]),
        0.2,
    )
    # beats jitter independently around a regular circular grid (no
    # random-walk accumulation): keeps the pulse-train harmonics spectrally
    # sharp so the clean waveform stays out of the wander measurement band.
    # The beat count tiles the window exactly, which also makes the wrap gap
    # a full period instead of an arbitrary remainder.
    k = max(1, int(round(duration_s * rate / 60.0)))
    period = duration_s / k
    t0 = rng.uniform(0.0, period)
    offsets = rng.normal(0.0, jitter_s, size=k)
    offsets = np.clip(offsets, -3.0 * jitter_s, 3.0 * jitter_s)
    centers = (t0 + np.arange(k) * period + offsets) % duration_s
    amps = amp * (1.0 + g["amp_beat_jitter"] * rng.standard_normal(len(centers)))
    n = int(round(duration_s * fs))
    samples = np.zeros(n)
    _add_bumps(samples, fs, centers, amps, g["waves"], g["zero_area_width_s"])
    peaks = np.sort(centers)
    return samples, peaks


def _gen_eda(info: ModalityInfo, class_label, duration_s, rng):
    g = info.gen
    fs = info.fs_hz
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    level = g["tonic_level"] + g["tonic_level_per_class"] * class_label + rng.normal(
        0.0, g["tonic_level_sigma"]
    )
    f_dr = rng.uniform(*g["drift_freq_hz"])
    ph_dr = rng.uniform(0.0, 2.0 * np.pi)
    samples = level + g["drift_amp"] * np.sin(2.0 * np.pi * f_dr * t + ph_dr)
    lam = (g["burst_rate_per_min"] + g["burst_rate_per_class"] * class_label) * (
        duration_s / 60.0
    )
    n_bursts = int(rng.poisson(lam))
    centers = np.sort(rng.uniform(0.0, duration_s, size=n_bursts))
    width = g["burst_width_s"]
    for c in centers:
        a = max(
            g["burst_amp"]
            + g["burst_amp_per_class"] * class_label
            + rng.normal(0.0, g["burst_amp_sigma"]),
            0.05,
        )
        f_b = rng.uniform(*g["burst_freq_hz"])
        ph = rng.uniform(0.0, 2.0 * np.pi)
        lo = max(0, int(np.floor((c - 4.0 * width) * fs)))
        hi = min(n, int(np.ceil((c + 4.0 * width) * fs)) + 1)
        if hi <= lo:
            continue
        tt = t[lo:hi]
        env = np.exp(-0.5 * ((tt - c) / width) ** 2)
        samples[lo:hi] += a * env * np.sin(2.0 * np.pi * f_b * (tt - c) + ph)
    return samples, np.empty(0)


def generate_window(
    modality: str,
    class_label: int,
    duration_s: float,
    seed: int,
    n_classes: int = 2,
) -> Signal:
    """Generate one clean, labeled signal window.

    Deterministic for fixed arguments: the same seed always yields
    bit-identical samples. Peak ground truth is populated for beat-train
    modalities only.
    """
    info = get_modality(modality)
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if duration_s < 1.0 / info.fs_hz:
        raise ValueError("duration_s shorter than one sample at %g Hz" % info.fs_hz)
    if not 0 <= class_label < n_classes:
        raise ValueError(
            "class_label %d outside [0, %d)" % (class_label, n_classes)
        )
    rng = np.random.default_rng(seed)
    if info.has_peaks:
        samples, peaks = _gen_beat_train(info, class_label, duration_s, rng)
    else:
        samples, peaks = _gen_eda(info, class_label, duration_s, rng)
    truth = GroundTruth(
        class_label=class_label,
        clean_samples=samples.copy(),
        injected_noise_power=0.0,
        true_snr_db=CLEAN_SNR_DB,
        true_peak_times_s=peaks,
    )
    return Signal(info.name, info.fs_hz, samples, 0.0, truth)


def _bandpassed_noise(n, fs, band, rng):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    lo, hi = band
    hi = min(hi, 0.5 * fs)
    mask = (freqs >= lo) & (freqs <= hi)
    spec[~mask] = 0.0
    out = np.fft.irfft(spec, n)
    rms = float(np.sqrt(np.mean(out**2)))
    if rms == 0.0:
        raise ValueError("artifact band %r empty at fs %g" % (band, fs))
    return out / rms


def inject_noise(signal: Signal, spec: NoiseSpec, seed: int) -> Signal:
    """Apply one NoiseSpec to a clean window; returns a new Signal.

    For ``wander`` the realized SNR equals ``spec.target_snr_db`` exactly (up
    to float rounding, far below the 0.01 dB contract). For
    ``wander+artifact`` the wander component alone is scaled to the target,
    then the artifact overwrite further lowers the realized SNR; truth fields
    always report the total.
    """
    if signal.truth is None:
        raise ValueError("inject_noise needs a signal with ground truth")
    clean = signal.truth.clean_samples
    n = len(clean)
    fs = signal.sampling_rate_hz
    if spec.kind == "none":
        return replace(
            signal,
            samples=clean.copy(),
            truth=replace(
                signal.truth,
                clean_samples=clean.copy(),
                injected_noise_power=0.0,
                true_snr_db=CLEAN_SNR_DB,
                artifact_span_s=None,
            ),
        )

    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    f1, f2 = rng.uniform(WANDER_FREQ_HZ[0], WANDER_FREQ_HZ[1], size=2)
    a1, a2 = rng.uniform(0.5, 1.0, size=2)
    ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    wander = a1 * np.sin(2.0 * np.pi * f1 * t + ph1) + a2 * np.sin(
        2.0 * np.pi * f2 * t + ph2
    )
    p_clean = float(np.mean(clean**2))
    p_raw = float(np.mean(wander**2))
    alpha = np.sqrt(p_clean / (p_raw * 10.0 ** (spec.target_snr_db / 10.0)))
    noisy = clean + alpha * wander

    span = None
    if spec.kind == "wander+artifact":
        if spec.artifact_duration_s > signal.duration_s:
            raise ValueError("artifact_duration_s exceeds window duration")
        info = get_modality(signal.modality)
        seg = int(round(spec.artifact_duration_s * fs))
        seg = max(seg, 1)
        start = int(rng.integers(0, n - seg + 1))
        burst = _bandpassed_noise(seg, fs, info.signal_band_hz, rng)
        ac_rms = float(np.std(clean))
        level = float(np.mean(clean))
        noisy[start : start + seg] = (
            level + spec.artifact_amplitude_scale * ac_rms * burst
        )
        span = (start / fs, (start + seg) / fs)

    p_noise = float(np.mean((noisy - clean) ** 2))
    snr = 10.0 * np.log10(p_clean / p_noise) if p_noise > 0 else CLEAN_SNR_DB
    truth = replace(
        signal.truth,
        clean_samples=clean.copy(),
        injected_noise_power=p_noise,
        true_snr_db=float(snr),
        artifact_span_s=span,
    )
    return replace(signal, samples=noisy, truth=truth)


def downsample_signal(signal: Signal, factor: int = 2) -> Signal:
    """Anti-aliased integer-factor downsample: what halved-rate sensing delivers.

    Uses a zero-phase FIR decimator; the scipy IIR default rings at the
    edges of arrays as short as a 60 s EDA window. Ground truth is dropped
    because clean samples and noise power refer to the original rate; the
    caller keeps labels separately.
    """
    from scipy.signal import decimate

    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return replace(signal, samples=signal.samples.copy(), truth=None)
    out = decimate(signal.samples, factor, ftype="fir", zero_phase=True)
    return Signal(
        signal.modality,
        signal.sampling_rate_hz / factor,
        out,
        signal.start_time_s,
        None,
    )


# ---------------------------------------------------------------------------
# import/export

_BIN_MAGIC = b"EHSIG1\n"


def write_signal_csv(signal: Signal, path) -> None:
    times = signal.times()
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,value\n")
        for t, v in zip(times, signal.samples):
            fh.write("%s,%s\n" % (repr(float(t)), repr(float(v))))


def read_signal_csv(path, modality: str, sampling_rate_hz: float | None = None) -> Signal:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    times, values = data[:, 0], data[:, 1]
    if sampling_rate_hz is None:
        if len(times) < 2:
            raise ValueError("cannot infer sampling rate from %d samples" % len(times))
        sampling_rate_hz = 1.0 / float(times[1] - times[0])
    return Signal(modality, float(sampling_rate_hz), values, float(times[0]), None)


def write_signal_bin(signal: Signal, path) -> None:
    """Columnar binary dump: magic, JSON header line, raw little-endian f64."""
    header = {
        "modality": signal.modality,
        "sampling_rate_hz": signal.sampling_rate_hz,
        "start_time_s": signal.start_time_s,
        "n": int(len(signal.samples)),
    }
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.asarray(signal.samples, dtype="<f8").tobytes())


def read_signal_bin(path) -> Signal:
    with open(path, "rb") as fh:
        magic = fh.read(len(_BIN_MAGIC))
        if magic != _BIN_MAGIC:
            raise ValueError("not a signal dump: bad magic %r" % magic)
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read(8 * header["n"])
    samples = np.frombuffer(raw, dtype="<f8").copy()
    if len(samples) != header["n"]:
        raise ValueError("truncated signal dump")
    return Signal(
        header["modality"],
        float(header["sampling_rate_hz"]),
        samples,
        float(header["start_time_s"]),
        None,
    )
