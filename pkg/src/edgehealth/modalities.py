"""Modality registry.

Each supported modality carries its nominal sampling rate, the band layout
used by the blind SNR estimator, and the parameters of its synthetic
generator. Entries are looked up by lower-case name; unknown names raise,
and new modalities can be registered at runtime (config-extensible).
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["ModalityInfo", "MODALITIES", "get_modality", "register_modality"]


@dataclass(frozen=True)
class ModalityInfo:
    """Static description of one signal modality.

    Attributes
    ----------
    name : str
        Canonical lower-case identifier ("ecg", "eda", "ppg", ...).
    fs_hz : float
        Nominal sampling rate.
    noise_band_hz : tuple
        Band where baseline wander lives; the blind SNR estimator measures
        noise power here.
    signal_band_hz : tuple
        Rough support of the clean signal's AC content, used by the peak
        detector's high-pass and by artifact synthesis.
    has_peaks : bool
        Whether the waveform is a beat train with detectable peaks.
    gen : dict
        Generator parameters (see signals.generate_window). Values with a
        ``_per_class`` suffix are added once per class index.
    """

    name: str
    fs_hz: float
    noise_band_hz: tuple = (0.05, 0.5)
    signal_band_hz: tuple = (0.6, 40.0)
    has_peaks: bool = False
    # Rolling-RMS ratio over median that flags an artifact burst. None
    # disables burst detection: on a channel whose own morphology is
    # burst-like (EDA phasic responses), an amplitude-outlier detector
    # cannot tell artifact from signal, and false triggers wreck the SNR
    # estimate on perfectly clean records.
    burst_ratio: float | None = 3.0
    gen: dict = field(default_factory=dict)


MODALITIES: dict[str, ModalityInfo] = {}


def register_modality(info: ModalityInfo) -> None:
    MODALITIES[info.name] = info


def get_modality(name: str) -> ModalityInfo:
    try:
        return MODALITIES[name.lower()]
    except KeyError:
        raise ValueError(
            "unknown modality %r (known: %s)" % (name, ", ".join(sorted(MODALITIES)))
        ) from None


register_modality(
    ModalityInfo(
        name="ecg",
        fs_hz=100.0,
        signal_band_hz=(0.6, 45.0),
        has_peaks=True,
        gen={
            # beat timing
            "rate_bpm": 62.0,
            "rate_bpm_per_class": 8.0,
            "rate_bpm_sigma": 4.5,
            "rate_bpm_range": (45.0, 110.0),
            "beat_jitter_ms": 17.0,
            "beat_jitter_ms_per_class": 5.0,
            "beat_jitter_ms_sigma": 3.0,
            # amplitudes (R wave is the reference, unit-ish scale)
            "amp": 0.86,
            "amp_per_class": 0.08,
            "amp_sigma": 0.06,
            "amp_beat_jitter": 0.05,
            # waveform component (amplitude, center_s, width_s) relative to R
            "waves": [
                (0.12, -0.180, 0.040),   # P
                (-0.28, -0.025, 0.008),  # Q
                (1.00, 0.000, 0.010),    # R
                (-0.32, 0.025, 0.009),   # S
                (0.26, 0.220, 0.055),    # T
            ],
            "zero_area_width_s": 0.18,
        },
    )
)

register_modality(
    ModalityInfo(
        name="ppg",
        fs_hz=64.0,
        signal_band_hz=(0.6, 12.0),
        has_peaks=True,
        gen={
            "rate_bpm": 64.0,
            "rate_bpm_per_class": 8.0,
            "rate_bpm_sigma": 4.0,
            "rate_bpm_range": (45.0, 105.0),
            "beat_jitter_ms": 15.0,
            "beat_jitter_ms_per_class": 5.0,
            "beat_jitter_ms_sigma": 3.0,
            "amp": 0.95,
            "amp_per_class": 0.10,
            "amp_sigma": 0.07,
            "amp_beat_jitter": 0.05,
            "waves": [
                (1.00, 0.000, 0.090),    # systolic peak
                (0.35, 0.280, 0.080),    # dicrotic wave
            ],
            "zero_area_width_s": 0.30,
        },
    )
)

register_modality(
    ModalityInfo(
        name="eda",
        fs_hz=4.0,
        signal_band_hz=(0.55, 2.0),
        has_peaks=False,
        burst_ratio=None,
        gen={
            # slow tonic level plus a very slow drift, well below the wander band
            "tonic_level": 2.0,
            "tonic_level_per_class": 0.35,
            "tonic_level_sigma": 0.28,
            "drift_amp": 0.10,
            "drift_freq_hz": (0.005, 0.015),
            # phasic responses: narrow-band bursts above the wander band
            "burst_rate_per_min": 4.0,
            "burst_rate_per_class": 2.5,
            "burst_amp": 0.30,
            "burst_amp_per_class": 0.10,
            "burst_amp_sigma": 0.05,
            "burst_freq_hz": (1.0, 1.5),
            "burst_width_s": 1.0,
        },
    )
)

# Sensor names reserved for wearable platforms we do not synthesize yet.
# They can be registered via config; generate_window refuses them until then.
KNOWN_UNSYNTHESIZED = ("acc", "rr")
