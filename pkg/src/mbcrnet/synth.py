"""Seeded synthetic multi-lead ECG-like records.

Normal records are quasi-periodic trains of Gaussian P/QRS/T bumps with
a per-lead amplitude profile plus white noise. Abnormal records add an
irregular rhythm (every RR interval off by 25-45%), inverted complexes on
V1-V3, or both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .data import NORMAL_LABELS, EcgRecord

LEADS_8 = ("II", "III", "V1", "V2", "V3", "V4", "V5", "V6")
LEADS_12 = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
INVERTED_LEADS = ("V1", "V2", "V3")
ABNORMALITIES = ("irregular_rhythm", "lead_localized_inversion", "both")

# mV peak of the QRS surrogate per lead
LEAD_AMPLITUDE = {
    "I": 0.6, "II": 1.0, "III": 0.5, "aVR": -0.8, "aVL": 0.3, "aVF": 0.7,
    "V1": 0.8, "V2": 1.1, "V3": 1.2, "V4": 1.3, "V5": 1.1, "V6": 0.9,
}

ABNORMAL_TEXT = {
    "irregular_rhythm": "irregular rhythm",
    "lead_localized_inversion": "t wave inversion v1-v3",
    "both": "irregular rhythm with t wave inversion",
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_records: int = 100
    n_leads: int = 8
    sample_rate_hz: int = 500
    duration_s: float = 10.0
    class_balance: float = 0.5
    noise_std: float = 0.05
    abnormality: str = "both"

    def __post_init__(self):
        if self.n_leads not in (8, 12):
            raise ValueError("n_leads must be 8 or 12")
        if self.abnormality not in ABNORMALITIES:
            raise ValueError(f"abnormality must be one of {ABNORMALITIES}")
        if not 0.0 <= self.class_balance <= 1.0:
            raise ValueError("class_balance must be in [0, 1]")


def beat_times(rng: np.random.Generator, duration: float, irregular: bool) -> np.ndarray:
    rr = 60.0 / rng.uniform(60.0, 90.0)
    times = []
    t = rng.uniform(0.1, rr)
    while t < duration + 0.5:
        times.append(t)
        if irregular:
            jitter = rng.uniform(0.25, 0.45) * rng.choice((-1.0, 1.0))
        else:
            jitter = rng.uniform(-0.03, 0.03)
        t += rr * (1.0 + jitter)
    return np.asarray(times)


def _bumps(t: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t[None, :] - centers[:, None]) / width) ** 2).sum(axis=0)


def synth_record(config: SynthConfig, index: int, label: int) -> EcgRecord:
    rng = np.random.default_rng([config.seed, index])
    leads = LEADS_8 if config.n_leads == 8 else LEADS_12
    n = int(round(config.duration_s * config.sample_rate_hz))
    t = np.arange(n) / config.sample_rate_hz
    mode = config.abnormality
    irregular = label == 1 and mode in ("irregular_rhythm", "both")
    invert = label == 1 and mode in ("lead_localized_inversion", "both")

    beats = beat_times(rng, config.duration_s, irregular)
    complex_ = (
        0.15 * _bumps(t, beats - 0.16, 0.03)
        + _bumps(t, beats, 0.025)
        + 0.3 * _bumps(t, beats + 0.25, 0.05)
    )
    scale = rng.uniform(0.8, 1.2, size=len(leads))
    samples = np.empty((len(leads), n))
    for row, name in enumerate(leads):
        amp = LEAD_AMPLITUDE[name] * scale[row]
        if invert and name in INVERTED_LEADS:
            amp = -amp
        samples[row] = amp * complex_ + rng.normal(0.0, config.noise_std, size=n)
    samples = np.round(samples, 4)

    if label == 0:
        text = NORMAL_LABELS[index % 2]
    else:
        text = ABNORMAL_TEXT[mode]
    return EcgRecord(
        id=f"synth{config.seed}_{index:05d}",
        sample_rate_hz=config.sample_rate_hz,
        lead_names=list(leads),
        samples=samples,
        label_text=text,
        label=label,
    )


def generate(config: SynthConfig) -> List[EcgRecord]:
    """Records for ``config``; a pure function of the config."""
    n_abnormal = int(round(config.n_records * config.class_balance))
    labels = np.array([1] * n_abnormal + [0] * (config.n_records - n_abnormal))
    labels = np.random.default_rng(config.seed).permutation(labels)
    return [synth_record(config, i, int(lab)) for i, lab in enumerate(labels)]
