"""Waveform augmentations: additive noise, synthetic reverb, spectral dropout.

Parameter ranges follow the training recipe this extractor feeds:
SNR drawn uniformly from [0, 15] dB, dropped chunks 1000-2000 samples
(1-5 of them), 1-3 dropped frequency bands of relative width 0.05.
All augmentations are deterministic under a seeded rng.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal


class AugmentError(Exception):
    pass


KINDS = ("noise", "reverb", "specaug")


@dataclass(frozen=True)
class AugmentParams:
    snr_low: float = 0.0
    snr_high: float = 15.0
    reverb_decay_s: float = 0.25
    drop_freq_low: float = 0.0
    drop_freq_high: float = 1.0
    drop_freq_count_low: int = 1
    drop_freq_count_high: int = 3
    drop_freq_width: float = 0.05
    drop_chunk_count_low: int = 1
    drop_chunk_count_high: int = 5
    drop_chunk_length_low: int = 1000
    drop_chunk_length_high: int = 2000

    def validate(self):
        if not 0.0 <= self.snr_low <= self.snr_high <= 15.0:
            raise AugmentError(
                f"SNR range must satisfy 0 <= low <= high <= 15 dB, "
                f"got [{self.snr_low}, {self.snr_high}]"
            )
        if self.drop_chunk_length_low > self.drop_chunk_length_high:
            raise AugmentError("drop chunk length range inverted")


def add_noise(wave: np.ndarray, snr_db: float, rng) -> np.ndarray:
    """White noise at the given SNR; infinite SNR is the identity."""
    if math.isinf(snr_db):
        return wave
    power = float(np.mean(wave ** 2))
    if power == 0.0:
        return wave
    noise_power = power / (10.0 ** (snr_db / 10.0))
    return wave + rng.normal(0.0, np.sqrt(noise_power), size=wave.shape)


def add_reverb(wave: np.ndarray, sample_rate: int, rng,
               decay_s: float = 0.25) -> np.ndarray:
    """Convolve with a synthetic exponentially-decaying impulse response."""
    n = max(1, int(decay_s * sample_rate))
    t = np.arange(n)
    rir = rng.normal(size=n) * np.exp(-5.0 * t / n)
    rir[0] = 1.0
    rir /= np.sqrt(np.sum(rir ** 2))
    wet = scipy.signal.fftconvolve(wave, rir)[: wave.shape[0]]
    peak_in = float(np.max(np.abs(wave))) or 1.0
    peak_out = float(np.max(np.abs(wet))) or 1.0
    return wet * (peak_in / peak_out)


def spec_dropout(wave: np.ndarray, rng, params: AugmentParams) -> np.ndarray:
    """Time-chunk zeroing plus narrow frequency-band removal."""
    out = wave.copy()
    n = out.shape[0]
    chunks = int(rng.integers(params.drop_chunk_count_low,
                              params.drop_chunk_count_high + 1))
    for _ in range(chunks):
        length = int(rng.integers(params.drop_chunk_length_low,
                                  params.drop_chunk_length_high + 1))
        length = min(length, n)
        start = int(rng.integers(0, max(1, n - length + 1)))
        out[start:start + length] = 0.0
    bands = int(rng.integers(params.drop_freq_count_low,
                             params.drop_freq_count_high + 1))
    spectrum = np.fft.rfft(out)
    freqs = np.linspace(0.0, 1.0, spectrum.shape[0])
    for _ in range(bands):
        center = rng.uniform(params.drop_freq_low, params.drop_freq_high)
        mask = np.abs(freqs - center) < params.drop_freq_width / 2.0
        spectrum[mask] = 0.0
    return np.fft.irfft(spectrum, n=n)


def augment(wave: np.ndarray, sample_rate: int, kinds, rng,
            params: AugmentParams | None = None) -> np.ndarray:
    """Apply the requested augmentation kinds in order, seeded by rng."""
    params = params or AugmentParams()
    params.validate()
    out = np.asarray(wave, dtype=np.float64)
    for kind in kinds:
        if kind not in KINDS:
            raise AugmentError(f"unknown augmentation {kind!r}, expected {KINDS}")
        if kind == "noise":
            snr = rng.uniform(params.snr_low, params.snr_high)
            out = add_noise(out, snr, rng)
        elif kind == "reverb":
            out = add_reverb(out, sample_rate, rng, params.reverb_decay_s)
        else:
            out = spec_dropout(out, rng, params)
    return out
