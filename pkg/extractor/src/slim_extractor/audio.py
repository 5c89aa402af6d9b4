"""WAV loading and conditioning: mono mixdown, resampling, duration crop."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal


class AudioError(Exception):
    """Clip could not be decoded or conditioned."""


_PCM_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def load_wav(path) -> tuple[int, np.ndarray]:
    """Read a WAV file as (sample_rate, float64 mono waveform in [-1, 1])."""
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:
        raise AudioError(f"cannot decode {path}: {exc}") from exc
    data = np.asarray(data)
    if data.size == 0:
        raise AudioError(f"{path}: empty waveform")
    raw_dtype = data.dtype
    if data.ndim == 2:
        data = data.astype(np.float64).mean(axis=1)
    else:
        data = data.astype(np.float64)
    scale = _PCM_SCALE.get(raw_dtype)
    if scale:
        data = data / scale
    elif raw_dtype == np.uint8:
        data = (data - 128.0) / 128.0
    return int(rate), data


def resample(wave: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling to target_rate (identity when rates match)."""
    if rate == target_rate:
        return wave
    g = math.gcd(rate, target_rate)
    return scipy.signal.resample_poly(wave, target_rate // g, rate // g)


def center_crop(wave: np.ndarray, max_samples: int) -> np.ndarray:
    """Keep the middle max_samples when the clip is longer."""
    if wave.shape[0] <= max_samples:
        return wave
    start = (wave.shape[0] - max_samples) // 2
    return wave[start:start + max_samples]


def condition(path, sample_rate: int, max_duration: float) -> np.ndarray:
    """Full conditioning pipeline for one clip."""
    rate, wave = load_wav(path)
    wave = resample(wave, rate, sample_rate)
    return center_crop(wave, int(round(max_duration * sample_rate)))
