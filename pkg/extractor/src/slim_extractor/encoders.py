"""Frontend encoders producing layered hidden states for a waveform.

Two families:

  * BuiltinFrameEncoder - a deterministic, dependency-free stand-in: short-
    time log-spectra projected through fixed seeded per-layer maps. It has
    a real frame clock (25 ms window / 20 ms hop at 16 kHz, so a 5 s clip
    yields 249 frames) and a nominal depth of 25 hidden states, which makes
    the 0-10 / 14-21 layer-range plumbing fully testable offline.
  * HuggingFaceEncoder - thin adapter over a cached wav2vec2-style model
    (requires torch + transformers). Hidden-state index 0 is the
    convolutional feature projection, so layer ranges are 0-based over the
    full hidden-state stack.

Encoders expose: depth, frame_count(n_samples), encode_layers(wave, layers)
-> float32 (K, F, T).
"""

from __future__ import annotations

import hashlib

import numpy as np


class EncoderError(Exception):
    pass


def parse_layer_range(spec: str) -> list[int]:
    """'0-10' -> [0..10]; '14-21' -> [14..21]; single '3' -> [3]."""
    spec = spec.strip()
    if "-" in spec:
        lo_s, hi_s = spec.split("-", 1)
        lo, hi = int(lo_s), int(hi_s)
    else:
        lo = hi = int(spec)
    if lo < 0 or hi < lo:
        raise EncoderError(f"bad layer range {spec!r}")
    return list(range(lo, hi + 1))


class BuiltinFrameEncoder:
    """Deterministic spectral encoder with a fixed per-id parameterization."""

    def __init__(self, encoder_id: str, feat_dim: int = 1024, depth: int = 25,
                 win: int = 400, hop: int = 320, n_fft: int = 512):
        self.encoder_id = encoder_id
        self.feat_dim = feat_dim
        self.depth = depth
        self.win = win
        self.hop = hop
        self.n_fft = n_fft
        self._window = np.hanning(win)
        self._bins = n_fft // 2 + 1
        self._layer_maps: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _layer_map(self, layer: int):
        hit = self._layer_maps.get(layer)
        if hit is None:
            digest = hashlib.sha256(f"{self.encoder_id}:{layer}".encode()).digest()
            seed = int.from_bytes(digest[:8], "little")
            rng = np.random.Generator(np.random.PCG64(seed))
            proj = rng.normal(0.0, 1.0 / np.sqrt(self._bins),
                              size=(self._bins, self.feat_dim)).astype(np.float32)
            bias = rng.normal(0.0, 0.1, size=self.feat_dim).astype(np.float32)
            hit = (proj, bias)
            self._layer_maps[layer] = hit
        return hit

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win:
            return 1
        return 1 + (n_samples - self.win) // self.hop

    def _frames(self, wave: np.ndarray) -> np.ndarray:
        wave = np.asarray(wave, dtype=np.float64)
        if wave.shape[0] < self.win:
            wave = np.pad(wave, (0, self.win - wave.shape[0]))
        t = self.frame_count(wave.shape[0])
        out = np.empty((t, self._bins), dtype=np.float64)
        for i in range(t):
            seg = wave[i * self.hop:i * self.hop + self.win] * self._window
            spectrum = np.fft.rfft(seg, n=self.n_fft)
            out[i] = np.log1p(np.abs(spectrum))
        return out.astype(np.float32)

    def encode_layers(self, wave: np.ndarray, layers) -> np.ndarray:
        layers = list(layers)
        bad = [l for l in layers if not 0 <= l < self.depth]
        if bad:
            raise EncoderError(
                f"layers {bad} outside encoder depth {self.depth} ({self.encoder_id})"
            )
        frames = self._frames(wave)  # (T, bins)
        stack = np.empty((len(layers), self.feat_dim, frames.shape[0]), dtype=np.float32)
        for idx, layer in enumerate(layers):
            proj, bias = self._layer_map(layer)
            stack[idx] = np.tanh(frames @ proj + bias).T
        return stack


class HuggingFaceEncoder:
    """Adapter over a pretrained wav2vec2-family model (cached weights)."""

    def __init__(self, model_id: str, sample_rate: int = 16000):
        try:
            import torch
            from transformers import Wav2Vec2Model
        except ImportError as exc:
            raise EncoderError(
                "HuggingFace encoders need the 'hf' extra (torch + transformers)"
            ) from exc
        self._torch = torch
        try:
            self._model = Wav2Vec2Model.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(
                f"cannot load encoder {model_id!r} (not cached and not downloadable?): {exc}"
            ) from exc
        self._model.eval()
        self.encoder_id = model_id
        self.sample_rate = sample_rate
        # hidden_states = conv feature projection + one entry per transformer block
        self.depth = self._model.config.num_hidden_layers + 1
        self.feat_dim = self._model.config.hidden_size

    def frame_count(self, n_samples: int) -> int:
        lengths = self._model._get_feat_extract_output_lengths(n_samples)
        return int(lengths)

    def encode_layers(self, wave: np.ndarray, layers) -> np.ndarray:
        layers = list(layers)
        bad = [l for l in layers if not 0 <= l < self.depth]
        if bad:
            raise EncoderError(
                f"layers {bad} outside encoder depth {self.depth} ({self.encoder_id})"
            )
        torch = self._torch
        with torch.no_grad():
            inputs = torch.as_tensor(np.asarray(wave, dtype=np.float32))[None, :]
            out = self._model(inputs, output_hidden_states=True)
        hidden = out.hidden_states  # tuple of (1, T, F)
        stack = np.stack(
            [hidden[l][0].numpy().T.astype(np.float32) for l in layers])
        return stack


_BUILTIN_IDS = ("builtin-ser", "builtin-asr")


def make_encoder(encoder_id: str, sample_rate: int = 16000):
    if encoder_id in _BUILTIN_IDS:
        return BuiltinFrameEncoder(encoder_id)
    return HuggingFaceEncoder(encoder_id, sample_rate)
