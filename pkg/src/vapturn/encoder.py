"""Frozen causal audio encoders: one feature frame of 256 values per 320
samples, per channel.

The network treats encoder output as given input; nothing here is ever
trained.  Two sources are supported:

* BaselineEncoder: a deterministic random-weight convolution stack.  It
  stands in for a pretrained self-supervised encoder so the full pipeline
  runs at desk scale, and makes no quality claim beyond exposing coarse
  spectral and envelope structure.
* Feature files produced offline by any encoder honoring the contract,
  loaded through load_features.

Baseline design notes.  A plain random conv stack mixes down pitch
information too aggressively for linear heads to recover.  Instead the
first layer is a short random projection whose ReLU rectifies the signal,
and the second is a bank of long (64-tap at 3.2 kHz) windowed sinusoids
with log-uniform frequencies: a random filterbank.  Rectification creates
energy at the voice's F0 and harmonics, the filterbank resolves it, and
the remaining strided random layers only shorten the sequence.  Every
layer pads k - stride zeros on the left only, so output frame t depends
exclusively on samples before (t+1)*320.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .frames import DEFAULT_GRID, FrameGrid

_FEATURE_MAGIC = b"VAPF"
_FEATURE_VERSION = 1

OUTPUT_DIM = 256

# (c_in, c_out, kernel, stride, init); stride product must equal
# samples_per_frame (5*4*4*2*2 == 320).
_LAYERS = (
    (1, 16, 10, 5, "gauss"),
    (16, 96, 64, 4, "sinusoid"),
    (96, 128, 8, 4, "gauss"),
    (128, 256, 4, 2, "gauss"),
    (256, OUTPUT_DIM, 4, 2, "gauss"),
)

_SINE_FREQ_RANGE_HZ = (25.0, 1500.0)

# im2col block size: bounds scratch memory to ~35 MB on the widest layer.
_CONV_BLOCK = 8192


@dataclass(frozen=True)
class EncoderContract:
    """What any feature source must guarantee."""

    output_dim: int = OUTPUT_DIM
    output_rate_hz: int = 50
    causal: bool = True
    trainable: bool = False


def _conv_causal(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int
) -> np.ndarray:
    """Strided 1-d convolution with left-only zero padding of k - stride.

    x: (c_in, n) -> (c_out, n // stride).  Output position i sees padded
    input [i*stride, i*stride + k), i.e. raw samples up to (i+1)*stride - 1.
    """
    c_out, c_in, k = w.shape
    n = x.shape[1]
    n_out = n // stride
    pad = k - stride
    xp = np.concatenate([np.zeros((c_in, pad), dtype=x.dtype), x], axis=1)
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    w2d = w.reshape(c_out, c_in * k)
    out = np.empty((n_out, c_out), dtype=np.float32)
    for a in range(0, n_out, _CONV_BLOCK):
        z = min(a + _CONV_BLOCK, n_out)
        cols = windows[:, a:z, :].transpose(1, 0, 2).reshape(z - a, c_in * k)
        out[a:z] = cols @ w2d.T
    out += b
    return np.ascontiguousarray(out.T)


class BaselineEncoder:
    """Deterministic random-weight causal encoder.

    All weights derive from `seed` through a fixed draw order, so the same
    seed always produces bit-identical features for identical input.
    """

    def __init__(self, seed: int, grid: FrameGrid = DEFAULT_GRID):
        self.seed = int(seed)
        self.grid = grid
        self.contract = EncoderContract(output_rate_hz=grid.frame_hz)
        stride_product = 1
        for _, _, _, s, _ in _LAYERS:
            stride_product *= s
        if stride_product != grid.samples_per_frame:
            raise ConfigError(
                f"layer strides reduce by {stride_product}, grid needs "
                f"{grid.samples_per_frame}"
            )
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        self._weights: list[tuple[np.ndarray, np.ndarray]] = []
        rate = float(grid.sample_rate)
        for c_in, c_out, k, stride, init in _LAYERS:
            if init == "sinusoid":
                w = self._sinusoid_bank(rng, c_in, c_out, k, rate)
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(c_in * k), (c_out, c_in, k))
            b = rng.normal(0.0, 0.1, c_out)
            self._weights.append((w.astype(np.float32), b.astype(np.float32)))
            rate /= stride

    @staticmethod
    def _sinusoid_bank(
        rng: np.random.Generator, c_in: int, c_out: int, k: int, rate: float
    ) -> np.ndarray:
        lo, hi = _SINE_FREQ_RANGE_HZ
        freqs = np.exp(rng.uniform(np.log(lo), np.log(hi), c_out))
        phases = rng.uniform(0.0, 2.0 * np.pi, c_out)
        mix = rng.normal(0.0, 1.0 / np.sqrt(c_in), (c_out, c_in))
        t = np.arange(k) / rate
        base = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
        base *= np.hanning(k)[None, :]
        w = mix[:, :, None] * base[:, None, :]
        return w / np.sqrt((w**2).sum(axis=(1, 2), keepdims=True))

    def encode(self, waveform: np.ndarray, sample_rate: int | None = None) -> np.ndarray:
        """Encode one mono channel to (n_frames, 256) float32 features."""
        if sample_rate is not None and sample_rate != self.grid.sample_rate:
            raise ConfigError(
                f"encoder built for {self.grid.sample_rate} Hz, got {sample_rate}"
            )
        waveform = np.asarray(waveform, dtype=np.float32)
        if waveform.ndim != 1:
            raise DimensionError(f"expected a mono channel, got shape {waveform.shape}")
        if waveform.size == 0 or waveform.size % self.grid.samples_per_frame:
            raise ValidationError(
                f"waveform length {waveform.size} is not a whole number of "
                f"{self.grid.samples_per_frame}-sample frames"
            )
        x = waveform[None, :]
        last = len(self._weights) - 1
        for i, ((w, b), (_, _, _, stride, _)) in enumerate(zip(self._weights, _LAYERS)):
            x = _conv_causal(x, w, b, stride)
            if i != last:
                np.maximum(x, 0.0, out=x)
        return np.ascontiguousarray(x.T)

    def encode_stereo(self, audio: np.ndarray) -> np.ndarray:
        """Encode a (2, n_samples) dialogue to (2, n_frames, 256)."""
        audio = np.asarray(audio)
        if audio.ndim != 2 or audio.shape[0] != 2:
            raise DimensionError(f"expected (2, n_samples), got {audio.shape}")
        return np.stack([self.encode(audio[0]), self.encode(audio[1])])


def baseline_encode(waveform: np.ndarray, seed: int) -> np.ndarray:
    """One-shot encode: (n,) -> (frames, 256) or (2, n) -> (2, frames, 256)."""
    enc = BaselineEncoder(seed)
    waveform = np.asarray(waveform)
    if waveform.ndim == 2:
        return enc.encode_stereo(waveform)
    return enc.encode(waveform)


def save_features(
    path: str | Path, features: np.ndarray, rate_hz: int = DEFAULT_GRID.frame_hz
) -> None:
    """Write one channel's features: 24-byte header, float32 LE, row-major."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise DimensionError(f"features must be (n_frames, dim), got {features.shape}")
    header = struct.pack(
        "<4sIIIQ", _FEATURE_MAGIC, _FEATURE_VERSION, features.shape[1], rate_hz,
        features.shape[0],
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(features.astype("<f4").tobytes())


def read_feature_header(path: str | Path) -> tuple[int, int, int]:
    """Return (dim, rate_hz, n_frames) from a feature file header."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"feature file not found: {path}")
    with open(path, "rb") as fh:
        header = fh.read(24)
    if len(header) < 24:
        raise ValidationError(f"{path}: truncated feature header")
    magic, version, dim, rate, count = struct.unpack("<4sIIIQ", header)
    if magic != _FEATURE_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != _FEATURE_VERSION:
        raise ValidationError(f"{path}: unsupported feature version {version}")
    return int(dim), int(rate), int(count)


def load_features(
    path: str | Path,
    expected_frames: int,
    contract: EncoderContract = EncoderContract(),
    mmap: bool = False,
) -> np.ndarray:
    """Load one channel's features and align length to expected_frames.

    The header must declare the contract's dim and rate.  A frame-count
    mismatch of at most 2 frames is repaired (truncate, or pad by
    repeating the final frame); larger mismatches are rejected.
    """
    dim, rate, count = read_feature_header(path)
    if dim != contract.output_dim:
        raise ValidationError(
            f"{path}: feature dim {dim} != required {contract.output_dim}"
        )
    if rate != contract.output_rate_hz:
        raise ValidationError(
            f"{path}: feature rate {rate} != required {contract.output_rate_hz}"
        )
    if abs(count - expected_frames) > 2:
        raise ValidationError(
            f"{path}: {count} frames vs expected {expected_frames}; "
            "outside the +/-2 repair tolerance"
        )
    if mmap and count == expected_frames:
        return np.memmap(path, dtype="<f4", mode="r", offset=24, shape=(count, dim))
    data = np.fromfile(path, dtype="<f4", offset=24)
    if data.size != count * dim:
        raise ValidationError(f"{path}: payload does not match declared frame count")
    feats = data.reshape(count, dim)
    if count > expected_frames:
        feats = feats[:expected_frames]
    elif count < expected_frames:
        if count == 0:
            raise ValidationError(f"{path}: empty feature file cannot be padded")
        pad = np.repeat(feats[-1:], expected_frames - count, axis=0)
        feats = np.concatenate([feats, pad], axis=0)
    if not np.isfinite(feats).all():
        raise ValidationError(f"{path}: non-finite feature values")
    return np.ascontiguousarray(feats)


class FeatureProvider:
    """Source of per-dialogue feature streams for training and evaluation.

    Implementations return an array of shape (2, n_frames, output_dim)
    aligned to the dialogue's frame count.
    """

    contract: EncoderContract

    def features(self, manifest) -> np.ndarray:
        raise NotImplementedError


class BaselineFeatureProvider(FeatureProvider):
    """Encodes audio with the baseline encoder, caching results on disk.

    With a cache directory, each channel is stored once as
    ``<dialogue_id>.<channel>.feat`` and later runs memory-map it instead
    of re-encoding; without one, encoding happens on every call.
    """

    def __init__(
        self,
        seed: int,
        cache_dir: str | Path | None = None,
        grid: FrameGrid = DEFAULT_GRID,
    ):
        self.encoder = BaselineEncoder(seed, grid)
        self.contract = self.encoder.contract
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.grid = grid

    def _cache_paths(self, dialogue_id: str) -> tuple[Path, Path]:
        assert self.cache_dir is not None
        return (
            self.cache_dir / f"{dialogue_id}.0.feat",
            self.cache_dir / f"{dialogue_id}.1.feat",
        )

    def features(self, manifest) -> np.ndarray:
        from .audio import load_stereo_audio, probe_audio

        if self.cache_dir is not None:
            n_frames = self.grid.n_frames_for_samples(
                probe_audio(manifest.audio_path).n_samples
            )
            paths = self._cache_paths(manifest.dialogue_id)
            if all(p.is_file() for p in paths):
                chans = [
                    load_features(p, n_frames, self.contract, mmap=True) for p in paths
                ]
                return np.stack([np.asarray(c) for c in chans])
        audio, n_frames = load_stereo_audio(manifest.audio_path, self.grid)
        feats = self.encoder.encode_stereo(audio)
        if self.cache_dir is not None:
            for ch, p in enumerate(self._cache_paths(manifest.dialogue_id)):
                save_features(p, feats[ch], self.grid.frame_hz)
        return feats


class FileFeatureProvider(FeatureProvider):
    """Loads precomputed features from files named by a path template.

    The template must contain ``{dialogue_id}`` and ``{channel}``
    placeholders, e.g. ``feats/{dialogue_id}.{channel}.feat``.
    """

    def __init__(
        self,
        template: str,
        contract: EncoderContract = EncoderContract(),
        grid: FrameGrid = DEFAULT_GRID,
    ):
        if "{dialogue_id}" not in template or "{channel}" not in template:
            raise ConfigError(
                "feature template needs {dialogue_id} and {channel} placeholders"
            )
        self.template = template
        self.contract = contract
        self.grid = grid

    def features(self, manifest) -> np.ndarray:
        from .audio import probe_audio

        n_frames = self.grid.n_frames_for_samples(
            probe_audio(manifest.audio_path).n_samples
        )
        chans = [
            load_features(
                self.template.format(dialogue_id=manifest.dialogue_id, channel=ch),
                n_frames,
                self.contract,
            )
            for ch in (0, 1)
        ]
        return np.stack(chans)
