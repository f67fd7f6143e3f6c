"""Stereo WAV input and output.

Dialogues are stored as two-channel RIFF/WAV files, one speaker per
channel, at the grid sample rate.  Samples may be 16-bit PCM or 32-bit
float; everything is normalized to float32 in [-1, 1] on load.  Audio is
truncated to a whole number of frames so that sample counts, frame counts,
and annotation lengths always agree downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioFormatError, DimensionError, ValidationError
from .frames import DEFAULT_GRID, FrameGrid

_PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class AudioInfo:
    """Header-level description of a WAV file."""

    sample_rate: int
    n_channels: int
    n_samples: int
    sample_format: str
    duration: float


def _read_wav(path: str | Path, mmap: bool) -> tuple[int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path, mmap=mmap)
    except ValueError as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    return rate, data


def _format_name(dtype: np.dtype) -> str:
    if dtype == np.int16:
        return "pcm16"
    if dtype == np.float32:
        return "float32"
    raise AudioFormatError(
        f"unsupported sample format {dtype}; expected 16-bit PCM or 32-bit float"
    )


def probe_audio(path: str | Path) -> AudioInfo:
    """Read format metadata without materializing the sample data."""
    rate, data = _read_wav(path, mmap=True)
    n_channels = 1 if data.ndim == 1 else data.shape[1]
    fmt = _format_name(data.dtype)
    return AudioInfo(
        sample_rate=int(rate),
        n_channels=int(n_channels),
        n_samples=int(data.shape[0]),
        sample_format=fmt,
        duration=data.shape[0] / rate,
    )


def load_stereo_audio(
    path: str | Path, grid: FrameGrid = DEFAULT_GRID
) -> tuple[np.ndarray, int]:
    """Load a two-channel WAV file as float32.

    Returns (audio, n_frames) where audio has shape (2, n_samples) with
    n_samples truncated to n_frames * samples_per_frame.  Files at the
    wrong sample rate or channel count are rejected; use resample_audio
    first if the rate differs.
    """
    rate, data = _read_wav(path, mmap=False)
    if rate != grid.sample_rate:
        raise AudioFormatError(
            f"{path}: sample rate {rate} != required {grid.sample_rate}; "
            "resample the file first"
        )
    if data.ndim != 2 or data.shape[1] != 2:
        shape = "mono" if data.ndim == 1 else f"{data.shape[1]} channels"
        raise AudioFormatError(f"{path}: expected 2 channels, got {shape}")
    fmt = _format_name(data.dtype)
    if fmt == "pcm16":
        audio = data.astype(np.float32) / _PCM16_SCALE
    else:
        audio = data.astype(np.float32, copy=True)
    n_frames = grid.n_frames_for_samples(audio.shape[0])
    if n_frames == 0:
        raise ValidationError(f"{path}: audio shorter than one frame")
    audio = audio[: n_frames * grid.samples_per_frame]
    return np.ascontiguousarray(audio.T), n_frames


def save_stereo_audio(
    path: str | Path,
    audio: np.ndarray,
    grid: FrameGrid = DEFAULT_GRID,
    sample_format: str = "pcm16",
) -> None:
    """Write a (2, n_samples) float array as a stereo WAV file."""
    audio = np.asarray(audio)
    if audio.ndim != 2 or audio.shape[0] != 2:
        raise DimensionError(f"audio must have shape (2, n_samples), got {audio.shape}")
    if sample_format == "pcm16":
        scaled = np.clip(np.rint(audio * _PCM16_SCALE), -32768, 32767)
        data = scaled.astype(np.int16)
    elif sample_format == "float32":
        data = audio.astype(np.float32)
    else:
        raise ValidationError(f"unknown sample_format {sample_format!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, grid.sample_rate, np.ascontiguousarray(data.T))


def resample_audio(audio: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Polyphase resampling between integer sample rates, per channel."""
    if src_rate <= 0 or dst_rate <= 0:
        raise ValidationError("sample rates must be positive")
    if src_rate == dst_rate:
        return np.asarray(audio, dtype=np.float32)
    g = np.gcd(src_rate, dst_rate)
    out = resample_poly(np.asarray(audio, dtype=np.float32), dst_rate // g, src_rate // g, axis=-1)
    return out.astype(np.float32)
