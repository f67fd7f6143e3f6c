"""Joint future-activity state codec.

The prediction target is the pattern of both speakers' voice activity over
the next two seconds, discretized per speaker into four bins (0-200,
200-600, 600-1200, 1200-2000 ms).  Each bin becomes one bit: set iff
voiced frames strictly outnumber unvoiced frames inside it.  Eight bits
give 256 joint states.

Bit layout (frozen; checkpoints and label dumps depend on it): the state
index is sum over speakers s and bins b of bit(s, b) * 2^(4*s + b).
Speaker 0 occupies the low nibble and bin 0 is the least-significant bit
of each nibble.

A predicted distribution over the 256 states collapses to two-way
summaries: p_now pits the speakers' first-two-bin mass against each other
through a softmax, p_future does the same with the last two bins.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .frames import DEFAULT_GRID, FrameGrid, VadStream

import logging

log = logging.getLogger(__name__)

N_STATES = 256
N_BINS = 4

_LABEL_MAGIC = b"VAPL"
_LABEL_VERSION = 1


@dataclass(frozen=True)
class BinConfig:
    """Future-window bin layout. Boundaries are in seconds from the window start."""

    boundaries_sec: tuple[float, ...] = (0.2, 0.6, 1.2, 2.0)
    grid: FrameGrid = field(default_factory=FrameGrid)

    def __post_init__(self) -> None:
        bounds = self.boundaries_sec
        if len(bounds) != N_BINS:
            raise ConfigError(f"expected {N_BINS} bin boundaries, got {len(bounds)}")
        if any(b <= a for a, b in zip((0.0,) + bounds, bounds)):
            raise ConfigError(f"boundaries must be strictly increasing from 0: {bounds}")
        frames = self.boundaries_frames
        if any(
            abs(b * self.grid.frame_hz - f) > 1e-6 or f <= 0
            for f, b in zip(frames, bounds)
        ):
            raise ConfigError(f"boundaries {bounds} do not land on whole frames")

    @property
    def boundaries_frames(self) -> tuple[int, ...]:
        return tuple(round(b * self.grid.frame_hz) for b in self.boundaries_sec)

    @property
    def bin_widths_frames(self) -> tuple[int, ...]:
        frames = self.boundaries_frames
        return tuple(b - a for a, b in zip((0,) + frames, frames))

    @property
    def window_frames(self) -> int:
        """Total future-window length in frames (100 for the default layout)."""
        return self.boundaries_frames[-1]


DEFAULT_BINS = BinConfig()


def encode_state(bits: np.ndarray) -> int:
    """Pack a (2, 4) boolean bit array into a state index."""
    bits = np.asarray(bits)
    if bits.shape != (2, N_BINS):
        raise DimensionError(f"bits must have shape (2, {N_BINS}), got {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise ValidationError("bits must be boolean")
    weights = (1 << (4 * np.arange(2)[:, None] + np.arange(N_BINS)[None, :]))
    return int((bits.astype(np.int64) * weights).sum())


def decode_state(index: int) -> np.ndarray:
    """Unpack a state index into its (2, 4) boolean bit array."""
    if not 0 <= index < N_STATES:
        raise ValidationError(f"state index must be in 0..{N_STATES - 1}, got {index}")
    shifts = 4 * np.arange(2)[:, None] + np.arange(N_BINS)[None, :]
    return ((index >> shifts) & 1).astype(bool)


def _bit_table() -> np.ndarray:
    """bits[i, s, b] for all 256 states, shape (256, 2, 4)."""
    idx = np.arange(N_STATES)[:, None, None]
    shifts = 4 * np.arange(2)[None, :, None] + np.arange(N_BINS)[None, None, :]
    return ((idx >> shifts) & 1).astype(bool)


# Precomputed once; read-only.
STATE_BITS = _bit_table()
STATE_BITS.setflags(write=False)


def swap_speakers_state(index: int) -> int:
    """State index after exchanging the two speakers (nibble swap)."""
    if not 0 <= index < N_STATES:
        raise ValidationError(f"state index must be in 0..{N_STATES - 1}, got {index}")
    return ((index & 0x0F) << 4) | (index >> 4)


def _swap_table() -> np.ndarray:
    return np.array([swap_speakers_state(i) for i in range(N_STATES)], dtype=np.int64)


# SWAP_PERM[i] is state i with speakers exchanged; an involution.
SWAP_PERM = _swap_table()
SWAP_PERM.setflags(write=False)


def discretize_window(future_vad: np.ndarray, cfg: BinConfig = DEFAULT_BINS) -> int:
    """Discretize a (2, window_frames) future activity window into a state.

    A bin's bit is set iff its voiced frames strictly outnumber its
    unvoiced frames; an exact tie leaves the bit unset.
    """
    future_vad = np.asarray(future_vad)
    expected = (2, cfg.window_frames)
    if future_vad.shape != expected:
        raise DimensionError(f"window must have shape {expected}, got {future_vad.shape}")
    bits = np.zeros((2, N_BINS), dtype=bool)
    start = 0
    for b, stop in enumerate(cfg.boundaries_frames):
        width = stop - start
        voiced = future_vad[:, start:stop].sum(axis=1)
        bits[:, b] = voiced * 2 > width
        start = stop
    return encode_state(bits)


def bin_marginals(probs: np.ndarray) -> np.ndarray:
    """Per-(speaker, bin) marginal activation probabilities, shape (2, 4).

    marginal(s, b) sums the probability of every state whose (s, b) bit is
    set.  Supports a leading batch of distributions: (..., 256) -> (..., 2, 4).
    """
    probs = _check_distribution(probs)
    # (..., 256) x (256, 2, 4) summed over states.
    return np.einsum("...i,isb->...sb", probs, STATE_BITS.astype(probs.dtype))


@dataclass(frozen=True)
class ProjectionSummary:
    """Two-way next-speaker summaries of a state distribution."""

    p_now: np.ndarray
    p_future: np.ndarray

    def __post_init__(self) -> None:
        for name, pair in (("p_now", self.p_now), ("p_future", self.p_future)):
            pair = np.asarray(pair)
            if pair.shape[-1] != 2:
                raise DimensionError(f"{name} must have a trailing dimension of 2")
            if not np.all(pair > 0) or np.abs(pair.sum(axis=-1) - 1).max() > 1e-6:
                raise ValidationError(f"{name} must be strictly positive and sum to 1")


def _check_distribution(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1] != N_STATES:
        raise DimensionError(f"distribution must have trailing size {N_STATES}")
    if probs.min() < 0:
        raise ValidationError("distribution has negative mass")
    if np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-6:
        raise ValidationError("distribution does not sum to 1 within 1e-6")
    return probs


def _softmax_pair(sums: np.ndarray) -> np.ndarray:
    shifted = sums - sums.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def project_now_future(
    probs: np.ndarray, weight_by_width: bool = False
) -> ProjectionSummary:
    """Collapse a state distribution into p_now and p_future.

    now_sum(s) adds the speaker's bin 0 and bin 1 marginals, future_sum(s)
    bins 2 and 3; each pair of sums goes through a softmax over speakers.
    Bins count equally by default; weight_by_width=True scales each
    marginal by its bin width in frames instead.
    """
    marg = bin_marginals(probs)
    if weight_by_width:
        widths = np.asarray(DEFAULT_BINS.bin_widths_frames, dtype=marg.dtype)
        marg = marg * widths
    now_sums = marg[..., 0] + marg[..., 1]
    fut_sums = marg[..., 2] + marg[..., 3]
    return ProjectionSummary(
        p_now=_softmax_pair(now_sums), p_future=_softmax_pair(fut_sums)
    )


def label_stream(stream: VadStream, cfg: BinConfig = DEFAULT_BINS) -> np.ndarray:
    """Per-frame future-state labels for a dialogue.

    The label for frame t discretizes frames t+1 .. t+window (strictly
    future), so the final window_frames frames carry no label: a stream of
    n frames yields n - window labels (int64).  Streams shorter than
    window + 1 frames yield an empty array with a warning.
    """
    w = cfg.window_frames
    n = stream.n_frames
    if n < w + 1:
        log.warning("stream of %d frames is too short for any label (need %d)", n, w + 1)
        return np.zeros(0, dtype=np.int64)
    act = stream.activity
    n_labels = n - w
    # Cumulative voiced counts give each window's per-bin sums in O(1).
    csum = np.concatenate(
        [np.zeros((2, 1), dtype=np.int64), np.cumsum(act, axis=1, dtype=np.int64)], axis=1
    )
    labels = np.zeros(n_labels, dtype=np.int64)
    t = np.arange(n_labels)
    start = 0
    for b, stop in enumerate(cfg.boundaries_frames):
        width = stop - start
        # Window of frame t spans t+1 .. t+w; bin b covers t+1+start .. t+stop.
        voiced = csum[:, t + 1 + stop] - csum[:, t + 1 + start]
        bits = (voiced * 2 > width).astype(np.int64)
        labels += bits[0] << b
        labels += bits[1] << (4 + b)
        start = stop
    return labels


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    """Dump state labels: 16-byte header then one byte per frame."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionError("labels must be one-dimensional")
    if labels.size and not ((labels >= 0) & (labels < N_STATES)).all():
        raise ValidationError("labels out of state range")
    header = struct.pack("<4sIQ", _LABEL_MAGIC, _LABEL_VERSION, labels.size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + labels.astype(np.uint8).tobytes())


def load_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"label file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16:
        raise ValidationError(f"{path}: truncated label file header")
    magic, version, count = struct.unpack("<4sIQ", blob[:16])
    if magic != _LABEL_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != _LABEL_VERSION:
        raise ValidationError(f"{path}: unsupported label file version {version}")
    body = blob[16:]
    if len(body) != count:
        raise ValidationError(f"{path}: expected {count} label bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)
