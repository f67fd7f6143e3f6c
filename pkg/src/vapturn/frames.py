"""Time and frame bookkeeping.

Everything downstream measures time on one grid: audio arrives at a fixed
sample rate and is reduced to a coarser frame rate used by the activity
annotations, the label codec, and the network.  This module owns the
conversion rules so that every component quantizes time the same way.

Conventions used throughout the package:

* a frame index f covers the half-open interval [f*period, (f+1)*period)
* seconds_to_frame floors, so a timestamp maps to the frame containing it
* a frame counts as voiced only when speech covers strictly more than half
  of it; exact half coverage stays unvoiced
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError

# Guards against decimal inputs such as 0.06 whose float image lands a hair
# below the exact product (0.06 * 50 == 2.9999...96).  One nanosecond of
# slack cannot move a genuinely earlier timestamp across a frame boundary.
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class FrameGrid:
    """Sampling geometry tying audio samples to analysis frames."""

    sample_rate: int = 16_000
    frame_hz: int = 50

    def __post_init__(self) -> None:
        if self.sample_rate <= 0 or self.frame_hz <= 0:
            raise ConfigError("sample_rate and frame_hz must be positive")
        if self.sample_rate % self.frame_hz != 0:
            raise ConfigError(
                f"sample_rate {self.sample_rate} is not divisible by "
                f"frame_hz {self.frame_hz}"
            )

    @property
    def samples_per_frame(self) -> int:
        return self.sample_rate // self.frame_hz

    @property
    def frame_period(self) -> float:
        """Duration of one frame in seconds."""
        return 1.0 / self.frame_hz

    def seconds_to_frame(self, t: float) -> int:
        return seconds_to_frame(t, self)

    def frame_to_seconds(self, f: int) -> float:
        """Start time of frame f."""
        return f / self.frame_hz

    def n_frames_for_samples(self, n_samples: int) -> int:
        """Whole frames covered by a sample count; a partial tail is dropped."""
        if n_samples < 0:
            raise ValidationError("sample count must be non-negative")
        return n_samples // self.samples_per_frame


DEFAULT_GRID = FrameGrid()


def seconds_to_frame(t: float, grid: FrameGrid = DEFAULT_GRID) -> int:
    """Map a timestamp in seconds to the frame index containing it."""
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"timestamp must be finite and >= 0, got {t}")
    return int(math.floor(t * grid.frame_hz + _EDGE_EPS))


@dataclass(frozen=True)
class VadSegments:
    """Voice activity as per-speaker lists of [onset, offset) second intervals.

    Each speaker's list must be sorted by onset and free of overlaps; the
    two speakers may overlap each other freely.
    """

    speakers: tuple[tuple[tuple[float, float], ...], tuple[tuple[float, float], ...]]

    def __post_init__(self) -> None:
        if len(self.speakers) != 2:
            raise ValidationError("expected exactly two speakers")
        for idx, segs in enumerate(self.speakers):
            prev_end = -math.inf
            for onset, offset in segs:
                if not (math.isfinite(onset) and math.isfinite(offset)):
                    raise ValidationError(f"speaker {idx}: non-finite segment bound")
                if onset < 0:
                    raise ValidationError(f"speaker {idx}: negative onset {onset}")
                if offset <= onset:
                    raise ValidationError(
                        f"speaker {idx}: empty or inverted segment [{onset}, {offset})"
                    )
                if onset < prev_end:
                    raise ValidationError(
                        f"speaker {idx}: segments overlap or are out of order "
                        f"near onset {onset}"
                    )
                prev_end = offset

    @staticmethod
    def from_lists(
        speaker0: list[tuple[float, float]], speaker1: list[tuple[float, float]]
    ) -> "VadSegments":
        return VadSegments((tuple(map(tuple, speaker0)), tuple(map(tuple, speaker1))))

    @property
    def end_time(self) -> float:
        """Offset of the last segment across both speakers, 0.0 if empty."""
        ends = [segs[-1][1] for segs in self.speakers if segs]
        return max(ends) if ends else 0.0


@dataclass
class VadStream:
    """Frame-level voice activity: boolean array of shape (2, n_frames)."""

    activity: np.ndarray
    grid: FrameGrid = field(default_factory=FrameGrid)

    def __post_init__(self) -> None:
        self.activity = np.asarray(self.activity)
        if self.activity.ndim != 2 or self.activity.shape[0] != 2:
            raise DimensionError(
                f"activity must have shape (2, n_frames), got {self.activity.shape}"
            )
        if self.activity.dtype != np.bool_:
            if not np.isin(self.activity, (0, 1)).all():
                raise ValidationError("activity values must be boolean")
            self.activity = self.activity.astype(bool)

    @property
    def n_frames(self) -> int:
        return self.activity.shape[1]

    def mutual_silence(self) -> np.ndarray:
        """Frames where neither speaker is voiced, shape (n_frames,)."""
        return ~(self.activity[0] | self.activity[1])

    def slice(self, start: int, stop: int) -> "VadStream":
        if not (0 <= start <= stop <= self.n_frames):
            raise DimensionError(
                f"slice [{start}, {stop}) outside 0..{self.n_frames}"
            )
        return VadStream(self.activity[:, start:stop].copy(), self.grid)


def segments_to_stream(
    segments: VadSegments, n_frames: int, grid: FrameGrid = DEFAULT_GRID
) -> VadStream:
    """Rasterize second-level segments onto the frame grid.

    A frame is voiced for a speaker iff that speaker's segments cover
    strictly more than half of the frame.  Coverage is totalled in integer
    microseconds so that exact half coverage (for example a segment
    [0.005, 0.015) against 20 ms frames) reliably stays unvoiced.
    """
    if n_frames < 0:
        raise ValidationError("n_frames must be non-negative")
    frame_us = round(1e6 / grid.frame_hz)
    activity = np.zeros((2, n_frames), dtype=bool)
    for spk, segs in enumerate(segments.speakers):
        overlap = np.zeros(n_frames, dtype=np.int64)
        for onset, offset in segs:
            a = round(onset * 1e6)
            b = round(offset * 1e6)
            first = a // frame_us
            last = (b - 1) // frame_us
            if first >= n_frames or b <= a:
                continue
            last = min(last, n_frames - 1)
            f = np.arange(first, last + 1, dtype=np.int64)
            lo = np.maximum(f * frame_us, a)
            hi = np.minimum((f + 1) * frame_us, b)
            overlap[first : last + 1] += hi - lo
        activity[spk] = overlap * 2 > frame_us
    return VadStream(activity, grid)


def stream_to_segments(stream: VadStream) -> VadSegments:
    """Turn voiced frame runs back into frame-aligned second intervals."""
    period = stream.grid.frame_period
    out: list[list[tuple[float, float]]] = []
    for spk in range(2):
        row = stream.activity[spk]
        segs: list[tuple[float, float]] = []
        # Run boundaries: indices where the voiced flag changes.
        padded = np.concatenate(([False], row, [False]))
        changes = np.flatnonzero(padded[1:] != padded[:-1])
        for start, stop in zip(changes[0::2], changes[1::2]):
            segs.append((start * period, stop * period))
        out.append(segs)
    return VadSegments.from_lists(out[0], out[1])


def voiced_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open (start, stop) frame runs where a boolean mask is true."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1:
        raise DimensionError("voiced_runs expects a 1-d mask")
    padded = np.concatenate(([False], mask, [False]))
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b)) for a, b in zip(changes[0::2], changes[1::2])]
