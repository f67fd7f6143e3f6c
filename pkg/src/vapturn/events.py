"""Turn-taking events from activity streams.

A mutual silence is a maximal stretch where neither speaker is voiced,
flanked by speech on both sides.  Comparing who spoke immediately before
with who speaks immediately after classifies it as a gap (different
speakers, a turn shift) or a pause (same speaker holding the turn).

Shift/hold samples are the stricter evaluation subset: the silence must
exceed min_silence, each side must carry a single-speaker utterance of at
least min_utt, and the flanking min_utt windows must be free of
overlapping speech.  The decision point sits decision_offset seconds into
the silence, floored to a frame so it never peeks past that moment.

Boundary conventions (the frame-level data admits corner cases the rules
above leave open; these are frozen here):

* If both speakers are voiced in the frame before a silence, the one whose
  voiced run started earlier counts as the previous speaker (the holder);
  ties go to speaker 0.  Symmetrically, after the silence the run that
  extends further wins.
* An utterance is a maximal voiced run of one speaker with internal
  unvoiced stretches strictly shorter than min_silence bridged; its span
  runs from first to last voiced frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .frames import DEFAULT_GRID, FrameGrid, VadStream, voiced_runs

# Absorbs float noise in second->frame threshold products (0.25*50 == 12.5
# must split integers 12 and 13 exactly, 0.06*50 == 2.99...96 must act as 3).
_THRESH_EPS = 1e-6

GAP = "gap"
PAUSE = "pause"
SHIFT = "shift"
HOLD = "hold"


@dataclass(frozen=True)
class SilenceEvent:
    """One flanked mutual silence, in frame units with derived seconds."""

    start_frame: int
    end_frame: int
    prev_speaker: int
    next_speaker: int
    grid: FrameGrid = DEFAULT_GRID

    def __post_init__(self) -> None:
        if self.end_frame <= self.start_frame:
            raise ValidationError("silence must cover at least one frame")
        if self.prev_speaker not in (0, 1) or self.next_speaker not in (0, 1):
            raise ValidationError("speaker indices must be 0 or 1")

    @property
    def kind(self) -> str:
        return GAP if self.prev_speaker != self.next_speaker else PAUSE

    @property
    def start_sec(self) -> float:
        return self.start_frame * self.grid.frame_period

    @property
    def end_sec(self) -> float:
        return self.end_frame * self.grid.frame_period

    @property
    def duration_sec(self) -> float:
        return (self.end_frame - self.start_frame) * self.grid.frame_period


@dataclass(frozen=True)
class ShiftHoldSample:
    """A labeled decision point at a qualifying silence."""

    decision_frame: int
    label: str
    silence: SilenceEvent

    def __post_init__(self) -> None:
        if self.label not in (SHIFT, HOLD):
            raise ValidationError(f"label must be {SHIFT!r} or {HOLD!r}")
        expected = SHIFT if self.silence.kind == GAP else HOLD
        if self.label != expected:
            raise ValidationError(f"label {self.label} contradicts silence kind")


def _run_containing(runs: list[tuple[int, int]], frame: int) -> tuple[int, int] | None:
    for a, b in runs:
        if a <= frame < b:
            return (a, b)
    return None


def extract_silences(stream: VadStream) -> list[SilenceEvent]:
    """All maximal mutual silences flanked by speech on both sides.

    Leading and trailing silence has speech on only one side and is
    excluded.  Events are returned in time order and never overlap.
    """
    act = stream.activity
    raw_runs = [voiced_runs(act[0]), voiced_runs(act[1])]
    events: list[SilenceEvent] = []
    for start, end in voiced_runs(stream.mutual_silence()):
        if start == 0 or end == stream.n_frames:
            continue
        before = [s for s in (0, 1) if act[s, start - 1]]
        after = [s for s in (0, 1) if act[s, end]]
        if len(before) == 1:
            prev = before[0]
        else:
            # Earlier run onset wins; ties go to speaker 0.
            onsets = [_run_containing(raw_runs[s], start - 1)[0] for s in (0, 1)]
            prev = 0 if onsets[0] <= onsets[1] else 1
        if len(after) == 1:
            nxt = after[0]
        else:
            offsets = [_run_containing(raw_runs[s], end)[1] for s in (0, 1)]
            nxt = 0 if offsets[0] >= offsets[1] else 1
        events.append(
            SilenceEvent(
                start_frame=start,
                end_frame=end,
                prev_speaker=prev,
                next_speaker=nxt,
                grid=stream.grid,
            )
        )
    return events


def bridged_utterances(
    mask: np.ndarray, min_silence: float, grid: FrameGrid = DEFAULT_GRID
) -> list[tuple[int, int]]:
    """Voiced runs of one speaker with short internal silences bridged.

    An unvoiced stretch strictly shorter than min_silence joins its
    neighbours into one utterance.  Returns half-open frame spans.
    """
    bridge_limit = min_silence * grid.frame_hz - _THRESH_EPS
    merged: list[tuple[int, int]] = []
    for a, b in voiced_runs(mask):
        if merged and a - merged[-1][1] < bridge_limit:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def extract_shift_hold(
    stream: VadStream,
    min_silence: float = 0.25,
    min_utt: float = 1.0,
    decision_offset: float = 0.05,
) -> list[ShiftHoldSample]:
    """Labeled shift/hold decision points from one dialogue's stream.

    A flanked mutual silence qualifies when its duration strictly exceeds
    min_silence, the previous speaker's utterance ending at the silence
    and the next speaker's utterance starting at its end each span at
    least min_utt, and no overlapping speech occurs within min_utt on
    either side.  The decision frame is floor((start + decision_offset)
    in frames), i.e. offset frames into the silence.
    """
    if min_silence <= 0 or min_utt <= 0 or decision_offset < 0:
        raise ValidationError("thresholds must be positive (offset non-negative)")
    grid = stream.grid
    min_sil_frames = min_silence * grid.frame_hz + _THRESH_EPS
    min_utt_frames = min_utt * grid.frame_hz - _THRESH_EPS
    flank = round(min_utt * grid.frame_hz)
    offset_frames = int(math.floor(decision_offset * grid.frame_hz + 1e-9))
    act = stream.activity
    overlap = act[0] & act[1]
    utts = [
        bridged_utterances(act[0], min_silence, grid),
        bridged_utterances(act[1], min_silence, grid),
    ]
    samples: list[ShiftHoldSample] = []
    for ev in extract_silences(stream):
        if not (ev.end_frame - ev.start_frame) > min_sil_frames:
            continue
        prev_utt = _run_containing(utts[ev.prev_speaker], ev.start_frame - 1)
        next_utt = _run_containing(utts[ev.next_speaker], ev.end_frame)
        if prev_utt is None or next_utt is None:
            continue
        if prev_utt[1] - prev_utt[0] < min_utt_frames:
            continue
        if next_utt[1] - next_utt[0] < min_utt_frames:
            continue
        lo = max(0, ev.start_frame - flank)
        hi = min(stream.n_frames, ev.end_frame + flank)
        if overlap[lo : ev.start_frame].any() or overlap[ev.end_frame : hi].any():
            continue
        samples.append(
            ShiftHoldSample(
                decision_frame=ev.start_frame + offset_frames,
                label=SHIFT if ev.kind == GAP else HOLD,
                silence=ev,
            )
        )
    return samples


def duration_histogram(
    events: Iterable[SilenceEvent], kind: str, bin_width_sec: float
) -> np.ndarray:
    """Histogram of event durations for one kind over half-open bins.

    Bin k covers [k*w, (k+1)*w); the array extends to the last non-empty
    bin and sums to the number of matching events.  Durations sitting on a
    boundary (up to float noise in frame-quantized values) go to the upper
    bin, so 0.1 with w=0.1 lands in bin 1.
    """
    if bin_width_sec <= 0:
        raise ValidationError("bin width must be positive")
    if kind not in (GAP, PAUSE):
        raise ValidationError(f"kind must be {GAP!r} or {PAUSE!r}")
    bins = [
        int(math.floor(ev.duration_sec / bin_width_sec + 1e-9))
        for ev in events
        if ev.kind == kind
    ]
    if not bins:
        return np.zeros(0, dtype=np.int64)
    counts = np.zeros(max(bins) + 1, dtype=np.int64)
    for b in bins:
        counts[b] += 1
    return counts


@dataclass(frozen=True)
class ShiftHoldStats:
    """Shift/hold class counts for one corpus slice."""

    n_shift: int
    n_hold: int

    @property
    def pct_shift(self) -> float:
        total = self.n_shift + self.n_hold
        return 100.0 * self.n_shift / total if total else math.nan


def count_shift_hold(samples: Iterable[ShiftHoldSample]) -> ShiftHoldStats:
    n_shift = n_hold = 0
    for s in samples:
        if s.label == SHIFT:
            n_shift += 1
        else:
            n_hold += 1
    return ShiftHoldStats(n_shift=n_shift, n_hold=n_hold)


def format_stats_table(rows: list[tuple[str, ShiftHoldStats]]) -> str:
    """Render per-language class counts as a '#Shift #Hold %Shift' table."""
    name_w = max([len("Language")] + [len(name) for name, _ in rows])
    lines = [f"{'Language':<{name_w}}  {'#Shift':>8}  {'#Hold':>8}  {'%Shift':>7}"]
    for name, st in rows:
        pct = f"{st.pct_shift:.1f}" if not math.isnan(st.pct_shift) else "-"
        lines.append(f"{name:<{name_w}}  {st.n_shift:>8}  {st.n_hold:>8}  {pct:>7}")
    return "\n".join(lines)


def write_events_tsv(
    path: str | Path, rows: Iterable[tuple[str, SilenceEvent]]
) -> None:
    """Export events, one line per event:
    dialogue_id TAB kind TAB start TAB end TAB prev TAB next."""
    lines = [
        f"{dialogue_id}\t{ev.kind}\t{ev.start_sec:.3f}\t{ev.end_sec:.3f}"
        f"\t{ev.prev_speaker}\t{ev.next_speaker}"
        for dialogue_id, ev in rows
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_histogram_tsv(
    path: str | Path, counts: np.ndarray, bin_width_sec: float
) -> None:
    """Export a histogram as bin_start TAB count lines."""
    lines = [
        f"{k * bin_width_sec:.3f}\t{int(c)}" for k, c in enumerate(np.asarray(counts))
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
