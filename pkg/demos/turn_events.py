#!/usr/bin/env python3
"""Turn-taking events from a synthetic dialogue.

Generates one two-minute pseudo-language dialogue, converts its ground
truth voice activity to a frame stream, and extracts mutual silences,
gap/pause statistics, and labeled shift/hold decision points.
"""

import numpy as np

from vapturn import (
    DEFAULT_GRID,
    count_shift_hold,
    default_specs,
    duration_histogram,
    extract_shift_hold,
    extract_silences,
    generate_dialogue,
    segments_to_stream,
)


def ascii_hist(counts: np.ndarray, width: float, scale: int = 40) -> None:
    top = counts.max() if counts.size else 1
    for k, c in enumerate(counts):
        bar = "#" * round(scale * c / top)
        print(f"  [{k * width:4.2f}, {(k + 1) * width:4.2f})  {c:4d}  {bar}")


def main() -> None:
    spec = default_specs()[0]
    dialogue = generate_dialogue(spec, duration_sec=120.0, seed=7)
    n_frames = DEFAULT_GRID.n_frames_for_samples(dialogue.waveform.shape[1])
    stream = segments_to_stream(dialogue.segments, n_frames, DEFAULT_GRID)
    print(f"dialogue: spec={dialogue.spec_name} frames={n_frames} "
          f"({n_frames / DEFAULT_GRID.frame_hz:.0f} s)")

    silences = extract_silences(stream)
    gaps = [e for e in silences if e.kind == "gap"]
    pauses = [e for e in silences if e.kind == "pause"]
    print(f"mutual silences: {len(silences)} ({len(gaps)} gaps, {len(pauses)} pauses)")
    print(f"mean gap   {np.mean([e.duration_sec for e in gaps]):.3f} s")
    print(f"mean pause {np.mean([e.duration_sec for e in pauses]):.3f} s")
    print()

    print("gap duration histogram (0.1 s bins):")
    ascii_hist(duration_histogram(silences, "gap", 0.1), 0.1)
    print("pause duration histogram (0.1 s bins):")
    ascii_hist(duration_histogram(silences, "pause", 0.1), 0.1)
    print()

    samples = extract_shift_hold(stream)
    stats = count_shift_hold(samples)
    print(f"qualifying decision points: {stats.n_shift} shifts, {stats.n_hold} holds")
    print("(a point qualifies when the silence exceeds 0.25 s and both flanking")
    print(" utterances are at least 1 s long with no overlapping speech)")
    print()

    print("first five decisions:")
    for s in samples[:5]:
        t = s.decision_frame / DEFAULT_GRID.frame_hz
        print(f"  frame {s.decision_frame:5d} ({t:6.2f} s)  {s.label.upper():5s}  "
              f"speaker {s.silence.prev_speaker} -> {s.silence.next_speaker}")


if __name__ == "__main__":
    main()
