#!/usr/bin/env python3
"""Tour of the 256-state future-activity codec.

Walks through the bit layout, round trips a few states, discretizes a
hand-built two-speaker future window, and shows how a full distribution
collapses to the next-speaker summaries p_now and p_future.
"""

import numpy as np

from vapturn import (
    DEFAULT_BINS,
    N_STATES,
    decode_state,
    discretize_window,
    encode_state,
    project_now_future,
    swap_speakers_state,
)


def show_state(index: int) -> None:
    bits = decode_state(index)
    rows = ["".join("#" if b else "." for b in bits[s]) for s in range(2)]
    print(f"  state {index:3d}  speaker0 bins {rows[0]}  speaker1 bins {rows[1]}")


def main() -> None:
    print(f"state space: {N_STATES} states = 2 speakers x {len(DEFAULT_BINS.boundaries_sec)} bins")
    print(f"bin boundaries (s): {DEFAULT_BINS.boundaries_sec}")
    print(f"bin widths (frames): {DEFAULT_BINS.bin_widths_frames}")
    print()

    print("low nibble is speaker 0, bit 0 is the earliest bin:")
    for index in (0, 1, 3, 12, 48, 255):
        show_state(index)
    print()

    print("encode/decode round trip over every state:")
    ok = all(encode_state(decode_state(i)) == i for i in range(N_STATES))
    print(f"  all {N_STATES} states round trip: {ok}")
    print()

    print("speaker swap exchanges the nibbles:")
    print(f"  swap(3) = {swap_speakers_state(3)}  (speaker-0 'now' becomes speaker-1 'now')")
    print()

    # Build a 2 s future window: speaker 0 talks for 0.5 s, then 0.3 s of
    # silence, then speaker 1 takes over for the rest.
    window = np.zeros((2, DEFAULT_BINS.window_frames), dtype=bool)
    window[0, :25] = True
    window[1, 40:] = True
    state = discretize_window(window)
    print("hand-built window: spk0 voiced 0-0.5 s, spk1 voiced 0.8-2.0 s")
    show_state(state)
    print("  (a bin is set only when voiced frames outnumber unvoiced ones)")
    print()

    # A one-hot distribution on that state produces decisive summaries.
    probs = np.zeros(N_STATES)
    probs[state] = 1.0
    summary = project_now_future(probs)
    print(f"one-hot on that state: p_now={np.round(summary.p_now, 4)} "
          f"p_future={np.round(summary.p_future, 4)}")

    uniform = np.full(N_STATES, 1.0 / N_STATES)
    summary = project_now_future(uniform)
    print(f"uniform distribution:  p_now={np.round(summary.p_now, 4)} "
          f"p_future={np.round(summary.p_future, 4)}  (no preference)")


if __name__ == "__main__":
    main()
