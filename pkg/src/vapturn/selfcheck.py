"""Fast self-contained invariant checks behind the `selftest` subcommand.

Each check re-derives its expected values with deliberately different code
than the implementation under test (python loops instead of vectorized
numpy, integer-millisecond thresholds instead of float epsilons) so a
passing run means two independent derivations agree.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import (
    DEFAULT_BINS,
    N_STATES,
    bin_marginals,
    decode_state,
    discretize_window,
    encode_state,
    project_now_future,
)
from .encoder import BaselineEncoder, load_features, save_features
from .events import extract_shift_hold
from .frames import DEFAULT_GRID, VadStream

__all__ = ["run_selftest"]


def _check_state_roundtrip() -> None:
    for s in range(N_STATES):
        bits = decode_state(s)
        if encode_state(bits) != s:
            raise AssertionError(f"state {s} does not round trip")


def _check_discretize_bruteforce() -> None:
    rng = np.random.default_rng(20240917)
    bounds = [0, 10, 30, 60, 100]
    for _ in range(500):
        win = rng.random((2, 100)) < rng.uniform(0.1, 0.9)
        got = discretize_window(win, DEFAULT_BINS)
        want = 0
        for spk in range(2):
            for b in range(4):
                seg = win[spk, bounds[b] : bounds[b + 1]]
                voiced = int(seg.sum())
                if voiced > len(seg) - voiced:
                    want |= 1 << (4 * spk + b)
        if got != want:
            raise AssertionError(f"discretize mismatch: got {got}, want {want}")


def _check_marginals() -> None:
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = rng.random(N_STATES)
        p /= p.sum()
        marg = bin_marginals(p)
        for spk in range(2):
            for b in range(4):
                acc = sum(
                    p[s] for s in range(N_STATES) if (s >> (4 * spk + b)) & 1
                )
                if abs(marg[spk, b] - acc) > 1e-9:
                    raise AssertionError("marginal disagrees with state sum")


def _check_projection_anchors() -> None:
    uniform = np.full(N_STATES, 1.0 / N_STATES)
    pr = project_now_future(uniform)
    if not (np.allclose(pr.p_now, 0.5, atol=1e-9) and np.allclose(pr.p_future, 0.5, atol=1e-9)):
        raise AssertionError("uniform distribution must project to (0.5, 0.5)")
    onehot = np.zeros(N_STATES)
    onehot[3] = 1.0
    pr = project_now_future(onehot)
    want = math.exp(2.0) / (math.exp(2.0) + 1.0)
    if abs(pr.p_now[0] - want) > 1e-6:
        raise AssertionError(f"one-hot state 3: p_now[0]={pr.p_now[0]:.6f}, want {want:.6f}")


def _check_loss_anchors() -> None:
    import torch

    from .net import LossBreakdown, NetworkOutput, masked_losses

    t = 12
    out = NetworkOutput(
        vap_logits=torch.zeros(1, t, N_STATES),
        vad_logits=torch.zeros(1, t, 2),
        lid_logits=None,
    )
    labels = torch.zeros(1, t - 4, dtype=torch.int64)
    truth = torch.zeros(1, t, 2)
    lb: LossBreakdown = masked_losses(out, labels, truth)
    if abs(float(lb.l_vap) - math.log(N_STATES)) > 1e-6:
        raise AssertionError("uniform logits must give l_vap = ln 256")
    if abs(float(lb.l_vad) - 2.0 * math.log(2.0)) > 1e-6:
        raise AssertionError("0.5 activity probabilities must give l_vad = 2 ln 2")


def _check_net_causality() -> None:
    import torch

    from .net import ModelConfig, VapNet

    cfg = ModelConfig(
        d_model=16, heads=2, dropout=0.0, max_frames=64, input_dim=8, lid_classes=2
    )
    net = VapNet(cfg, seed=0)
    net.eval()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 24, 8)).astype(np.float32)
    with torch.no_grad():
        ref = net(x).vap_logits
        cut = 10
        y = x.copy()
        y[:, cut:, :] = rng.normal(size=(2, 24 - cut, 8))
        got = net(y).vap_logits
    if not torch.equal(ref[:cut], got[:cut]):
        raise AssertionError("future frames leaked into past outputs")


def _check_gradients() -> None:
    from .net import gradient_check

    max_rel_err = gradient_check(seed=0, coords_per_tensor=1, n_frames=6)
    if max_rel_err > 1e-4:
        raise AssertionError(
            f"analytic gradients disagree with finite differences: {max_rel_err:.2e}"
        )


def _brute_shift_hold(act: np.ndarray) -> list[tuple[int, str]]:
    """Frame-by-frame rederivation of shift/hold samples in pure python.

    Thresholds use integer milliseconds (20 ms frames): a silence qualifies
    iff frames*20 > 250, a bridge closes iff gap*20 < 250, an utterance
    counts iff span*20 >= 1000.
    """
    n = act.shape[1]
    voiced = [bool(act[0, f]) or bool(act[1, f]) for f in range(n)]
    out: list[tuple[int, str]] = []
    f = 0
    while f < n:
        if voiced[f]:
            f += 1
            continue
        start = f
        while f < n and not voiced[f]:
            f += 1
        end = f
        if start == 0 or end == n:
            continue
        if (end - start) * 20 <= 250:
            continue

        def run_start(spk: int, at: int) -> int:
            k = at
            while k >= 0 and act[spk, k]:
                k -= 1
            return k + 1

        def run_end(spk: int, at: int) -> int:
            k = at
            while k < n and act[spk, k]:
                k += 1
            return k

        a_prev, b_prev = bool(act[0, start - 1]), bool(act[1, start - 1])
        if a_prev and b_prev:
            prev = 0 if run_start(0, start - 1) <= run_start(1, start - 1) else 1
        else:
            prev = 0 if a_prev else 1
        a_next, b_next = bool(act[0, end]), bool(act[1, end])
        if a_next and b_next:
            prev_kind_next = 0 if run_end(0, end) >= run_end(1, end) else 1
            nxt = prev_kind_next
        else:
            nxt = 0 if a_next else 1

        def bridged_span(spk: int, at: int, direction: int) -> tuple[int, int]:
            lo = run_start(spk, at)
            hi = run_end(spk, at)
            while True:
                if direction < 0:
                    k = lo - 1
                    gap = 0
                    while k >= 0 and not act[spk, k]:
                        gap += 1
                        k -= 1
                    if k >= 0 and gap * 20 < 250:
                        lo = run_start(spk, k)
                    else:
                        break
                else:
                    k = hi
                    gap = 0
                    while k < n and not act[spk, k]:
                        gap += 1
                        k += 1
                    if k < n and gap * 20 < 250:
                        hi = run_end(spk, k)
                    else:
                        break
            return lo, hi

        lo_p, hi_p = bridged_span(prev, start - 1, -1)
        lo_n, hi_n = bridged_span(nxt, end, +1)
        if (hi_p - lo_p) * 20 < 1000 or (hi_n - lo_n) * 20 < 1000:
            continue
        other_prev, other_next = 1 - prev, 1 - nxt
        flank = 50
        pre = slice(max(0, start - flank), start)
        post = slice(end, min(n, end + flank))
        if act[other_prev, pre].any() or act[other_next, post].any():
            continue
        out.append((start + 2, "shift" if prev != nxt else "hold"))
    return out


def _check_event_oracle() -> None:
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = 400
        act = np.zeros((2, n), dtype=bool)
        for spk in range(2):
            f = 0
            while f < n:
                talk = int(rng.integers(20, 90))
                act[spk, f : f + talk] = True
                f += talk + int(rng.integers(5, 60))
        stream = VadStream(act, DEFAULT_GRID)
        got = [(s.decision_frame, s.label) for s in extract_shift_hold(stream)]
        want = _brute_shift_hold(act)
        if got != want:
            raise AssertionError(f"event extraction disagrees: got {got}, want {want}")


def _check_encoder() -> None:
    enc = BaselineEncoder(seed=0)
    rng = np.random.default_rng(5)
    wav = rng.normal(scale=0.1, size=8 * 320).astype(np.float32)
    a = enc.encode(wav)
    b = enc.encode(wav)
    if not np.array_equal(a, b):
        raise AssertionError("encoder is not deterministic")
    longer = np.concatenate([wav, rng.normal(scale=0.1, size=4 * 320).astype(np.float32)])
    c = enc.encode(longer)
    if not np.allclose(a, c[: len(a)], atol=1e-5):
        raise AssertionError("appending audio changed earlier feature frames")


def _check_feature_io() -> None:
    rng = np.random.default_rng(9)
    feats = rng.normal(size=(17, 256)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.feat"
        save_features(path, feats)
        back = load_features(path, expected_frames=17)
        if not np.array_equal(feats, back):
            raise AssertionError("feature file round trip is not exact")


_CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("state codec round trip (256 states)", _check_state_roundtrip),
    ("window discretization vs brute force", _check_discretize_bruteforce),
    ("bin marginals vs state sums", _check_marginals),
    ("projection anchors", _check_projection_anchors),
    ("loss anchors", _check_loss_anchors),
    ("network causality", _check_net_causality),
    ("analytic vs numeric gradients", _check_gradients),
    ("turn event extraction vs brute force", _check_event_oracle),
    ("encoder determinism and causality", _check_encoder),
    ("feature file round trip", _check_feature_io),
]


def run_selftest(log: Callable[[str], None] = print) -> bool:
    """Run every check, printing one PASS/FAIL line each.  True iff all pass."""
    ok = True
    for name, fn in _CHECKS:
        t0 = time.time()
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and continue
            ok = False
            log(f"FAIL  {name}: {exc}")
        else:
            log(f"PASS  {name} ({time.time() - t0:.2f}s)")
    return ok
