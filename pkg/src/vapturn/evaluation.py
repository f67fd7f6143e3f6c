"""The evaluation battery.

Four entry points, all reading a trained checkpoint and manifests:

* eval_test_loss: frame-weighted mean vap loss per corpus language.
  Dialogues longer than the model window are tiled with a hop of
  window - label_window frames so every labeled frame is scored exactly
  once.
* eval_shift_hold: for each extracted shift/hold sample, run the model on
  the causal context ending at the decision frame, read p_now there, and
  predict the next speaker by argmax (ties predict continuation by the
  previous speaker).  Reports a confusion matrix and balanced accuracy,
  optionally auditing that context truncation at the decision frame does
  not change predictions.
* eval_lid: per-frame language decisions against the broadcast dialogue
  tag, reported as per-class precision/recall/F1 and support-weighted F1.
* eval_with_perturbation: pairs each dialogue with a perturbed rendering
  of the same audio (same name in another directory) and reports
  balanced-accuracy deltas per language; unmatched or length-mismatched
  dialogues are excluded from both sides.

Evaluation is deterministic: identical checkpoint and data give identical
results.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .audio import probe_audio
from .codec import DEFAULT_BINS, label_stream, project_now_future
from .corpus import DialogueManifest, corpus_languages, read_vad_file
from .encoder import FeatureProvider
from .errors import ConfigError, ValidationError
from .events import HOLD, SHIFT, ShiftHoldSample, extract_shift_hold
from .frames import DEFAULT_GRID, FrameGrid, segments_to_stream
from .net import VapNet
from .training import Checkpoint

log = logging.getLogger(__name__)

# Published reference magnitudes for the licensed eng/man/jpn benchmark
# corpora.  They are not reproducible here (the corpora are not shipped)
# and exist solely as documentation and to exercise table formatting;
# nothing in this package asserts outputs against them.
REFERENCE_TEST_LOSS = {"eng": 2.396, "man": 2.832, "jpn": 2.265}
REFERENCE_SHIFT_HOLD_COUNTS = {
    "eng": (1253, 11432),
    "man": (718, 1807),
    "jpn": (1029, 1371),
}
REFERENCE_SHIFT_HOLD_BALACC = {"eng": 77.16, "man": 84.60, "jpn": 76.54}
REFERENCE_PITCH_FLATTEN_DELTA_POINTS = {"eng": 0.12, "man": -2.30, "jpn": -1.81}
REFERENCE_LID_WEIGHTED_F1 = 99.99


@dataclass(frozen=True)
class SampleRecord:
    """One shift/hold decision with the model's view of it."""

    dialogue_id: str
    decision_frame: int
    truth: str
    prediction: str
    p_now: tuple[float, float]


@dataclass(frozen=True)
class AuditResult:
    """Outcome of the causal-truncation audit."""

    n_checked: int
    n_prediction_changed: int
    max_p_now_deviation: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.n_prediction_changed == 0


@dataclass
class ShiftHoldResult:
    """Confusion counts, balanced accuracy, and per-sample records.

    confusion[i, j] counts truth i predicted j with rows/cols ordered
    (shift, hold).  balanced_accuracy is the mean of the two class
    recalls; with one class absent it degrades to the other's recall.
    """

    confusion: np.ndarray
    records: list[SampleRecord]
    n_dropped: int = 0
    audit: AuditResult | None = None

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def balanced_accuracy(self) -> float:
        recalls = []
        for i in range(2):
            row = self.confusion[i].sum()
            if row:
                recalls.append(self.confusion[i, i] / row)
        if not recalls:
            return math.nan
        return float(np.mean(recalls))


@dataclass(frozen=True)
class LidResult:
    """Language identification metrics over frames."""

    confusion: np.ndarray  # (L, L), [true, predicted]
    class_names: tuple[str, ...]

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def precision(self) -> np.ndarray:
        col = self.confusion.sum(axis=0)
        return np.divide(
            np.diag(self.confusion), col, out=np.zeros(len(col)), where=col > 0
        )

    @property
    def recall(self) -> np.ndarray:
        row = self.confusion.sum(axis=1)
        return np.divide(
            np.diag(self.confusion), row, out=np.zeros(len(row)), where=row > 0
        )

    @property
    def f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        denom = p + r
        return np.divide(2 * p * r, denom, out=np.zeros(len(p)), where=denom > 0)

    @property
    def weighted_f1(self) -> float:
        support = self.support
        total = support.sum()
        if total == 0:
            return math.nan
        return float((self.f1 * support).sum() / total)


def _as_model(ckpt: Checkpoint | VapNet) -> VapNet:
    model = ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt
    model.eval()
    return model


def _load_stream(man: DialogueManifest, grid: FrameGrid):
    n_frames = grid.n_frames_for_samples(probe_audio(man.audio_path).n_samples)
    vad = read_vad_file(man.vad_path)
    return segments_to_stream(vad.segments, n_frames, grid), vad.languages


def _group_by_language(
    manifests: list[DialogueManifest],
) -> dict[str, list[DialogueManifest]]:
    if not manifests:
        return {}
    names = corpus_languages(manifests)
    groups: dict[str, list[DialogueManifest]] = {}
    for m in manifests:
        if m.language_tag >= len(names):
            raise ValidationError(
                f"{m.dialogue_id}: tag {m.language_tag} outside languages {names}"
            )
        groups.setdefault(names[m.language_tag], []).append(m)
    return groups


def eval_test_loss(
    ckpt: Checkpoint | VapNet,
    manifests: list[DialogueManifest],
    provider: FeatureProvider,
    grid: FrameGrid = DEFAULT_GRID,
) -> dict[str, float]:
    """Mean vap loss per corpus language, weighted by labeled frames.

    Languages with no dialogues in the manifest list are simply absent
    from the result.
    """
    model = _as_model(ckpt)
    window = model.cfg.max_frames
    label_window = DEFAULT_BINS.window_frames
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    with torch.no_grad():
        for name, group in _group_by_language(manifests).items():
            for man in group:
                stream, _ = _load_stream(man, grid)
                labels = label_stream(stream)
                if labels.size == 0:
                    continue
                feats = provider.features(man)
                s = 0
                n = stream.n_frames
                while s <= n - label_window - 1:
                    w = min(window, n - s)
                    out = model(np.asarray(feats[:, s : s + w]))
                    n_lab = w - label_window
                    target = torch.from_numpy(labels[s : s + n_lab])
                    ce = F.cross_entropy(
                        out.vap_logits[:n_lab], target, reduction="sum"
                    )
                    sums[name] = sums.get(name, 0.0) + float(ce)
                    counts[name] = counts.get(name, 0) + n_lab
                    s += n_lab
    return {name: sums[name] / counts[name] for name in sums}


def _p_now_from_logits(row: torch.Tensor) -> tuple[float, float]:
    probs = torch.softmax(row.double(), dim=-1).numpy()
    p = project_now_future(probs).p_now
    return float(p[0]), float(p[1])


def _predict(p_now: tuple[float, float], prev_speaker: int) -> int:
    # Exact tie: predict continuation by the previous speaker.
    if p_now[0] == p_now[1]:
        return prev_speaker
    return int(np.argmax(p_now))


def eval_shift_hold(
    ckpt: Checkpoint | VapNet,
    manifests: list[DialogueManifest],
    provider: FeatureProvider,
    grid: FrameGrid = DEFAULT_GRID,
    min_silence: float = 0.25,
    min_utt: float = 1.0,
    decision_offset: float = 0.05,
    batch_size: int = 8,
    audit_samples: int = 0,
) -> ShiftHoldResult:
    """Shift/hold prediction over every qualifying silence in the set.

    For each sample the model sees the causal context ending at the
    decision frame (at most max_frames of it); p_now at that frame picks
    the next speaker.  Samples whose decision frame lies beyond the
    stream are dropped with a warning.  audit_samples > 0 additionally
    re-runs that many samples with context extended past the decision
    frame and verifies the predictions do not change.
    """
    model = _as_model(ckpt)
    max_frames = model.cfg.max_frames
    confusion = np.zeros((2, 2), dtype=np.int64)
    records: list[SampleRecord] = []
    n_dropped = 0
    # (dialogue_id, sample, feats, start, ctx_len, n_frames)
    pending: list[tuple[str, ShiftHoldSample, np.ndarray, int, int, int]] = []
    for man in manifests:
        stream, _ = _load_stream(man, grid)
        samples = extract_shift_hold(stream, min_silence, min_utt, decision_offset)
        if not samples:
            continue
        feats = provider.features(man)
        for sample in samples:
            df = sample.decision_frame
            if df >= stream.n_frames:
                log.warning(
                    "%s: decision frame %d beyond stream of %d frames; dropped",
                    man.dialogue_id, df, stream.n_frames,
                )
                n_dropped += 1
                continue
            start = max(0, df - (max_frames - 1))
            pending.append(
                (man.dialogue_id, sample, feats, start, df - start + 1, stream.n_frames)
            )

    truth_row = {SHIFT: 0, HOLD: 1}
    audit_pool: list[tuple[np.ndarray, int, int, int, int, str]] = []
    with torch.no_grad():
        for i in range(0, len(pending), batch_size):
            chunk = pending[i : i + batch_size]
            t_max = max(c[4] for c in chunk)
            dim = provider.contract.output_dim
            batch = np.zeros((len(chunk), 2, t_max, dim), dtype=np.float32)
            for j, (_, _, feats, start, ctx_len, _) in enumerate(chunk):
                batch[j, :, :ctx_len] = feats[:, start : start + ctx_len]
            out = model(torch.from_numpy(batch))
            for j, (dialogue_id, sample, feats, start, ctx_len, n) in enumerate(chunk):
                p_now = _p_now_from_logits(out.vap_logits[j, ctx_len - 1])
                pred_speaker = _predict(p_now, sample.silence.prev_speaker)
                pred = SHIFT if pred_speaker != sample.silence.prev_speaker else HOLD
                confusion[truth_row[sample.label], truth_row[pred]] += 1
                records.append(
                    SampleRecord(
                        dialogue_id=dialogue_id,
                        decision_frame=sample.decision_frame,
                        truth=sample.label,
                        prediction=pred,
                        p_now=p_now,
                    )
                )
                if len(audit_pool) < audit_samples:
                    audit_pool.append(
                        (feats, start, ctx_len, n, sample.silence.prev_speaker, pred)
                    )

    audit = None
    if audit_samples > 0:
        audit = _run_truncation_audit(model, audit_pool, max_frames)
    return ShiftHoldResult(
        confusion=confusion, records=records, n_dropped=n_dropped, audit=audit
    )


def _run_truncation_audit(
    model: VapNet,
    pool: list[tuple[np.ndarray, int, int, int, int, str]],
    max_frames: int,
) -> AuditResult:
    """Re-run samples with context extended beyond the decision frame.

    Causal attention means frames after the decision frame must not move
    p_now at it; any prediction flip is a causality violation.
    """
    changed = 0
    max_dev = 0.0
    with torch.no_grad():
        for feats, start, ctx_len, n_frames, prev_speaker, pred_before in pool:
            ext_len = min(n_frames - start, max_frames)
            extended = np.asarray(feats[:, start : start + ext_len], dtype=np.float32)
            truncated = extended[:, :ctx_len]
            p_ext = _p_now_from_logits(model(extended).vap_logits[ctx_len - 1])
            p_trunc = _p_now_from_logits(model(truncated).vap_logits[ctx_len - 1])
            pred_speaker = _predict(p_ext, prev_speaker)
            pred_after = SHIFT if pred_speaker != prev_speaker else HOLD
            if pred_after != pred_before:
                changed += 1
            max_dev = max(max_dev, abs(p_trunc[0] - p_ext[0]))
    return AuditResult(
        n_checked=len(pool), n_prediction_changed=changed, max_p_now_deviation=max_dev
    )


def eval_shift_hold_by_language(
    ckpt: Checkpoint | VapNet,
    manifests: list[DialogueManifest],
    provider: FeatureProvider,
    **kwargs,
) -> dict[str, ShiftHoldResult]:
    """eval_shift_hold run separately per corpus language."""
    model = _as_model(ckpt)
    return {
        name: eval_shift_hold(model, group, provider, **kwargs)
        for name, group in _group_by_language(manifests).items()
    }


def eval_lid(
    ckpt: Checkpoint | VapNet,
    manifests: list[DialogueManifest],
    provider: FeatureProvider,
    grid: FrameGrid = DEFAULT_GRID,
) -> LidResult:
    """Frame-level language identification against broadcast dialogue tags."""
    model = _as_model(ckpt)
    if model.cfg.lid_classes == 0:
        raise ConfigError("checkpoint has no language head; train with lid_classes=L")
    names = corpus_languages(manifests)
    n_cls = model.cfg.lid_classes
    if len(names) > n_cls:
        raise ConfigError(
            f"corpus declares {len(names)} languages but the head has {n_cls} classes"
        )
    window = model.cfg.max_frames
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    with torch.no_grad():
        for man in manifests:
            feats = provider.features(man)
            n = feats.shape[1]
            s = 0
            while s < n:
                w = min(window, n - s)
                out = model(np.asarray(feats[:, s : s + w]))
                pred = out.lid_logits.argmax(dim=-1).numpy()
                binc = np.bincount(pred, minlength=n_cls)
                confusion[man.language_tag] += binc
                s += w
    return LidResult(confusion=confusion, class_names=tuple(names))


@dataclass
class PerturbationResult:
    """Paired original/perturbed shift-hold outcomes per language."""

    original: dict[str, ShiftHoldResult]
    perturbed: dict[str, ShiftHoldResult]
    n_excluded: int

    @property
    def delta_points(self) -> dict[str, float]:
        return {
            name: 100.0
            * (self.perturbed[name].balanced_accuracy - res.balanced_accuracy)
            for name, res in self.original.items()
            if name in self.perturbed
        }


def eval_with_perturbation(
    ckpt: Checkpoint | VapNet,
    manifests: list[DialogueManifest],
    perturbed_audio_dir: str | Path,
    provider: FeatureProvider,
    grid: FrameGrid = DEFAULT_GRID,
    **kwargs,
) -> PerturbationResult:
    """Paired evaluation on original vs perturbed renderings.

    A perturbed rendering must live in perturbed_audio_dir under the same
    file name as the original and match its length within 2 frames;
    otherwise the dialogue is excluded from both sides, keeping the
    comparison paired.  Perturbed entries get '.pert' appended to their
    dialogue ids so cached features never collide.
    """
    perturbed_audio_dir = Path(perturbed_audio_dir)
    if not perturbed_audio_dir.is_dir():
        raise ValidationError(f"perturbed audio dir not found: {perturbed_audio_dir}")
    kept: list[DialogueManifest] = []
    paired: list[DialogueManifest] = []
    n_excluded = 0
    for m in manifests:
        cand = perturbed_audio_dir / Path(m.audio_path).name
        if not cand.is_file():
            log.warning("%s: no perturbed audio %s; excluded", m.dialogue_id, cand)
            n_excluded += 1
            continue
        orig_frames = grid.n_frames_for_samples(probe_audio(m.audio_path).n_samples)
        pert_info = probe_audio(cand)
        pert_frames = grid.n_frames_for_samples(pert_info.n_samples)
        if abs(orig_frames - pert_frames) > 2:
            log.warning(
                "%s: perturbed length %d frames vs %d; excluded",
                m.dialogue_id, pert_frames, orig_frames,
            )
            n_excluded += 1
            continue
        kept.append(m)
        paired.append(
            dataclasses.replace(
                m,
                dialogue_id=m.dialogue_id + ".pert",
                audio_path=str(cand),
                duration_sec=pert_info.duration,
            )
        )
    model = _as_model(ckpt)
    original = eval_shift_hold_by_language(model, kept, provider, grid=grid, **kwargs)
    perturbed = eval_shift_hold_by_language(model, paired, provider, grid=grid, **kwargs)
    return PerturbationResult(
        original=original, perturbed=perturbed, n_excluded=n_excluded
    )


def infer_trace(
    ckpt: Checkpoint | VapNet,
    manifest: DialogueManifest,
    provider: FeatureProvider,
    out_path: str | Path,
    grid: FrameGrid = DEFAULT_GRID,
) -> int:
    """Export per-frame p_now/p_future for one dialogue.

    Writes `frame TAB p_now0 TAB p_now1 TAB p_future0 TAB p_future1`
    lines and returns the frame count.
    """
    model = _as_model(ckpt)
    window = model.cfg.max_frames
    feats = provider.features(manifest)
    n = feats.shape[1]
    lines: list[str] = []
    with torch.no_grad():
        s = 0
        while s < n:
            w = min(window, n - s)
            out = model(np.asarray(feats[:, s : s + w]))
            probs = torch.softmax(out.vap_logits.double(), dim=-1).numpy()
            proj = project_now_future(probs)
            for i in range(w):
                lines.append(
                    f"{s + i}\t{proj.p_now[i, 0]:.6f}\t{proj.p_now[i, 1]:.6f}"
                    f"\t{proj.p_future[i, 0]:.6f}\t{proj.p_future[i, 1]:.6f}"
                )
            s += w
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return n


def format_loss_table(losses: dict[str, float]) -> str:
    """Per-language test loss in the layout of the benchmark loss table."""
    name_w = max([len("Language")] + [len(k) for k in losses])
    lines = [f"{'Language':<{name_w}}  {'TestLoss':>8}"]
    for name, value in losses.items():
        lines.append(f"{name:<{name_w}}  {value:>8.3f}")
    return "\n".join(lines)


def format_shift_hold_table(results: dict[str, ShiftHoldResult]) -> str:
    name_w = max([len("Language")] + [len(k) for k in results])
    lines = [
        f"{'Language':<{name_w}}  {'BalAcc%':>8}  {'#Shift':>7}  {'#Hold':>7}"
        f"  {'Dropped':>7}"
    ]
    for name, res in results.items():
        n_shift = int(res.confusion[0].sum())
        n_hold = int(res.confusion[1].sum())
        acc = 100.0 * res.balanced_accuracy
        lines.append(
            f"{name:<{name_w}}  {acc:>8.2f}  {n_shift:>7}  {n_hold:>7}"
            f"  {res.n_dropped:>7}"
        )
    return "\n".join(lines)


def format_lid_table(result: LidResult) -> str:
    name_w = max([len("Language")] + [len(k) for k in result.class_names])
    lines = [
        f"{'Language':<{name_w}}  {'Precision':>9}  {'Recall':>9}  {'F1':>9}"
        f"  {'Support':>9}"
    ]
    p, r, f1, sup = result.precision, result.recall, result.f1, result.support
    for i, name in enumerate(result.class_names):
        lines.append(
            f"{name:<{name_w}}  {p[i]:>9.4f}  {r[i]:>9.4f}  {f1[i]:>9.4f}"
            f"  {int(sup[i]):>9}"
        )
    lines.append(
        f"{'weighted':<{name_w}}  {'':>9}  {'':>9}  {result.weighted_f1:>9.4f}"
        f"  {int(sup.sum()):>9}"
    )
    return "\n".join(lines)


def format_perturbation_table(result: PerturbationResult) -> str:
    """Original vs perturbed balanced accuracy with signed point deltas."""
    names = list(result.original.keys())
    name_w = max([len("Language")] + [len(k) for k in names])
    lines = [
        f"{'Language':<{name_w}}  {'Original%':>9}  {'Perturbed%':>10}  {'Delta':>7}"
    ]
    deltas = result.delta_points
    for name in names:
        orig = 100.0 * result.original[name].balanced_accuracy
        pert = 100.0 * result.perturbed[name].balanced_accuracy
        lines.append(
            f"{name:<{name_w}}  {orig:>9.2f}  {pert:>10.2f}  {deltas[name]:>+7.2f}"
        )
    return "\n".join(lines)
