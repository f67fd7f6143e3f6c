"""Windowing, the optimization loop, and checkpoint persistence.

Dialogues are cut into overlapping windows of at most 20 s (1000 frames,
hop 500); a final shorter window is kept when it still carries at least
one label (101 frames).  Batches pad windows to a common length and mask
the padding out of every loss term, so a partial window contributes
exactly its own frames.

Optimization follows a fixed recipe: decoupled-weight-decay Adam
(lr 3.63e-4, weight decay 1e-3), batch size 8, 20 epochs, plus gradient
clipping at global norm 1.0 for small-batch stability.  Validation vap
loss is computed before training (epoch 0) and after every epoch; the
checkpoint with the smallest validation vap loss is returned.  Everything
is deterministic given the seed: model init, shuffle order, and batching
derive from it, and data loading is single-worker.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import probe_audio
from .codec import DEFAULT_BINS, label_stream
from .corpus import DialogueManifest, corpus_languages, read_vad_file
from .encoder import FeatureProvider
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .frames import DEFAULT_GRID, FrameGrid, segments_to_stream
from .net import LossBreakdown, ModelConfig, VapNet, masked_losses

log = logging.getLogger(__name__)

_CKPT_MAGIC = b"VAPC"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters."""

    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 3.63e-4
    weight_decay: float = 0.001
    seed: int = 0
    window_sec: float = 20.0
    window_hop_sec: float = 10.0
    grad_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive, weight_decay >= 0")
        if self.window_sec <= 0 or self.window_hop_sec <= 0:
            raise ConfigError("window and hop must be positive")
        if self.window_hop_sec > self.window_sec:
            raise ConfigError("window_hop_sec must not exceed window_sec")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")

    def window_frames(self, grid: FrameGrid = DEFAULT_GRID) -> int:
        return round(self.window_sec * grid.frame_hz)

    def hop_frames(self, grid: FrameGrid = DEFAULT_GRID) -> int:
        return round(self.window_hop_sec * grid.frame_hz)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "window_sec": self.window_sec,
            "window_hop_sec": self.window_hop_sec,
            "grad_clip": self.grad_clip,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass(frozen=True)
class Window:
    """One training sample: a frame span of one dialogue."""

    dialogue_index: int
    start: int
    length: int


def make_windows(
    manifests: list[DialogueManifest],
    cfg: TrainConfig,
    grid: FrameGrid = DEFAULT_GRID,
) -> list[Window]:
    """Deterministic window index over a manifest list.

    Window starts advance by the hop; each keeps min(window, remaining)
    frames, so the tail of a dialogue can yield a shorter final window.
    Spans shorter than label window + 1 frames carry no label and are
    never emitted; dialogues below that minimum are skipped with a
    warning.
    """
    window = cfg.window_frames(grid)
    hop = cfg.hop_frames(grid)
    min_frames = DEFAULT_BINS.window_frames + 1
    out: list[Window] = []
    for idx, man in enumerate(manifests):
        n = grid.n_frames_for_samples(probe_audio(man.audio_path).n_samples)
        if n < min_frames:
            log.warning(
                "%s: %d frames is below the %d-frame label minimum; skipped",
                man.dialogue_id, n, min_frames,
            )
            continue
        s = 0
        while n - s >= min_frames:
            out.append(Window(idx, s, min(window, n - s)))
            s += hop
    return out


@dataclass(frozen=True)
class Checkpoint:
    """A trained model snapshot plus everything needed to rebuild it."""

    model_cfg: ModelConfig
    train_cfg: TrainConfig
    epoch: int
    val_loss: float
    state: dict[str, np.ndarray]
    languages: tuple[str, ...] | None = None
    feature_source: str | None = None

    def build_model(self) -> VapNet:
        model = VapNet(self.model_cfg, seed=self.train_cfg.seed)
        tensors = {k: torch.from_numpy(v.copy()) for k, v in self.state.items()}
        model.load_state_dict(tensors)
        model.eval()
        return model


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Single binary file: versioned header, canonical JSON metadata, then
    float32 little-endian tensors in state-dict declaration order.

    The encoding is canonical, so save -> load -> save is byte-identical.
    """
    names = list(ckpt.state.keys())
    meta = {
        "model_cfg": ckpt.model_cfg.to_dict(),
        "train_cfg": ckpt.train_cfg.to_dict(),
        "epoch": ckpt.epoch,
        "val_loss": ckpt.val_loss,
        "languages": list(ckpt.languages) if ckpt.languages is not None else None,
        "feature_source": ckpt.feature_source,
        "tensors": [
            {"name": n, "shape": list(ckpt.state[n].shape)} for n in names
        ],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", _CKPT_MAGIC, _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.state[n], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, meta_len = struct.unpack("<4sIQ", raw[:16])
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(raw[16 : 16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from exc
    offset = 16 + meta_len
    state: dict[str, np.ndarray] = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: tensor payload truncated at {entry['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        state[entry["name"]] = arr
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    languages = meta.get("languages")
    return Checkpoint(
        model_cfg=ModelConfig.from_dict(meta["model_cfg"]),
        train_cfg=TrainConfig.from_dict(meta["train_cfg"]),
        epoch=int(meta["epoch"]),
        val_loss=float(meta["val_loss"]),
        state=state,
        languages=tuple(languages) if languages is not None else None,
        feature_source=meta.get("feature_source"),
    )


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    split: str
    l_vap: float
    l_vad: float
    l_lid: float | None = None


def write_curves(path: str | Path, curves: list[CurvePoint]) -> None:
    """Loss curves as `epoch TAB split TAB l_vap TAB l_vad [TAB l_lid]`."""
    lines = []
    for c in curves:
        row = f"{c.epoch}\t{c.split}\t{c.l_vap:.6f}\t{c.l_vad:.6f}"
        if c.l_lid is not None:
            row += f"\t{c.l_lid:.6f}"
        lines.append(row)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curves: list[CurvePoint]
    best_epoch: int
    best_val_lvap: float
    checkpoint_path: Path | None = None


class _DialogueCache:
    """Features, labels, activity, and tag per dialogue, loaded lazily.

    Feature arrays stay memory-mapped when the provider caches on disk;
    labels and activity are computed once per dialogue.
    """

    def __init__(
        self,
        manifests: list[DialogueManifest],
        provider: FeatureProvider,
        grid: FrameGrid,
    ):
        self.manifests = manifests
        self.provider = provider
        self.grid = grid
        self._entries: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def entry(self, idx: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if idx not in self._entries:
            man = self.manifests[idx]
            feats = self.provider.features(man)
            vad = read_vad_file(man.vad_path)
            stream = segments_to_stream(vad.segments, feats.shape[1], self.grid)
            labels = label_stream(stream)
            self._entries[idx] = (feats, labels, stream.activity)
        return self._entries[idx]


def _collate(
    cache: _DialogueCache, windows: list[Window], label_window: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a list of windows into batch tensors.

    Returns (features, labels, vad_truth, frame_mask, lang_tags); label
    slots beyond a window's labeled prefix hold -1, padded frames are
    masked out.
    """
    b = len(windows)
    t_max = max(w.length for w in windows)
    dim = cache.provider.contract.output_dim
    feats = np.zeros((b, 2, t_max, dim), dtype=np.float32)
    labels = np.full((b, t_max - label_window), -1, dtype=np.int64)
    truth = np.zeros((b, t_max, 2), dtype=np.float32)
    mask = np.zeros((b, t_max), dtype=bool)
    tags = np.zeros(b, dtype=np.int64)
    for i, w in enumerate(windows):
        f, lab, act = cache.entry(w.dialogue_index)
        feats[i, :, : w.length] = f[:, w.start : w.start + w.length]
        n_lab = w.length - label_window
        labels[i, :n_lab] = lab[w.start : w.start + n_lab]
        truth[i, : w.length] = act[:, w.start : w.start + w.length].T
        mask[i, : w.length] = True
        tags[i] = cache.manifests[w.dialogue_index].language_tag
    return (
        torch.from_numpy(feats),
        torch.from_numpy(labels),
        torch.from_numpy(truth),
        torch.from_numpy(mask),
        torch.from_numpy(tags),
    )


def _loss_sums(
    losses: LossBreakdown, labels: torch.Tensor, mask: torch.Tensor
) -> tuple[float, float, float | None, int, int]:
    n_labels = int((labels >= 0).sum())
    n_frames = int(mask.sum())
    d = losses.detached()
    l_lid = d["l_lid"] * n_frames if "l_lid" in d else None
    return (d["l_vap"] * n_labels, d["l_vad"] * n_frames, l_lid, n_labels, n_frames)


def _evaluate_split(
    model: VapNet,
    cache: _DialogueCache,
    windows: list[Window],
    batch_size: int,
    label_window: int,
    use_lid: bool,
) -> tuple[float, float, float | None]:
    model.eval()
    vap_sum = vad_sum = 0.0
    lid_sum: float | None = 0.0 if use_lid else None
    n_labels = n_frames = 0
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            chunk = windows[i : i + batch_size]
            feats, labels, truth, mask, tags = _collate(cache, chunk, label_window)
            out = model(feats)
            losses = masked_losses(out, labels, truth, mask, tags if use_lid else None)
            v, d, l, nl, nf = _loss_sums(losses, labels, mask)
            vap_sum += v
            vad_sum += d
            if l is not None and lid_sum is not None:
                lid_sum += l
            n_labels += nl
            n_frames += nf
    return (
        vap_sum / n_labels,
        vad_sum / n_frames,
        lid_sum / n_frames if lid_sum is not None else None,
    )


def run_training(
    train_manifests: list[DialogueManifest],
    val_manifests: list[DialogueManifest],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    provider: FeatureProvider,
    out_dir: str | Path | None = None,
    grid: FrameGrid = DEFAULT_GRID,
    feature_source: str | None = None,
) -> TrainResult:
    """Train a model and return the best-validation checkpoint with curves.

    The encoder never trains: features are inputs.  Aborts with a
    diagnostic if any loss turns non-finite.  If out_dir is given, writes
    checkpoint.bin, curves.tsv, and a train_config.txt echo there.
    """
    if not train_manifests:
        raise ConfigError("training requires a non-empty train set")
    if not val_manifests:
        raise ConfigError("training requires a non-empty validation set")
    languages = corpus_languages(train_manifests + val_manifests)
    use_lid = model_cfg.lid_classes > 0
    if use_lid and model_cfg.lid_classes != len(languages):
        raise ConfigError(
            f"lid_classes {model_cfg.lid_classes} != corpus language count "
            f"{len(languages)}"
        )
    label_window = DEFAULT_BINS.window_frames
    train_windows = make_windows(train_manifests, train_cfg, grid)
    val_windows = make_windows(val_manifests, train_cfg, grid)
    if not train_windows or not val_windows:
        raise ConfigError("no usable windows in train or validation set")

    train_cache = _DialogueCache(train_manifests, provider, grid)
    val_cache = _DialogueCache(val_manifests, provider, grid)

    # dropout masks come from the global RNG; pin it for reproducible runs
    torch.manual_seed(train_cfg.seed)
    model = VapNet(model_cfg, seed=train_cfg.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
    )
    shuffle_g = torch.Generator().manual_seed(train_cfg.seed)

    curves: list[CurvePoint] = []

    def run_validation(epoch: int) -> float:
        l_vap, l_vad, l_lid = _evaluate_split(
            model, val_cache, val_windows, train_cfg.batch_size, label_window, use_lid
        )
        curves.append(CurvePoint(epoch, "val", l_vap, l_vad, l_lid))
        log.info("epoch %d val: l_vap %.4f l_vad %.4f", epoch, l_vap, l_vad)
        return l_vap

    run_validation(0)
    best_state: dict[str, np.ndarray] | None = None
    best_val = math.inf
    best_epoch = -1

    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        order = torch.randperm(len(train_windows), generator=shuffle_g).tolist()
        vap_sum = vad_sum = lid_total = 0.0
        n_labels = n_frames = 0
        for i in range(0, len(order), train_cfg.batch_size):
            chunk = [train_windows[j] for j in order[i : i + train_cfg.batch_size]]
            feats, labels, truth, mask, tags = _collate(train_cache, chunk, label_window)
            out = model(feats)
            losses = masked_losses(out, labels, truth, mask, tags if use_lid else None)
            total = losses.total
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {i // train_cfg.batch_size}: "
                    f"{losses.detached()}"
                )
            optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()
            v, d, l, nl, nf = _loss_sums(losses, labels, mask)
            vap_sum += v
            vad_sum += d
            lid_total += l if l is not None else 0.0
            n_labels += nl
            n_frames += nf
        curves.append(
            CurvePoint(
                epoch,
                "train",
                vap_sum / n_labels,
                vad_sum / n_frames,
                (lid_total / n_frames) if use_lid else None,
            )
        )
        val_lvap = run_validation(epoch)
        if val_lvap < best_val:
            best_val = val_lvap
            best_epoch = epoch
            best_state = {
                k: v.detach().cpu().numpy().astype(np.float32, copy=True)
                for k, v in model.state_dict().items()
            }

    assert best_state is not None
    ckpt = Checkpoint(
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        epoch=best_epoch,
        val_loss=best_val,
        state=best_state,
        languages=languages,
        feature_source=feature_source,
    )
    result = TrainResult(
        checkpoint=ckpt, curves=curves, best_epoch=best_epoch, best_val_lvap=best_val
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "checkpoint.bin"
        save_checkpoint(ckpt_path, ckpt)
        write_curves(out_dir / "curves.tsv", curves)
        echo = "\n".join(
            f"{k}={v}"
            for k, v in sorted(
                {**train_cfg.to_dict(), **model_cfg.to_dict()}.items()
            )
        )
        (out_dir / "train_config.txt").write_text(echo + "\n", encoding="utf-8")
        result.checkpoint_path = ckpt_path
    return result


def cap_manifests_by_duration(
    manifests: list[DialogueManifest], max_hours: float
) -> list[DialogueManifest]:
    """Per-language duration capping for dataset balancing.

    Walks each language's dialogues in manifest order and keeps them while
    the language's running total stays at or under the cap.
    """
    if max_hours <= 0:
        raise ConfigError("max_hours must be positive")
    budget_sec = max_hours * 3600.0
    used: dict[int, float] = {}
    kept = []
    for m in manifests:
        total = used.get(m.language_tag, 0.0)
        if total + m.duration_sec <= budget_sec + 1e-9:
            kept.append(m)
            used[m.language_tag] = total + m.duration_sec
    return kept
