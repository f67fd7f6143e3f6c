"""Corpus plumbing: annotation files, manifests, dialogue loading.

A corpus on disk is a set of stereo WAV files plus one annotation file per
dialogue and a few manifest files indexing them.

Annotation file grammar (UTF-8 text)::

    #languages: alpha,beta,gamma
    0<TAB>0.400<TAB>2.150
    1<TAB>2.600<TAB>4.000

The ``#languages:`` header declares the corpus language enumeration; every
annotation file in one corpus must declare the same list.  Segment lines
give speaker index (0 or 1) and [onset, offset) in seconds with at most
three fraction digits.  Other ``#`` lines are comments.

Manifest grammar: one dialogue per line,
``dialogue_id<TAB>audio_path<TAB>vad_path<TAB>language_tag`` with the
language tag as an index into the declared enumeration.  Paths are
resolved relative to the manifest file.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import load_stereo_audio, probe_audio
from .errors import ValidationError
from .frames import DEFAULT_GRID, FrameGrid, VadSegments, VadStream, segments_to_stream

log = logging.getLogger(__name__)

_LANG_HEADER = "#languages:"
_SECONDS_RE = re.compile(r"\d+(\.\d{1,3})?")

# Annotations may spill past the audio by up to this much before loading
# refuses outright instead of truncating with a warning.
_MAX_SPILL_SEC = 1.0


@dataclass(frozen=True)
class DialogueManifest:
    """One corpus entry: audio, annotation, and language for a dialogue."""

    dialogue_id: str
    audio_path: Path
    vad_path: Path
    language_tag: int
    duration_sec: float

    def __post_init__(self) -> None:
        if not self.dialogue_id:
            raise ValidationError("dialogue_id must be non-empty")
        object.__setattr__(self, "audio_path", Path(self.audio_path))
        object.__setattr__(self, "vad_path", Path(self.vad_path))
        if self.language_tag < 0:
            raise ValidationError("language_tag must be >= 0")
        if self.duration_sec <= 0:
            raise ValidationError("duration_sec must be positive")


@dataclass(frozen=True)
class VadFile:
    """Parsed annotation file: language enumeration plus segments."""

    languages: tuple[str, ...]
    segments: VadSegments


@dataclass
class Dialogue:
    """A fully loaded dialogue ready for feature extraction and labeling."""

    manifest: DialogueManifest
    audio: np.ndarray  # (2, n_samples) float32
    stream: VadStream
    languages: tuple[str, ...]

    @property
    def n_frames(self) -> int:
        return self.stream.n_frames


def _format_seconds(t: float) -> str:
    """Seconds with exactly three fraction digits (within the <= 3 grammar)."""
    return f"{t:.3f}"


def read_vad_file(path: str | Path) -> VadFile:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"annotation file not found: {path}")
    languages: tuple[str, ...] | None = None
    per_speaker: tuple[list[tuple[float, float]], list[tuple[float, float]]] = ([], [])
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(_LANG_HEADER):
            names = tuple(tok.strip() for tok in line[len(_LANG_HEADER):].split(","))
            if not names or any(not n for n in names):
                raise ValidationError(f"{path}:{lineno}: empty language name in header")
            if languages is not None and names != languages:
                raise ValidationError(f"{path}:{lineno}: conflicting language headers")
            languages = names
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(
                f"{path}:{lineno}: expected speaker<TAB>onset<TAB>offset, got {raw!r}"
            )
        try:
            speaker = int(parts[0])
            onset = float(parts[1])
            offset = float(parts[2])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: unparseable segment line") from exc
        for tok in parts[1:]:
            if not _SECONDS_RE.fullmatch(tok):
                raise ValidationError(
                    f"{path}:{lineno}: offsets must be non-negative decimals "
                    f"with at most 3 fraction digits, got {tok!r}"
                )
        if speaker not in (0, 1):
            raise ValidationError(f"{path}:{lineno}: speaker index must be 0 or 1")
        per_speaker[speaker].append((onset, offset))
    if languages is None:
        raise ValidationError(f"{path}: missing '#languages:' header line")
    try:
        segments = VadSegments.from_lists(*per_speaker)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return VadFile(languages=languages, segments=segments)


def write_vad_file(
    path: str | Path, segments: VadSegments, languages: tuple[str, ...] | list[str]
) -> None:
    if not languages or any(("," in n or not n.strip()) for n in languages):
        raise ValidationError("language names must be non-empty and comma-free")
    lines = [f"{_LANG_HEADER} {','.join(languages)}"]
    for speaker, segs in enumerate(segments.speakers):
        for onset, offset in segs:
            lines.append(
                f"{speaker}\t{_format_seconds(onset)}\t{_format_seconds(offset)}"
            )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[DialogueManifest]:
    """Parse a manifest file, resolving paths and probing audio durations."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest file not found: {path}")
    base = path.parent
    out: list[DialogueManifest] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValidationError(
                f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
            )
        dialogue_id, audio_rel, vad_rel, tag_text = parts
        if dialogue_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate dialogue_id {dialogue_id!r}")
        seen.add(dialogue_id)
        try:
            tag = int(tag_text)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: language_tag must be an integer") from exc
        audio_path = (base / audio_rel).resolve()
        vad_path = (base / vad_rel).resolve()
        info = probe_audio(audio_path)
        out.append(
            DialogueManifest(
                dialogue_id=dialogue_id,
                audio_path=audio_path,
                vad_path=vad_path,
                language_tag=tag,
                duration_sec=info.duration,
            )
        )
    if not out:
        log.warning("manifest %s lists no dialogues", path)
    return out


def write_manifest(path: str | Path, manifests: list[DialogueManifest]) -> None:
    """Write a manifest; paths under the manifest directory become relative."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def _rel(p: str | Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(base))
        except ValueError:
            return p

    lines = [
        f"{m.dialogue_id}\t{_rel(m.audio_path)}\t{_rel(m.vad_path)}\t{m.language_tag}"
        for m in manifests
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def corpus_languages(manifests: list[DialogueManifest]) -> tuple[str, ...]:
    """The language enumeration shared by all annotation files in a corpus."""
    if not manifests:
        raise ValidationError("cannot derive languages from an empty manifest list")
    languages: tuple[str, ...] | None = None
    for m in manifests:
        declared = read_vad_file(m.vad_path).languages
        if languages is None:
            languages = declared
        elif declared != languages:
            raise ValidationError(
                f"{m.vad_path} declares languages {declared}, "
                f"but the corpus started with {languages}"
            )
    assert languages is not None
    return languages


def load_dialogue(
    manifest: DialogueManifest, grid: FrameGrid = DEFAULT_GRID
) -> Dialogue:
    """Load audio and annotation for one dialogue and align their lengths.

    The activity stream is built to the audio's frame count.  Annotations
    reaching slightly past the audio are truncated with a warning; a gross
    mismatch (more than a second) raises instead of silently eating data.
    """
    audio, n_frames = load_stereo_audio(manifest.audio_path, grid)
    vad = read_vad_file(manifest.vad_path)
    if manifest.language_tag >= len(vad.languages):
        raise ValidationError(
            f"{manifest.dialogue_id}: language_tag {manifest.language_tag} out of "
            f"range for declared languages {vad.languages}"
        )
    audio_end = n_frames * grid.frame_period
    spill = vad.segments.end_time - audio_end
    if spill > _MAX_SPILL_SEC:
        raise ValidationError(
            f"{manifest.dialogue_id}: annotation runs {spill:.3f}s past the audio; "
            "refusing to truncate that much"
        )
    if spill > 0.5 * grid.frame_period:
        log.warning(
            "%s: annotation exceeds audio by %.3fs; truncating to %d frames",
            manifest.dialogue_id,
            spill,
            n_frames,
        )
    stream = segments_to_stream(vad.segments, n_frames, grid)
    return Dialogue(manifest=manifest, audio=audio, stream=stream, languages=vad.languages)
