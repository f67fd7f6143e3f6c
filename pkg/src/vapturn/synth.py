"""Synthetic dyadic-dialogue generator.

Realism is deliberately sacrificed for control: each pseudo-language is a
parametric recipe whose turn-taking statistics and prosody-like cues are
known exactly, which makes the whole pipeline falsifiable at desk scale.

A dialogue is a timeline of alternating turns.  After each utterance the
speaker either holds the turn (probability hold_prob, silence drawn from
the pause distribution) or yields it (gap distribution).  Because the
continuation decision is memoryless, nothing before a silence predicts
shift vs hold *except* an optional turn-final cue: the last 300 ms of a
turn-final utterance carry either a linear F0 fall or an amplitude ramp,
while utterances followed by a pause end plain.  A spec with
final_cue='none' therefore serves as the unpredictable control.

Rendering: voiced stretches are harmonic tones (per-utterance F0 drawn
from the spec's range, slight vibrato) over a quiet noise floor.  The
flatten_pitch switch re-renders the identical timeline with every F0
trajectory held constant, removing pitch cues and vibrato but leaving
amplitude cues: the synthetic analog of pitch-flattening perturbation.
Random draws are consumed in the same order with and without flattening,
so a dialogue and its flattened twin differ only in F0 trajectories.

Timestamps are quantized to milliseconds so annotation files round-trip
exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import save_stereo_audio
from .corpus import DialogueManifest, write_manifest, write_vad_file
from .errors import ConfigError, ValidationError
from .frames import DEFAULT_GRID, FrameGrid, VadSegments

log = logging.getLogger(__name__)

PITCH_FALL = "pitch-fall"
AMPLITUDE_RAMP = "amplitude-ramp"
NO_CUE = "none"

_MIN_SILENCE_SEC = 0.05
_CUE_WINDOW_SEC = 0.3
_NOISE_FLOOR = 3e-4
_BAND_NOISE = 0.02
_EDGE_RAMP_SEC = 0.01
_VIBRATO_HZ = 5.0


@dataclass(frozen=True)
class PseudoLanguageSpec:
    """Recipe for one pseudo-language.

    cue_strength is the fractional drop over the cue window: a pitch fall
    ends at (1 - cue_strength) * F0, an amplitude ramp at
    (1 - cue_strength) * nominal envelope.
    """

    name: str
    f0_range_hz: tuple[float, float]
    gap_mean_sec: float
    gap_sd_sec: float
    pause_mean_sec: float
    pause_sd_sec: float
    utterance_len_range_sec: tuple[float, float]
    final_cue: str
    backchannel_rate: float = 0.0
    hold_prob: float = 0.5
    cue_strength: float = 0.35
    vibrato_depth: float = 0.01
    n_harmonics: int = 6
    amplitude: float = 0.3

    def __post_init__(self) -> None:
        if not self.name or "," in self.name or "\t" in self.name:
            raise ConfigError("spec name must be non-empty without ',' or tabs")
        lo, hi = self.f0_range_hz
        if not 0 < lo < hi:
            raise ConfigError(f"{self.name}: need 0 < f0 low < high, got {lo}, {hi}")
        if min(self.gap_mean_sec, self.pause_mean_sec) <= 0:
            raise ConfigError(f"{self.name}: silence means must be positive")
        if min(self.gap_sd_sec, self.pause_sd_sec) <= 0:
            raise ConfigError(f"{self.name}: silence sd must be positive")
        ulo, uhi = self.utterance_len_range_sec
        if not 0 < ulo < uhi:
            raise ConfigError(f"{self.name}: bad utterance length range")
        if self.final_cue not in (PITCH_FALL, AMPLITUDE_RAMP, NO_CUE):
            raise ConfigError(f"{self.name}: unknown final_cue {self.final_cue!r}")
        if not 0.0 < self.hold_prob < 1.0:
            raise ConfigError(f"{self.name}: hold_prob must be in (0, 1)")
        if not 0.0 < self.cue_strength < 1.0:
            raise ConfigError(f"{self.name}: cue_strength must be in (0, 1)")
        if self.backchannel_rate < 0:
            raise ConfigError(f"{self.name}: backchannel_rate must be >= 0")
        if self.n_harmonics < 1 or not 0 < self.amplitude <= 0.8:
            raise ConfigError(f"{self.name}: bad harmonics or amplitude")
        if not 0.0 <= self.vibrato_depth < 0.2:
            raise ConfigError(f"{self.name}: vibrato_depth must be in [0, 0.2)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "f0_low_hz": self.f0_range_hz[0],
            "f0_high_hz": self.f0_range_hz[1],
            "gap_mean_sec": self.gap_mean_sec,
            "gap_sd_sec": self.gap_sd_sec,
            "pause_mean_sec": self.pause_mean_sec,
            "pause_sd_sec": self.pause_sd_sec,
            "utt_len_low_sec": self.utterance_len_range_sec[0],
            "utt_len_high_sec": self.utterance_len_range_sec[1],
            "final_cue": self.final_cue,
            "backchannel_rate": self.backchannel_rate,
            "hold_prob": self.hold_prob,
            "cue_strength": self.cue_strength,
            "vibrato_depth": self.vibrato_depth,
            "n_harmonics": self.n_harmonics,
            "amplitude": self.amplitude,
        }


def default_specs() -> tuple[PseudoLanguageSpec, PseudoLanguageSpec, PseudoLanguageSpec]:
    """Three contrasting pseudo-languages.

    alpha signals turn finality with a pitch fall, beta with an amplitude
    ramp, gamma not at all (the control).  F0 ranges are disjoint so the
    languages stay separable in long-term spectra.
    """
    # Cue-bearing specs keep silences inside the projection's 600 ms "now"
    # span: a resumption past ~0.44 s leaves every now bin dark at the
    # decision point and the label carries nothing for the cue to predict.
    alpha = PseudoLanguageSpec(
        name="alpha",
        f0_range_hz=(240.0, 320.0),
        gap_mean_sec=0.32,
        gap_sd_sec=0.04,
        pause_mean_sec=0.36,
        pause_sd_sec=0.04,
        utterance_len_range_sec=(1.2, 3.0),
        final_cue=PITCH_FALL,
        hold_prob=0.5,
        cue_strength=0.55,
        n_harmonics=6,
    )
    beta = PseudoLanguageSpec(
        name="beta",
        f0_range_hz=(150.0, 200.0),
        gap_mean_sec=0.32,
        gap_sd_sec=0.04,
        pause_mean_sec=0.36,
        pause_sd_sec=0.04,
        utterance_len_range_sec=(1.2, 2.6),
        final_cue=AMPLITUDE_RAMP,
        hold_prob=0.5,
        cue_strength=0.85,
        # zero vibrato: per-utterance F0 is already constant, so the
        # pitch-flattened twin is the identical waveform by construction
        vibrato_depth=0.0,
        n_harmonics=3,
    )
    gamma = PseudoLanguageSpec(
        name="gamma",
        f0_range_hz=(90.0, 130.0),
        gap_mean_sec=0.4,
        gap_sd_sec=0.12,
        pause_mean_sec=0.55,
        pause_sd_sec=0.15,
        utterance_len_range_sec=(1.5, 4.0),
        final_cue=NO_CUE,
        hold_prob=0.6,
        n_harmonics=1,
    )
    return (alpha, beta, gamma)


@dataclass
class _Utt:
    speaker: int
    start: float
    end: float
    turn_final: bool = False
    is_backchannel: bool = False


@dataclass
class SyntheticDialogue:
    """Rendered dialogue plus its exact ground truth."""

    waveform: np.ndarray  # (2, n_samples) float32
    segments: VadSegments
    language_tag: int
    seed: int
    spec_name: str


def _quantize_ms(t: float) -> float:
    return round(t * 1000.0) / 1000.0


def _truncated_normal(rng: np.random.Generator, mean: float, sd: float) -> float:
    for _ in range(1000):
        x = rng.normal(mean, sd)
        if x >= _MIN_SILENCE_SEC:
            return x
    return _MIN_SILENCE_SEC


def _build_timeline(
    spec: PseudoLanguageSpec, duration_sec: float, rng: np.random.Generator
) -> list[_Utt]:
    utts: list[_Utt] = []
    t = _quantize_ms(rng.uniform(0.2, 0.6))
    speaker = int(rng.integers(0, 2))
    margin = 0.2
    while True:
        length = _quantize_ms(rng.uniform(*spec.utterance_len_range_sec))
        if t + length > duration_sec - margin:
            break
        utt = _Utt(speaker=speaker, start=t, end=_quantize_ms(t + length))
        utts.append(utt)
        shift = rng.random() >= spec.hold_prob
        utt.turn_final = shift
        if shift:
            silence = _truncated_normal(rng, spec.gap_mean_sec, spec.gap_sd_sec)
            speaker = 1 - speaker
        else:
            silence = _truncated_normal(rng, spec.pause_mean_sec, spec.pause_sd_sec)
        t = _quantize_ms(utt.end + _quantize_ms(silence))
    # The last utterance has no successor; whatever the loop decided for
    # it, the trailing silence is excluded from event extraction anyway.
    _add_backchannels(spec, duration_sec, utts, rng)
    return utts


def _add_backchannels(
    spec: PseudoLanguageSpec,
    duration_sec: float,
    utts: list[_Utt],
    rng: np.random.Generator,
) -> None:
    if spec.backchannel_rate <= 0:
        return
    n = int(rng.poisson(spec.backchannel_rate * duration_sec / 60.0))
    hosts = [u for u in utts if not u.is_backchannel and u.end - u.start >= 2.0]
    added: list[_Utt] = []
    for _ in range(n):
        if not hosts:
            break
        host = hosts[int(rng.integers(0, len(hosts)))]
        length = _quantize_ms(rng.uniform(0.2, 0.4))
        lo = host.start + 0.3
        hi = host.end - 0.3 - length
        if hi <= lo:
            continue
        start = _quantize_ms(rng.uniform(lo, hi))
        end = _quantize_ms(start + length)
        # two backchannels in one host share a channel; drop collisions
        if any(
            b.speaker == 1 - host.speaker and start < b.end and b.start < end
            for b in added
        ):
            continue
        added.append(
            _Utt(
                speaker=1 - host.speaker,
                start=start,
                end=end,
                is_backchannel=True,
            )
        )
    utts.extend(added)


def _render(
    timeline: list[_Utt],
    spec: PseudoLanguageSpec,
    n_samples: int,
    rng: np.random.Generator,
    flatten_pitch: bool,
    sample_rate: int,
) -> np.ndarray:
    wave = rng.normal(0.0, _NOISE_FLOOR, (2, n_samples)).astype(np.float32)
    cue_n = round(_CUE_WINDOW_SEC * sample_rate)
    edge_n = round(_EDGE_RAMP_SEC * sample_rate)
    harm_norm = sum(1.0 / h for h in range(1, spec.n_harmonics + 1))
    for utt in timeline:
        i0 = round(utt.start * sample_rate)
        n = round((utt.end - utt.start) * sample_rate)
        if n <= 0 or i0 + n > n_samples:
            continue
        # Draw order is fixed so a flattened twin consumes the same stream.
        f0 = rng.uniform(*spec.f0_range_hz)
        vib_phase = rng.uniform(0.0, 2.0 * np.pi)
        band = rng.normal(0.0, 1.0, n)
        tt = np.arange(n) / sample_rate
        if flatten_pitch:
            freq = np.full(n, f0)
        else:
            freq = f0 * (
                1.0
                + spec.vibrato_depth * np.sin(2.0 * np.pi * _VIBRATO_HZ * tt + vib_phase)
            )
            if utt.turn_final and spec.final_cue == PITCH_FALL:
                k = min(cue_n, n)
                freq[n - k :] *= np.linspace(1.0, 1.0 - spec.cue_strength, k)
        env = np.ones(n)
        if utt.turn_final and spec.final_cue == AMPLITUDE_RAMP:
            k = min(cue_n, n)
            env[n - k :] *= np.linspace(1.0, 1.0 - spec.cue_strength, k)
        k = min(edge_n, n // 4)
        if k > 0:
            env[:k] *= np.linspace(0.0, 1.0, k)
            env[n - k :] *= np.linspace(1.0, 0.0, k)
        phase = 2.0 * np.pi * np.cumsum(freq) / sample_rate
        sig = np.zeros(n)
        for h in range(1, spec.n_harmonics + 1):
            sig += np.sin(h * phase) / h
        sig = spec.amplitude * (sig / harm_norm + _BAND_NOISE * band) * env
        wave[utt.speaker, i0 : i0 + n] += sig.astype(np.float32)
    return np.clip(wave, -1.0, 1.0)


def _timeline_segments(timeline: list[_Utt]) -> VadSegments:
    per_speaker: tuple[list[tuple[float, float]], list[tuple[float, float]]] = ([], [])
    for utt in timeline:
        per_speaker[utt.speaker].append((utt.start, utt.end))
    return VadSegments.from_lists(
        sorted(per_speaker[0]), sorted(per_speaker[1])
    )


def generate_dialogue(
    spec: PseudoLanguageSpec,
    duration_sec: float,
    seed: int,
    language_tag: int = 0,
    flatten_pitch: bool = False,
    grid: FrameGrid = DEFAULT_GRID,
) -> SyntheticDialogue:
    """Generate one dialogue; identical seeds give bit-identical output.

    The timeline and the rendering use separate seeded streams, so the
    flatten_pitch variant of a seed shares its timeline and per-utterance
    draws exactly.
    """
    if duration_sec < 30.0:
        raise ValidationError("dialogues must be at least 30 s long")
    n_frames = round(duration_sec * grid.frame_hz)
    n_samples = n_frames * grid.samples_per_frame
    timeline_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    render_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    timeline = _build_timeline(spec, duration_sec, timeline_rng)
    wave = _render(
        timeline, spec, n_samples, render_rng, flatten_pitch, grid.sample_rate
    )
    return SyntheticDialogue(
        waveform=wave,
        segments=_timeline_segments(timeline),
        language_tag=language_tag,
        seed=seed,
        spec_name=spec.name,
    )


def write_spec_file(path: str | Path, spec: PseudoLanguageSpec) -> None:
    lines = [f"{k}={v}" for k, v in spec.to_dict().items()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class CorpusLayout:
    """Where generate_corpus put everything."""

    root: Path
    train_manifest: Path
    val_manifest: Path
    test_manifest: Path
    flattened_dir: Path | None
    languages: tuple[str, ...]


def generate_corpus(
    specs: list[PseudoLanguageSpec] | tuple[PseudoLanguageSpec, ...],
    dialogues_per_lang: int,
    duration_sec: float,
    seed: int,
    out_dir: str | Path,
    flatten_test: bool = True,
    grid: FrameGrid = DEFAULT_GRID,
) -> CorpusLayout:
    """Write a complete corpus: audio, annotations, manifests, spec echoes.

    Dialogues split 8:1:1 (train/val/test) per language by a seeded
    shuffle; counts below ten per language degenerate with a warning.
    Test dialogues additionally get a pitch-flattened twin under
    flattened/ with the same file name, ready for paired perturbation
    evaluation.
    """
    specs = list(specs)
    if not specs:
        raise ConfigError("need at least one pseudo-language spec")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"spec names must be distinct, got {names}")
    for a_i, a in enumerate(specs):
        for b in specs[a_i + 1 :]:
            da, db = a.to_dict(), b.to_dict()
            if all(da[k] == db[k] for k in da if k != "name"):
                raise ConfigError(f"specs {a.name} and {b.name} are identical")
    if dialogues_per_lang < 1:
        raise ConfigError("dialogues_per_lang must be positive")
    out_dir = Path(out_dir)
    languages = tuple(names)
    train: list[DialogueManifest] = []
    val: list[DialogueManifest] = []
    test: list[DialogueManifest] = []
    n_side = dialogues_per_lang // 10
    if n_side == 0 and dialogues_per_lang > 1:
        log.warning(
            "%d dialogues per language leaves empty val/test splits",
            dialogues_per_lang,
        )
    elif dialogues_per_lang == 1:
        log.warning("1 dialogue per language: split degenerates to 1/0/0")
    for i, spec in enumerate(specs):
        split_rng = np.random.default_rng(np.random.SeedSequence([seed, 999, i]))
        order = split_rng.permutation(dialogues_per_lang)
        test_ids = set(order[:n_side].tolist())
        val_ids = set(order[n_side : 2 * n_side].tolist())
        for j in range(dialogues_per_lang):
            child_seed = int(
                np.random.SeedSequence([seed, i, j]).generate_state(1, dtype=np.uint64)[0]
            )
            dlg = generate_dialogue(spec, duration_sec, child_seed, language_tag=i, grid=grid)
            dialogue_id = f"{spec.name}_{j:03d}"
            audio_path = out_dir / "audio" / f"{dialogue_id}.wav"
            vad_path = out_dir / "vad" / f"{dialogue_id}.vad"
            save_stereo_audio(audio_path, dlg.waveform, grid)
            write_vad_file(vad_path, dlg.segments, languages)
            manifest = DialogueManifest(
                dialogue_id=dialogue_id,
                audio_path=str(audio_path.resolve()),
                vad_path=str(vad_path.resolve()),
                language_tag=i,
                duration_sec=dlg.waveform.shape[1] / grid.sample_rate,
            )
            if j in test_ids:
                test.append(manifest)
                if flatten_test:
                    twin = generate_dialogue(
                        spec, duration_sec, child_seed, language_tag=i,
                        flatten_pitch=True, grid=grid,
                    )
                    save_stereo_audio(
                        out_dir / "flattened" / f"{dialogue_id}.wav", twin.waveform, grid
                    )
            elif j in val_ids:
                val.append(manifest)
            else:
                train.append(manifest)
        write_spec_file(out_dir / "specs" / f"{spec.name}.txt", spec)
    train_path = out_dir / "train.tsv"
    val_path = out_dir / "val.tsv"
    test_path = out_dir / "test.tsv"
    write_manifest(train_path, train)
    write_manifest(val_path, val)
    write_manifest(test_path, test)
    return CorpusLayout(
        root=out_dir,
        train_manifest=train_path,
        val_manifest=val_path,
        test_manifest=test_path,
        flattened_dir=(out_dir / "flattened") if flatten_test else None,
        languages=languages,
    )
