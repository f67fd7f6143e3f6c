import numpy as np
import pytest

from vapturn.audio import save_stereo_audio
from vapturn.corpus import (
    DialogueManifest,
    corpus_languages,
    load_dialogue,
    read_manifest,
    read_vad_file,
    write_manifest,
    write_vad_file,
)
from vapturn.errors import ValidationError
from vapturn.frames import VadSegments


def write_corpus_pair(tmp_path, name="d0", langs=("alpha",), seconds=2.0, segs=None):
    rng = np.random.default_rng(0)
    n = int(seconds * 16000)
    audio = (rng.random((2, n)).astype(np.float32) - 0.5) * 0.1
    audio_path = tmp_path / f"{name}.wav"
    save_stereo_audio(audio_path, audio)
    if segs is None:
        segs = VadSegments.from_lists([(0.0, 1.0)], [(1.2, 1.8)])
    vad_path = tmp_path / f"{name}.vad"
    write_vad_file(vad_path, segs, list(langs))
    return audio_path, vad_path


def single_manifest(tmp_path, audio, vad, tag=0):
    path = tmp_path / "single.tsv"
    path.write_text(f"d0\t{audio.name}\t{vad.name}\t{tag}\n")
    return read_manifest(path)[0]


class TestVadFiles:
    def test_roundtrip(self, tmp_path):
        segs = VadSegments.from_lists([(0.0, 1.234), (2.0, 2.5)], [(1.4, 1.9)])
        path = tmp_path / "x.vad"
        write_vad_file(path, segs, ["eng", "man"])
        back = read_vad_file(path)
        assert back.languages == ("eng", "man")
        assert back.segments == segs

    def test_grammar(self, tmp_path):
        path = tmp_path / "g.vad"
        path.write_text("#languages: eng\n0\t0.000\t1.000\n1\t1.200\t2.000\n")
        vf = read_vad_file(path)
        assert vf.languages == ("eng",)
        assert vf.segments.speakers[0] == ((0.0, 1.0),)
        assert vf.segments.speakers[1] == ((1.2, 2.0),)

    def test_header_declares_multiple_languages(self, tmp_path):
        path = tmp_path / "m.vad"
        path.write_text("#languages: eng,man,jpn\n0\t0.000\t1.000\n")
        assert read_vad_file(path).languages == ("eng", "man", "jpn")

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "h.vad"
        path.write_text("0\t0.000\t1.000\n")
        with pytest.raises(ValidationError):
            read_vad_file(path)

    def test_conflicting_headers_rejected(self, tmp_path):
        path = tmp_path / "c.vad"
        path.write_text("#languages: eng\n#languages: man\n0\t0.0\t1.0\n")
        with pytest.raises(ValidationError):
            read_vad_file(path)

    def test_bad_speaker_rejected(self, tmp_path):
        path = tmp_path / "s.vad"
        path.write_text("#languages: eng\n2\t0.000\t1.000\n")
        with pytest.raises(ValidationError) as err:
            read_vad_file(path)
        assert "s.vad:2" in str(err.value)

    def test_too_many_fraction_digits_rejected(self, tmp_path):
        path = tmp_path / "f.vad"
        path.write_text("#languages: eng\n0\t0.0001\t1.000\n")
        with pytest.raises(ValidationError):
            read_vad_file(path)

    def test_reversed_interval_rejected(self, tmp_path):
        path = tmp_path / "r.vad"
        path.write_text("#languages: eng\n0\t1.000\t0.500\n")
        with pytest.raises(ValidationError):
            read_vad_file(path)

    def test_overlap_rejected(self, tmp_path):
        path = tmp_path / "o.vad"
        path.write_text("#languages: eng\n0\t0.0\t1.0\n0\t0.5\t2.0\n")
        with pytest.raises(ValidationError):
            read_vad_file(path)

    def test_comment_lines_ignored(self, tmp_path):
        path = tmp_path / "k.vad"
        path.write_text("#languages: eng\n# a remark\n0\t0.0\t1.0\n")
        vf = read_vad_file(path)
        assert vf.segments.speakers[0] == ((0.0, 1.0),)

    def test_written_offsets_have_three_decimals(self, tmp_path):
        segs = VadSegments.from_lists([(0.125, 1.5)], [])
        path = tmp_path / "w.vad"
        write_vad_file(path, segs, ["x"])
        body = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        _, onset, offset = body[0].split("\t")
        assert onset == "0.125"
        assert offset == "1.500"


class TestManifests:
    def test_roundtrip(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path)
        m = DialogueManifest(
            dialogue_id="d0",
            audio_path=audio,
            vad_path=vad,
            language_tag=0,
            duration_sec=2.0,
        )
        path = tmp_path / "manifest.tsv"
        write_manifest(path, [m])
        back = read_manifest(path)
        assert len(back) == 1
        assert back[0].dialogue_id == "d0"
        assert back[0].language_tag == 0
        assert back[0].audio_path == audio
        assert back[0].duration_sec == pytest.approx(2.0)

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path)
        m = single_manifest(tmp_path, audio, vad)
        assert m.audio_path.is_absolute()
        assert m.audio_path == audio

    def test_duplicate_id_rejected(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path)
        path = tmp_path / "manifest.tsv"
        path.write_text(
            f"d0\t{audio.name}\t{vad.name}\t0\n"
            f"d0\t{audio.name}\t{vad.name}\t0\n"
        )
        with pytest.raises(ValidationError):
            read_manifest(path)

    def test_wrong_field_count_rejected(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("d0\tonly_two_fields\n")
        with pytest.raises(ValidationError):
            read_manifest(path)

    def test_non_integer_tag_rejected(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path)
        path = tmp_path / "manifest.tsv"
        path.write_text(f"d0\t{audio.name}\t{vad.name}\talpha\n")
        with pytest.raises(ValidationError):
            read_manifest(path)

    def test_missing_audio_rejected(self, tmp_path):
        _, vad = write_corpus_pair(tmp_path)
        path = tmp_path / "manifest.tsv"
        path.write_text(f"d0\tnope.wav\t{vad.name}\t0\n")
        with pytest.raises(ValidationError):
            read_manifest(path)

    def test_corpus_languages_consistent_headers(self, tmp_path):
        a_audio, a_vad = write_corpus_pair(tmp_path, "a", langs=("alpha", "beta"))
        b_audio, b_vad = write_corpus_pair(tmp_path, "b", langs=("alpha", "beta"))
        path = tmp_path / "m.tsv"
        path.write_text(
            f"a\t{a_audio.name}\t{a_vad.name}\t0\n"
            f"b\t{b_audio.name}\t{b_vad.name}\t1\n"
        )
        manifests = read_manifest(path)
        assert corpus_languages(manifests) == ("alpha", "beta")

    def test_corpus_languages_rejects_conflicts(self, tmp_path):
        a_audio, a_vad = write_corpus_pair(tmp_path, "a", langs=("alpha",))
        b_audio, b_vad = write_corpus_pair(tmp_path, "b", langs=("beta",))
        path = tmp_path / "m.tsv"
        path.write_text(
            f"a\t{a_audio.name}\t{a_vad.name}\t0\n"
            f"b\t{b_audio.name}\t{b_vad.name}\t0\n"
        )
        manifests = read_manifest(path)
        with pytest.raises(ValidationError):
            corpus_languages(manifests)

    def test_tag_outside_header_range_rejected_on_load(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path, langs=("alpha",))
        m = single_manifest(tmp_path, audio, vad, tag=2)
        with pytest.raises(ValidationError):
            load_dialogue(m)


class TestLoadDialogue:
    def test_loads_stream_at_audio_length(self, tmp_path):
        audio, vad = write_corpus_pair(tmp_path, seconds=2.0)
        d = load_dialogue(single_manifest(tmp_path, audio, vad))
        assert d.audio.shape == (2, 32000)
        assert d.stream.n_frames == 100
        assert d.stream.activity[0, :50].all()
        assert d.languages == ("alpha",)

    def test_annotation_slightly_past_audio_is_clipped(self, tmp_path, caplog):
        segs = VadSegments.from_lists([(0.0, 1.0)], [(1.5, 2.3)])  # audio is 2.0 s
        audio, vad = write_corpus_pair(tmp_path, seconds=2.0, segs=segs)
        m = single_manifest(tmp_path, audio, vad)
        with caplog.at_level("WARNING", logger="vapturn.corpus"):
            d = load_dialogue(m)
        assert any("truncating" in r.message for r in caplog.records)
        assert d.stream.n_frames == 100

    def test_annotation_far_past_audio_rejected(self, tmp_path):
        segs = VadSegments.from_lists([(0.0, 1.0)], [(1.5, 3.5)])  # 1.5 s past
        audio, vad = write_corpus_pair(tmp_path, seconds=2.0, segs=segs)
        m = single_manifest(tmp_path, audio, vad)
        with pytest.raises(ValidationError):
            load_dialogue(m)
