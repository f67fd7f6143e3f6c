import pytest

from vapturn.cli import (
    _build_config,
    _coerce,
    _read_config_file,
    _version_string,
    main,
)
from vapturn.errors import ValidationError
from vapturn.net import ModelConfig
from vapturn.training import TrainConfig


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    """A one-language corpus synthesized through the CLI itself."""
    root = tmp_path_factory.mktemp("clicorpus")
    rc = main(
        [
            "synth",
            "--out", str(root),
            "--languages", "1",
            "--dialogues-per-language", "10",
            "--duration", "30",
            "--seed", "3",
        ]
    )
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def cli_run(cli_corpus, tmp_path_factory):
    """A one-epoch toy training run through the CLI."""
    out = tmp_path_factory.mktemp("clirun")
    cache = tmp_path_factory.mktemp("clicache")
    rc = main(
        [
            "train",
            "--train-manifest", str(cli_corpus / "train.tsv"),
            "--val-manifest", str(cli_corpus / "val.tsv"),
            "--out", str(out),
            "--epochs", "1",
            "--d-model", "16",
            "--heads", "2",
            "--feature-cache", str(cache),
        ]
    )
    assert rc == 0
    return out, cache


class TestBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert out.strip() == _version_string()
        assert "checkpoint:v1" in out

    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["synth", "--bogus"]) == 1

    def test_bad_language_count(self, tmp_path, capsys):
        rc = main(["synth", "--out", str(tmp_path / "x"), "--languages", "9"])
        assert rc == 1
        assert "--languages" in capsys.readouterr().err

    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestConfigPlumbing:
    def test_coerce(self):
        assert _coerce("7", int) == 7
        assert _coerce("0.5", float) == 0.5
        assert _coerce("true", bool) is True
        assert _coerce("False", bool) is False
        with pytest.raises(ValidationError):
            _coerce("maybe", bool)

    def test_read_config_file(self, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("# comment\nepochs=7\n\nlearning_rate = 0.001\n")
        values = _read_config_file(str(cfg))
        assert values == {"epochs": "7", "learning_rate": "0.001"}

    def test_read_config_rejects_junk(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs\n")
        with pytest.raises(ValidationError):
            _read_config_file(str(cfg))

    def test_flag_beats_file_beats_default(self):
        file_values = {"epochs": "7", "learning_rate": "0.001"}
        flags = {"epochs": 9, "learning_rate": None, "seed": None}
        cfg, _ = _build_config(TrainConfig, file_values, flags)
        assert cfg.epochs == 9  # flag wins
        assert cfg.learning_rate == 0.001  # file beats default
        assert cfg.seed == TrainConfig().seed  # default survives

    def test_unknown_file_key_ignored_for_other_config(self):
        # a shared file may hold both train and model keys
        file_values = {"epochs": "7", "d_model": "32"}
        model, used = _build_config(ModelConfig, file_values, {"d_model": None})
        assert model.d_model == 32
        assert "epochs" not in used


class TestSynthAnalyze:
    def test_synth_layout(self, cli_corpus):
        assert (cli_corpus / "run_config_echo.txt").is_file()
        assert (cli_corpus / "train.tsv").is_file()
        assert (cli_corpus / "flattened").is_dir()
        echo = (cli_corpus / "run_config_echo.txt").read_text()
        assert "dialogues_per_language=10" in echo
        assert "seed=3" in echo

    def test_analyze_prints_and_writes(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "analysis"
        rc = main(
            [
                "analyze",
                "--manifest", str(cli_corpus / "train.tsv"),
                "--out", str(out),
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "alpha" in stdout
        assert (out / "shift_hold_stats.txt").is_file()
        assert (out / "events.tsv").is_file()
        assert (out / "hist_gap_alpha.tsv").is_file()
        assert (out / "hist_pause_alpha.tsv").is_file()

    def test_analyze_without_out_prints_only(self, cli_corpus, capsys):
        rc = main(["analyze", "--manifest", str(cli_corpus / "val.tsv")])
        assert rc == 0
        assert "Shift" in capsys.readouterr().out


class TestTrainEvalFlow:
    def test_train_artifacts(self, cli_run, capsys):
        out, _ = cli_run
        assert (out / "checkpoint.bin").is_file()
        assert (out / "curves.tsv").is_file()
        assert (out / "train_config.txt").is_file()
        assert (out / "run_config_echo.txt").is_file()

    def test_eval_loss(self, cli_corpus, cli_run, capsys):
        out, cache = cli_run
        rc = main(
            [
                "eval-loss",
                "--checkpoint", str(out / "checkpoint.bin"),
                "--manifest", str(cli_corpus / "test.tsv"),
                "--feature-cache", str(cache),
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "TestLoss" in stdout and "alpha" in stdout

    def test_eval_shift_hold_with_audit(self, cli_corpus, cli_run, capsys):
        out, cache = cli_run
        rc = main(
            [
                "eval-shift-hold",
                "--checkpoint", str(out / "checkpoint.bin"),
                "--manifest", str(cli_corpus / "test.tsv"),
                "--feature-cache", str(cache),
                "--audit-samples", "4",
            ]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "BalAcc%" in stdout
        assert "truncation audit [alpha]: passed" in stdout

    def test_eval_perturbed(self, cli_corpus, cli_run, capsys):
        out, cache = cli_run
        rc = main(
            [
                "eval-perturbed",
                "--checkpoint", str(out / "checkpoint.bin"),
                "--manifest", str(cli_corpus / "test.tsv"),
                "--perturbed-audio", str(cli_corpus / "flattened"),
                "--feature-cache", str(cache),
            ]
        )
        assert rc == 0
        assert "Original%" in capsys.readouterr().out

    def test_infer_trace(self, cli_corpus, cli_run, tmp_path, capsys):
        out, cache = cli_run
        trace_out = tmp_path / "trace"
        rc = main(
            [
                "infer-trace",
                "--checkpoint", str(out / "checkpoint.bin"),
                "--manifest", str(cli_corpus / "test.tsv"),
                "--out", str(trace_out),
                "--feature-cache", str(cache),
            ]
        )
        assert rc == 0
        traces = list(trace_out.glob("*.trace.tsv"))
        assert len(traces) == 1
        assert len(traces[0].read_text().splitlines()) == 30 * 50

    def test_missing_checkpoint_is_runtime_failure(self, cli_corpus, capsys):
        rc = main(
            [
                "eval-loss",
                "--checkpoint", "/nonexistent/ckpt.bin",
                "--manifest", str(cli_corpus / "test.tsv"),
            ]
        )
        assert rc == 2
        assert "failure" in capsys.readouterr().err

    def test_missing_manifest_is_validation_error(self, cli_run, capsys):
        out, _ = cli_run
        rc = main(
            [
                "eval-loss",
                "--checkpoint", str(out / "checkpoint.bin"),
                "--manifest", "/nonexistent/test.tsv",
            ]
        )
        assert rc == 1

    def test_train_config_file_applies(self, cli_corpus, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs=1\nd_model=16\nheads=2\nwindow_sec=10\n")
        out = tmp_path / "run"
        rc = main(
            [
                "train",
                "--train-manifest", str(cli_corpus / "train.tsv"),
                "--val-manifest", str(cli_corpus / "val.tsv"),
                "--out", str(out),
                "--config", str(cfg),
                "--feature-cache", str(tmp_path / "cache"),
            ]
        )
        assert rc == 0
        echo = (out / "train_config.txt").read_text()
        assert "epochs=1" in echo
        assert "d_model=16" in echo
        assert "window_sec=10.0" in echo
