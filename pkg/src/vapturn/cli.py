"""Command-line front end.

One binary, subcommand style.  Exit codes: 0 success, 1 input/validation
error, 2 runtime failure.  Every subcommand that produces artifacts takes
--out, creates the directory first, and echoes its resolved configuration
to run_config_echo.txt there so a run can be reproduced from its output
directory alone.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ValidationError, VapError
from .frames import DEFAULT_GRID

_FORMAT_VERSIONS = {"checkpoint": 1, "features": 1, "labels": 1}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through exit code 1, not 2."""

    def error(self, message: str):  # noqa: D102 - argparse contract
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _version_string() -> str:
    formats = ", ".join(f"{k}:v{n}" for k, n in sorted(_FORMAT_VERSIONS.items()))
    return f"vapturn {__version__} (formats {formats})"


# --------------------------------------------------------------------------
# config file + echo helpers


def _read_config_file(path: str) -> dict[str, str]:
    """key=value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, target_type: type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"expected a boolean, got {value!r}")
    return target_type(value)


def _build_config(cls, file_values: dict[str, str], flag_values: dict):
    """Layer precedence: flags > config file > dataclass defaults."""
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, raw in file_values.items():
        if key not in known:
            continue
        base = type(getattr(cls(), key))
        kwargs[key] = _coerce(raw, base)
    for key, value in flag_values.items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs), kwargs


def _echo_config(out_dir: Path, args: argparse.Namespace) -> None:
    lines = [f"command={args.command}"]
    for key in sorted(vars(args)):
        if key in ("command", "func"):
            continue
        lines.append(f"{key}={getattr(args, key)}")
    (out_dir / "run_config_echo.txt").write_text("\n".join(lines) + "\n")


def _prepare_out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, args)
    return out


def _apply_jobs(args: argparse.Namespace) -> None:
    jobs = getattr(args, "jobs", 1)
    if jobs < 1:
        raise ValidationError(f"--jobs must be >= 1, got {jobs}")
    import torch

    torch.set_num_threads(jobs)


def _provider_from_spec(spec: str, cache_dir: str | None):
    from .encoder import BaselineFeatureProvider, FileFeatureProvider

    if spec.startswith("baseline"):
        seed = 0
        if ":" in spec:
            _, _, tail = spec.partition(":")
            try:
                seed = int(tail)
            except ValueError:
                raise ValidationError(f"bad encoder seed in {spec!r}") from None
        return BaselineFeatureProvider(seed=seed, cache_dir=cache_dir)
    if spec.startswith("file:"):
        return FileFeatureProvider(spec[5:])
    raise ValidationError(
        f"unknown encoder {spec!r}: expected 'baseline[:seed]' or 'file:<template>'"
    )


def _eval_provider(args: argparse.Namespace, ckpt) -> object:
    spec = args.encoder
    if spec is None:
        spec = ckpt.feature_source or "baseline:0"
    return _provider_from_spec(spec, getattr(args, "feature_cache", None))


# --------------------------------------------------------------------------
# subcommands


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synth import default_specs, generate_corpus

    specs = default_specs()
    if args.languages < 1 or args.languages > len(specs):
        raise ValidationError(
            f"--languages must be in 1..{len(specs)}, got {args.languages}"
        )
    out = _prepare_out(args)
    layout = generate_corpus(
        specs[: args.languages],
        dialogues_per_lang=args.dialogues_per_language,
        duration_sec=args.duration,
        seed=args.seed,
        out_dir=out,
        flatten_test=not args.no_flatten,
    )
    print(f"wrote corpus under {layout.root}")
    for name in ("train_manifest", "val_manifest", "test_manifest"):
        print(f"  {name.replace('_', ' ')}: {getattr(layout, name)}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    from .corpus import corpus_languages, load_dialogue, read_manifest
    from .events import (
        count_shift_hold,
        duration_histogram,
        extract_shift_hold,
        extract_silences,
        format_stats_table,
        write_events_tsv,
        write_histogram_tsv,
    )

    manifests = read_manifest(args.manifest)
    names = corpus_languages(manifests)
    out = _prepare_out(args) if args.out else None
    by_lang: dict[str, list] = {}
    all_events: list[tuple[str, object]] = []
    samples_by_lang: dict[str, list] = {}
    for m in manifests:
        dialogue = load_dialogue(m)
        lang = names[m.language_tag]
        silences = extract_silences(dialogue.stream)
        all_events.extend((m.dialogue_id, s) for s in silences)
        by_lang.setdefault(lang, []).extend(silences)
        samples_by_lang.setdefault(lang, []).extend(
            extract_shift_hold(dialogue.stream)
        )
    rows = [
        (lang, count_shift_hold(s)) for lang, s in sorted(samples_by_lang.items())
    ]
    table = format_stats_table(rows)
    print(table)
    if out is not None:
        (out / "shift_hold_stats.txt").write_text(table + "\n")
        write_events_tsv(out / "events.tsv", all_events)
        for lang, silences in sorted(by_lang.items()):
            for kind in ("gap", "pause"):
                hist = duration_histogram(silences, kind, bin_width_sec=args.bin_width)
                write_histogram_tsv(
                    out / f"hist_{kind}_{lang}.tsv", hist, bin_width_sec=args.bin_width
                )
        print(f"wrote event tables under {out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .net import ModelConfig
    from .training import TrainConfig, cap_manifests_by_duration, run_training

    _apply_jobs(args)
    file_cfg = _read_config_file(args.config) if args.config else {}
    model_cfg, _ = _build_config(
        ModelConfig,
        file_cfg,
        {
            "d_model": args.d_model,
            "self_layers": args.self_layers,
            "cross_layers": args.cross_layers,
            "heads": args.heads,
            "dropout": args.dropout,
            "lid_classes": args.lid_classes,
            "tied_channels": True if args.tied else None,
        },
    )
    train_cfg, _ = _build_config(
        TrainConfig,
        file_cfg,
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "weight_decay": args.weight_decay,
            "seed": args.seed,
        },
    )
    out = _prepare_out(args)
    train = read_manifest(args.train_manifest)
    val = read_manifest(args.val_manifest)
    if args.max_train_hours is not None:
        train = cap_manifests_by_duration(train, args.max_train_hours)
        print(f"capped training set to {len(train)} dialogues")
    provider = _provider_from_spec(args.encoder or "baseline:0", args.feature_cache)
    result = run_training(
        train, val, model_cfg, train_cfg, provider,
        out_dir=out, feature_source=args.encoder or "baseline:0",
    )
    last = result.curves[-1]
    print(
        f"done: best epoch {result.best_epoch} "
        f"(val l_vap {result.best_val_lvap:.4f}), "
        f"final val l_vap {last.l_vap:.4f}"
    )
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return 0


def _cmd_eval_loss(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .evaluation import eval_test_loss, format_loss_table
    from .training import load_checkpoint

    _apply_jobs(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifests = read_manifest(args.manifest)
    provider = _eval_provider(args, ckpt)
    losses = eval_test_loss(ckpt, manifests, provider)
    table = format_loss_table(losses)
    print(table)
    if args.out:
        out = _prepare_out(args)
        (out / "test_loss.txt").write_text(table + "\n")
    return 0


def _cmd_eval_shift_hold(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .evaluation import eval_shift_hold_by_language, format_shift_hold_table
    from .training import load_checkpoint

    _apply_jobs(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifests = read_manifest(args.manifest)
    provider = _eval_provider(args, ckpt)
    results = eval_shift_hold_by_language(
        ckpt, manifests, provider, audit_samples=args.audit_samples
    )
    table = format_shift_hold_table(results)
    print(table)
    audit_failed = False
    for lang, res in sorted(results.items()):
        if res.audit is not None:
            status = "passed" if res.audit.passed else "FAILED"
            audit_failed |= not res.audit.passed
            print(
                f"truncation audit [{lang}]: {status} on {res.audit.n_checked} samples "
                f"(max p_now deviation {res.audit.max_p_now_deviation:.2e})"
            )
    if args.out:
        out = _prepare_out(args)
        (out / "shift_hold.txt").write_text(table + "\n")
    if audit_failed:
        raise VapError("truncation audit failed: outputs depend on future context")
    return 0


def _cmd_eval_lid(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .evaluation import eval_lid, format_lid_table
    from .training import load_checkpoint

    _apply_jobs(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifests = read_manifest(args.manifest)
    provider = _eval_provider(args, ckpt)
    result = eval_lid(ckpt, manifests, provider)
    table = format_lid_table(result)
    print(table)
    if args.out:
        out = _prepare_out(args)
        (out / "lid.txt").write_text(table + "\n")
    return 0


def _cmd_eval_perturbed(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .evaluation import eval_with_perturbation, format_perturbation_table
    from .training import load_checkpoint

    _apply_jobs(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifests = read_manifest(args.manifest)
    provider = _eval_provider(args, ckpt)
    result = eval_with_perturbation(ckpt, manifests, args.perturbed_audio, provider)
    table = format_perturbation_table(result)
    print(table)
    if result.n_excluded:
        print(f"excluded {result.n_excluded} dialogues with mismatched timing")
    if args.out:
        out = _prepare_out(args)
        (out / "perturbation.txt").write_text(table + "\n")
    return 0


def _cmd_infer_trace(args: argparse.Namespace) -> int:
    from .corpus import read_manifest
    from .evaluation import infer_trace
    from .training import load_checkpoint

    _apply_jobs(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifests = read_manifest(args.manifest)
    wanted = args.dialogue_id
    if wanted is None:
        chosen = manifests[0]
    else:
        match = [m for m in manifests if m.dialogue_id == wanted]
        if not match:
            raise ValidationError(f"dialogue id {wanted!r} not in manifest")
        chosen = match[0]
    out = _prepare_out(args)
    provider = _eval_provider(args, ckpt)
    trace_path = out / f"{chosen.dialogue_id}.trace.tsv"
    n = infer_trace(ckpt, chosen, provider, trace_path)
    print(f"wrote {n} frames to {trace_path}")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    from .selfcheck import run_selftest

    _apply_jobs(args)
    return 0 if run_selftest() else 2


# --------------------------------------------------------------------------
# parser assembly


def _add_common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--out", required=out_required, default=None,
                   help="output directory (created if missing)")
    p.add_argument("--jobs", type=int, default=1,
                   help="compute threads; keep 1 for bit-reproducible runs")


def _add_eval_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="trained checkpoint file")
    p.add_argument("--manifest", required=True, help="dialogue manifest TSV")
    p.add_argument("--encoder", default=None,
                   help="'baseline[:seed]' or 'file:<template>'; defaults to "
                        "the encoder recorded in the checkpoint")
    p.add_argument("--feature-cache", default=None,
                   help="directory for cached encoder features")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="vapturn", description=__doc__)
    root.add_argument("--version", action="version", version=_version_string())
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dialogue corpus")
    _add_common(p, out_required=True)
    p.add_argument("--languages", type=int, default=3)
    p.add_argument("--dialogues-per-language", type=int, default=30)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per dialogue")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-flatten", action="store_true",
                   help="skip pitch-flattened twins of the test split")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("analyze", help="turn-taking statistics from VAD annotations")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bin-width", type=float, default=0.05,
                   help="histogram bin width in seconds")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_common(p, out_required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--encoder", default=None)
    p.add_argument("--feature-cache", default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--self-layers", type=int, default=None)
    p.add_argument("--cross-layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--lid-classes", type=int, default=None)
    p.add_argument("--tied", action="store_true",
                   help="share channel weights (symmetric model)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-train-hours", type=float, default=None,
                   help="cap total training audio, longest-first per language")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-loss", help="per-language test loss")
    _add_common(p)
    _add_eval_common(p)
    p.set_defaults(func=_cmd_eval_loss)

    p = sub.add_parser("eval-shift-hold", help="turn shift/hold prediction accuracy")
    _add_common(p)
    _add_eval_common(p)
    p.add_argument("--audit-samples", type=int, default=0,
                   help="re-run N samples with extended context to audit causality")
    p.set_defaults(func=_cmd_eval_shift_hold)

    p = sub.add_parser("eval-lid", help="language identification accuracy")
    _add_common(p)
    _add_eval_common(p)
    p.set_defaults(func=_cmd_eval_lid)

    p = sub.add_parser("eval-perturbed", help="compare against perturbed audio")
    _add_common(p)
    _add_eval_common(p)
    p.add_argument("--perturbed-audio", required=True,
                   help="directory of perturbed twins with matching filenames")
    p.set_defaults(func=_cmd_eval_perturbed)

    p = sub.add_parser("infer-trace", help="write per-frame probabilities for one dialogue")
    _add_common(p, out_required=True)
    _add_eval_common(p)
    p.add_argument("--dialogue-id", default=None,
                   help="dialogue to trace; defaults to the manifest's first")
    p.set_defaults(func=_cmd_infer_trace)

    p = sub.add_parser("selftest", help="fast invariant checks, PASS/FAIL per line")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_selftest)

    return root


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VapError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2
    except Exception:  # noqa: BLE001 - last-resort runtime failure
        import traceback

        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
