"""Command-line entry point: ``caan {synth,train,summarize,eval,verify}``.

Exit codes: 0 success, 1 verification failure, 2 invalid input or
configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data_io import (
    FormatError,
    SyntheticSpec,
    assemble_split,
    load_annotations,
    load_dataset,
    load_features,
    save_dataset,
    synthetic_dataset,
)
from .errors import CaanError, ConfigurationError, DegenerateInputError, DimensionError, LeakError
from .evaluation import run_splits
from .postprocess import SUMMARY_RATIO, budget_for, scores_to_summary
from .training import TrainingConfig, build_models, predict_scores, train

logger = logging.getLogger("caan")

EXIT_OK, EXIT_VERIFY, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (ConfigurationError, FormatError, CheckpointError, DimensionError, DegenerateInputError,
                     LeakError, FileNotFoundError, json.JSONDecodeError)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for p in files:
        h.update(str(p.relative_to(path) if path.is_dir() else p.name).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv, config: dict, seed, inputs, started: float) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": [{"path": str(p), "sha256": _hash_path(Path(p))} for p in inputs],
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config file must hold a JSON object")
    return data


def _add_training_flags(p: argparse.ArgumentParser):
    # one flag per TrainingConfig field; unset flags fall back to --config, then defaults
    g = p.add_argument_group("training configuration")
    s = argparse.SUPPRESS
    g.add_argument("--alpha", type=float, default=s, help="target mean frame score (default 0.3)")
    g.add_argument("--lr-generator", type=float, default=s, help="generator learning rate (default 3e-5)")
    g.add_argument("--lr-discriminator", type=float, default=s, help="discriminator learning rate (default 1e-5)")
    g.add_argument("--epochs", type=int, default=s)
    g.add_argument("--steps-per-video", type=int, default=s)
    g.add_argument("--d", type=int, default=s, help="feature dimension (default: read from the data)")
    g.add_argument("--hidden", type=int, default=s, help="discriminator LSTM width")
    g.add_argument("--channels", type=int, nargs=5, default=s, metavar="C", help="five generator channel widths")
    g.add_argument("--score-hidden", type=int, default=s)
    g.add_argument("--supervised", action="store_true", default=s)
    g.add_argument("--non-saturating-g-loss", action="store_true", default=s)
    g.add_argument("--clip-norm", type=float, default=s)
    g.add_argument("--patience", type=int, default=s, help="early-stop patience in epochs, 0 disables")
    g.add_argument("--checkpoint-every", type=int, default=s)


def resolve_config(args, data_dim: int | None = None) -> TrainingConfig:
    """Defaults, then the --config file, then explicit flags."""
    merged = _read_config_file(args.config)
    names = {f.name for f in fields(TrainingConfig)}
    for name in names:
        if name in vars(args) and name != "seed":
            merged[name] = getattr(args, name)
    if args.seed is not None:
        merged["seed"] = args.seed
    if "d" not in merged and data_dim is not None:
        merged["d"] = data_dim
    return TrainingConfig.from_dict(merged)


def _format_scores(scores) -> str:
    return "frame\tscore\n" + "".join(f"{i}\t{float(s):.9g}\n" for i, s in enumerate(scores))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_synth(args, argv) -> int:
    started = time.time()
    base = _read_config_file(args.config)
    for key in ("n_videos", "d", "important_fraction", "noise", "background_scale", "n_users", "user_jitter",
                "name", "eval_mode", "min_segment"):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    if args.frames:
        base["frames"] = args.frames
    if args.segments:
        base["segments"] = args.segments
    if args.seed is not None:
        base["seed"] = args.seed
    spec = SyntheticSpec(**base)
    out = Path(args.out)
    save_dataset(out, synthetic_dataset(spec))
    write_manifest(out, "synth", argv, asdict(spec), spec.seed, [], started)
    print(f"wrote {spec.n_videos} videos to {out}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    started = time.time()
    data = load_dataset(args.data)
    config = resolve_config(args, data.videos[0].features.shape[1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = build_models(config)
    result = train(data.videos, config, checkpoint_dir=out / "checkpoints", models=models)
    save_checkpoint(out / "model.ckpt", result.generator, config, result.discriminator)
    with open(out / "losses.jsonl", "w") as fh:
        for epoch, rep in enumerate(result.history, 1):
            fh.write(json.dumps({"epoch": epoch, **rep.as_dict()}, sort_keys=True) + "\n")
    write_manifest(out, "train", argv, config.to_dict(), config.seed, [args.data], started)
    print(f"trained {result.epochs_run} epochs on {len(data)} videos -> {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_summarize(args, argv) -> int:
    started = time.time()
    gen, config, _ = load_checkpoint(args.checkpoint)
    feats = load_features(args.features)
    if feats.shape[1] != gen.d:
        raise DimensionError(f"checkpoint expects d={gen.d} but {args.features} has d={feats.shape[1]}")
    seg = None
    if args.annotations:
        seg = load_annotations(args.annotations, feats.shape[0])["change_points"]
    scores = predict_scores(feats, gen)
    summary = scores_to_summary(feats, scores, seg, ratio=args.ratio, length_weighted=args.length_weighted,
                                max_segments=args.max_segments)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scores.tsv").write_text(_format_scores(scores))
    doc = {
        "n_frames": int(feats.shape[0]),
        "ratio": args.ratio,
        "budget_frames": budget_for(feats.shape[0], args.ratio),
        "n_selected": summary.n_selected,
        "intervals": [list(iv) for iv in summary.intervals()],
        "selected_shots": list(summary.selected_shots),
        "shots": [list(s) for s in summary.segmentation.shots],
    }
    (out / "summary.json").write_text(json.dumps(doc, indent=1) + "\n")
    inputs = [args.checkpoint, args.features] + ([args.annotations] if args.annotations else [])
    write_manifest(out, "summarize", argv, config.to_dict(), config.seed, inputs, started)
    print(f"{summary.n_selected}/{feats.shape[0]} frames in {len(doc['intervals'])} intervals -> {out}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    started = time.time()
    target = load_dataset(args.target)
    aux = [load_dataset(p) for p in args.aux]
    config = resolve_config(args, target.videos[0].features.shape[1])
    mode = args.eval_mode or target.eval_mode
    fold_seed = args.fold_seed if args.fold_seed is not None else config.seed
    splits = assemble_split(args.mode, target.videos, [a.videos for a in aux], seed=fold_seed, k=args.folds)
    report = run_splits(splits, config, mode=mode, ratio=args.ratio)
    report.meta = {"setting": args.mode, "target": target.name, "auxiliary": [a.name for a in aux],
                   "fold_seed": fold_seed, "k": len(splits), "mode": mode, "ratio": args.ratio}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "videos.jsonl").write_text(report.to_jsonl())
    (out / "report.txt").write_text(report.table())
    write_manifest(out, "eval", argv, config.to_dict(), config.seed, [args.target, *args.aux], started)
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    from .verify import SUITES, run_suite

    if args.list:
        for name in SUITES:
            print(name)
        return EXIT_OK
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        print(f"error: unknown suite(s) {', '.join(unknown)}; available: {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_INVALID
    failed = []
    for name in names:
        for case in run_suite(name):
            status = "PASS" if case.ok else "FAIL"
            print(f"{status} {name}/{case.name}" + (f"  ({case.detail})" if case.detail else ""))
            if not case.ok:
                failed.append(f"{name}/{case.name}")
    if failed:
        print(f"{len(failed)} failing case(s): {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    print("all suites passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON file of defaults; explicit flags win")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted structure")
    shared(p)
    p.add_argument("--n-videos", type=int)
    p.add_argument("--frames", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--d", type=int)
    p.add_argument("--segments", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--min-segment", type=int)
    p.add_argument("--important-fraction", type=float)
    p.add_argument("--noise", type=float, help="feature noise sigma")
    p.add_argument("--background-scale", type=float)
    p.add_argument("--n-users", type=int)
    p.add_argument("--user-jitter", type=float)
    p.add_argument("--name")
    p.add_argument("--eval-mode", choices=("max", "mean"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train generator and discriminator on a dataset directory")
    p.add_argument("data", help="dataset directory")
    shared(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="score a feature file and select key shots")
    p.add_argument("checkpoint")
    p.add_argument("features")
    shared(p)
    p.add_argument("--annotations", help="sidecar whose change_points replace segmentation")
    p.add_argument("--ratio", type=float, default=SUMMARY_RATIO)
    p.add_argument("--max-segments", type=int, default=None)
    p.add_argument("--length-weighted", action="store_true", help="shot value = mean score x length")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("eval", help="cross-validate or transfer-evaluate on dataset directories")
    p.add_argument("target", help="target dataset directory")
    shared(p)
    p.add_argument("--mode", choices=("canonical", "augmented", "transfer"), default="canonical")
    p.add_argument("--aux", nargs="*", default=[], help="auxiliary dataset directories")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold-seed", type=int, default=None, help="fold assignment seed (default: --seed)")
    p.add_argument("--ratio", type=float, default=SUMMARY_RATIO)
    p.add_argument("--eval-mode", choices=("max", "mean"), default=None,
                   help="multi-user aggregation (default: from dataset.json)")
    _add_training_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run built-in correctness suites")
    p.add_argument("--suite", action="append", help="suite to run (repeatable; default all)")
    p.add_argument("--list", action="store_true", help="list available suites")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CaanError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
