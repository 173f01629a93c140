#!/usr/bin/env python3
"""
Command-line entry point.

    python cli.py synth --out data/train --n-samples 8
    python cli.py train --manifest data/train/manifest.jsonl --out runs/a
    python cli.py eval --checkpoint runs/a/model.cgt --manifest data/train/manifest.jsonl --out runs/a/eval
    python cli.py split --train-manifest data/train/manifest.jsonl --manifest data/test/manifest.jsonl
    python cli.py hardsplit --metrics runs/a/eval/metrics.csv
    python cli.py gradcheck

Exit codes: 0 success, 1 verification failure, 2 usage/config/data error.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from tqdm import tqdm

from config import CONFIG
from app.core.dataset import hard_normal_split, load_manifest, split_seen_unseen
from app.core.evaluator import SYNTHETIC_CAVEAT, evaluate, resolve_run_config
from app.core.gradcheck import assert_all_passed, run_suite
from app.core.progress_tracker import ProgressTracker
from app.core.run_config import RunConfig
from app.core.synth import SynthConfig, synth_generate
from app.core.trainer import train
from app.exceptions.custom_exceptions import (
    CGNetError,
    CheckpointError,
    ManifestValidationError,
    VerificationError,
)
from app.utils.file_manager import get_outputs_directory, read_csv
from app.utils.formatters import format_loss
from app.utils.logger import setup_logger

logger = logging.getLogger(__name__)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=float))
    else:
        print(text)


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    config.validate()
    return config


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed if args.seed is not None else CONFIG["seed"],
        n_samples=args.n_samples,
        image_side=args.side,
        camouflage_strength=args.strength,
        multi_class_rate=args.multi_class_rate,
        split=args.split,
    )
    if args.classes:
        cfg.class_vocabulary = [c.strip() for c in args.classes.split(",") if c.strip()]
    manifest = synth_generate(cfg, args.out or get_outputs_directory())
    _emit(args, {"manifest": manifest, "n_samples": cfg.n_samples}, f"Wrote {cfg.n_samples} samples: {manifest}")
    return 0


def _progress_bar(run_id: str, desc: str, disable: bool):
    """tqdm bar fed through a ProgressTracker hook"""
    bar = tqdm(desc=desc, unit="step", disable=disable, file=sys.stderr)

    def on_progress(data):
        bar.total = data["total"]
        bar.n = data["step"]
        if data.get("loss") is not None:
            bar.set_postfix(loss=f"{data['loss']:.4f}")
        bar.refresh()
        if data["status"] == "finished":
            bar.close()

    return ProgressTracker().get_hook(run_id, on_progress)


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = args.out or get_outputs_directory()
    hook = _progress_bar("train", "train", disable=args.json)
    result = train(config, args.manifest, out_dir, progress_hook=hook)
    text = "\n".join(
        [f"Checkpoint: {result.checkpoint_path}", f"Loss trace: {result.loss_csv_path}"]
        + ([format_loss(result.rows[0]), format_loss(result.rows[-1])] if result.rows else [])
    )
    _emit(args, result.to_dict(), text)
    return 0


def cmd_eval(args) -> int:
    config = resolve_run_config(args.checkpoint, args.config)
    config.validate(check_paths=False)
    hook = _progress_bar("eval", "eval", disable=args.json)
    result = evaluate(
        config,
        args.checkpoint,
        args.manifest,
        args.out or get_outputs_directory(),
        train_manifest=args.train_manifest,
        features=args.dump_features,
        progress_hook=hook,
    )
    text = result.table() + f"\nPer-sample metrics: {result.csv_path}"
    if result.synthetic:
        text += f"\n{SYNTHETIC_CAVEAT}"
    _emit(args, result.to_dict(), text)
    return 0


def cmd_split(args) -> int:
    report = split_seen_unseen(load_manifest(args.train_manifest), load_manifest(args.manifest))
    text = (
        f"seen classes:   {', '.join(report.seen_classes) or '-'} ({len(report.seen_samples)} samples)\n"
        f"unseen classes: {', '.join(report.unseen_classes) or '-'} ({len(report.unseen_samples)} samples)"
    )
    _emit(args, report.to_dict(), text)
    return 0


def cmd_hardsplit(args) -> int:
    report = hard_normal_split(read_csv(args.metrics), threshold=args.threshold)
    text = f"normal (S_m >= {report.threshold}): {len(report.normal)}\nhard: {len(report.hard)}"
    _emit(args, report.to_dict(), text)
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else (RunConfig.from_file(args.config).seed if args.config else 0)
    reports = run_suite(seed=seed, corrupt=args.corrupt_gradients, end_to_end=not args.skip_end_to_end)
    failed = [r for r in reports if not r.passed]
    lines = [f"{r.name:<24} {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}" for r in reports]
    _emit(args, {"passed": not failed, "checks": [r.to_dict() for r in reports]}, "\n".join(lines))
    assert_all_passed(reports)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgnet", description="Class-guided camouflaged object detection (desk scale)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON to stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic camouflage dataset")
    p.add_argument("--n-samples", type=int, default=8)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--strength", type=float, default=0.5, help="camouflage strength in [0, 1]")
    p.add_argument("--multi-class-rate", type=float, default=0.0)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--classes", help="comma-separated shape classes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-manifest", help="report seen/unseen buckets against this training manifest")
    p.add_argument("--dump-features", action="store_true", help="write intermediate feature maps as PNGs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("split", parents=[common], help="seen/unseen split of a test manifest")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("hardsplit", parents=[common], help="hard/normal split of a per-sample metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--threshold", type=float, default=CONFIG["hard_normal_threshold"])
    p.set_defaults(func=cmd_hardsplit)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--corrupt-gradients", action="store_true", help="negative control: corrupt every backward rule")
    p.add_argument("--skip-end-to-end", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    setup_logger(stream=sys.stderr if args.json else None)
    logger.info(f"[main] - command: {args.command}")
    try:
        return args.func(args)
    except VerificationError as e:
        logger.error(f"[main] - verification failed: {e}")
        return 1
    except (CGNetError, ManifestValidationError, CheckpointError) as e:
        logger.error(f"[main] - {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
