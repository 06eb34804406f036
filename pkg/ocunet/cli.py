#!/usr/bin/env python3
"""
Command-line interface for the ocunet package
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .checkpoint import load_checkpoint
from .config import CommandConfig, resolve
from .constants import GRADCHECK_SUITE_TOLERANCE
from .dataset import SegmentationDataset, default_batch_size, split_train_val
from .exceptions import OCUNetError
from .gradcheck import run_gradcheck_suite
from .manifest import SampleManifest, load_manifest
from .masks import MaskEncoding
from .model import PRESETS, build_ocunet
from .predict import predict_paths
from .synth import synth_dataset
from .textfmt import format_gradcheck, format_report
from .training import check_head, evaluate, train

logger = logging.getLogger(__name__)

DEFAULT_RUN_DIR = Path("ocunet-run")
DEFAULT_SYNTH_SIZE = (64, 64)


def _load_manifest(cfg: CommandConfig) -> SampleManifest:
    manifest = load_manifest(cfg.manifest)
    if cfg.patch_size is not None:
        manifest.patch_size = cfg.patch_size
    return manifest


def cmd_train(cfg: CommandConfig) -> int:
    """Train a model and report the best checkpoint on the validation data."""
    manifest = _load_manifest(cfg)
    if cfg.out is None:
        cfg.out = DEFAULT_RUN_DIR
    model = build_ocunet(cfg.model_config(manifest.encoding, manifest.patch_size))
    training = cfg.training_config()
    result = train(model, manifest, training)
    if result.best_checkpoint is None:
        print("❌ Training produced no checkpoint")
        return 1

    best = result.best_checkpoint.restore_model()
    _, val_entries = split_train_val(manifest, training.seed, training.val_fraction)
    val_set = SegmentationDataset(
        val_entries, manifest.encoding, manifest.patch_size, training.resize
    )
    batch = training.batch_size or default_batch_size(manifest.patch_size)
    report = evaluate(best, val_set, batch, training.workers)
    report.write(cfg.out)

    print(
        f"✅ Trained {result.steps} steps; best validation Dice "
        f"{result.best_metric:.4f} at epoch {result.best_epoch}"
    )
    print(f"💾 Checkpoint: {training.checkpoint_path}")
    print(f"📝 Epoch log: {training.log_path}")
    print("📊 Validation metrics:")
    print(format_report(report))
    return 0


def cmd_eval(cfg: CommandConfig) -> int:
    """Score a checkpoint on one manifest split."""
    ckpt = load_checkpoint(cfg.checkpoint)
    model = ckpt.restore_model()
    manifest = _load_manifest(cfg)
    check_head(model, manifest.encoding)
    entries = manifest.split(cfg.split)
    if not entries:
        print(f"❌ The '{cfg.split}' split of {cfg.manifest} is empty")
        return 1
    dataset = SegmentationDataset(
        entries, manifest.encoding, model.config.input_size, cfg.resize
    )
    batch = cfg.batch_size or default_batch_size(model.config.input_size)
    report = evaluate(model, dataset, batch, cfg.workers)
    out = cfg.out or cfg.checkpoint.parent
    paths = report.write(out)
    print(f"📊 Metrics on the '{cfg.split}' split ({len(dataset)} patches):")
    print(format_report(report))
    print(f"📝 Report: {paths['text']} and {paths['json']}")
    return 0


def cmd_predict(cfg: CommandConfig) -> int:
    """Write label masks, heatmaps and overlays for each input image."""
    ckpt = load_checkpoint(cfg.checkpoint)
    model = ckpt.restore_model()
    encoding_name = ckpt.metadata.get("encoding")
    encoding = (
        MaskEncoding(encoding_name)
        if encoding_name
        else MaskEncoding.for_head(model.config.num_classes)
    )
    images: List[Path] = list(cfg.inputs)
    if not images and cfg.manifest is not None:
        manifest = load_manifest(cfg.manifest)
        images = [e.image_path for e in manifest.split(cfg.split)]
    if not images:
        print("❌ No input images")
        return 1
    out = cfg.out or Path("predictions")
    batch = cfg.batch_size or default_batch_size(model.config.input_size)
    summary = predict_paths(model, images, out, encoding, batch)
    for path, reason in summary.failed:
        print(f"⚠️  Skipped {path}: {reason}")
    if not summary.ok:
        print("❌ No image could be read")
        return 1
    print(f"✅ Wrote predictions for {len(summary.written)} images to {out}")
    return 0


def cmd_gradcheck(cfg: CommandConfig) -> int:
    """Finite-difference check of every primitive, block, loss and a tiny model."""
    results = run_gradcheck_suite(seed=cfg.seed, tolerance=GRADCHECK_SUITE_TOLERANCE)
    print(format_gradcheck(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"❌ {len(failed)} of {len(results)} units failed: {', '.join(failed)}")
        return 1
    print(f"✅ All {len(results)} units passed")
    return 0


def cmd_synth(cfg: CommandConfig) -> int:
    """Generate a synthetic dataset with a manifest."""
    manifest = synth_dataset(
        cfg.out,
        cfg.n,
        size=cfg.patch_size or DEFAULT_SYNTH_SIZE,
        classes=cfg.classes or 1,
        seed=cfg.seed,
        test_fraction=cfg.test_fraction,
    )
    print(f"✅ Wrote {len(manifest.entries)} samples")
    print(f"📄 Manifest: {manifest.source}")
    return 0


COMMAND_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "synth-data": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocunet",
        description="ocunet CLI - Oral cancer segmentation with an attention U-Net",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  ocunet synth-data --out data/synth --n 8 --classes 1
  ocunet train --manifest data/synth/manifest.csv --epochs 30 --out runs/synth
  ocunet eval --manifest data/synth/manifest.csv --checkpoint runs/synth/best.ocun
  ocunet predict slide.png --checkpoint runs/synth/best.ocun --out predictions
  ocunet gradcheck
        """,
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, help="Random seed (default: 0)")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--workers", type=int, help="Data loader threads (default: 1)")
    common.add_argument(
        "--verbose", action="store_true", default=None, help="Enable debug logging"
    )

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", type=Path, help="Sample manifest (CSV or JSON)")
    data.add_argument("--patch-size", help="Patch size HxW, overrides the manifest")
    data.add_argument(
        "--batch-size", type=int, help="Batch size (default: 8 up to 512x512, else 4)"
    )
    data.add_argument(
        "--resize",
        action="store_true",
        default=None,
        help="Resize whole images to the patch size instead of tiling",
    )
    splits = ["train", "val", "test"]

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    train_parser = subparsers.add_parser(
        "train", parents=[common, data], help="Train a model"
    )
    train_parser.add_argument("--epochs", type=int, help="Maximum epochs (default: 50)")
    train_parser.add_argument("--lr", type=float, help="Learning rate (default: 3e-4)")
    train_parser.add_argument(
        "--alpha", type=float, help="Hybrid loss weight (default: 0.5)"
    )
    train_parser.add_argument(
        "--classes", type=int, help="Output channels, overrides the encoding"
    )
    train_parser.add_argument(
        "--preset", choices=sorted(PRESETS), help="Architecture preset"
    )
    train_parser.add_argument(
        "--base-channels", type=int, help="Level-1 width (default: 32)"
    )

    eval_parser = subparsers.add_parser(
        "eval", parents=[common, data], help="Evaluate a checkpoint"
    )
    eval_parser.add_argument("--checkpoint", type=Path, help="Checkpoint file")
    eval_parser.add_argument("--split", choices=splits, help="Split to score")

    predict_parser = subparsers.add_parser(
        "predict", parents=[common, data], help="Predict masks and overlays"
    )
    predict_parser.add_argument(
        "inputs", nargs="*", type=Path, help="Images to segment"
    )
    predict_parser.add_argument("--checkpoint", type=Path, help="Checkpoint file")
    predict_parser.add_argument(
        "--split", choices=splits, help="Manifest split when no images are given"
    )

    subparsers.add_parser(
        "gradcheck", parents=[common], help="Run the gradient self-check"
    )

    synth_parser = subparsers.add_parser(
        "synth-data", parents=[common], help="Generate a synthetic dataset"
    )
    synth_parser.add_argument("--n", type=int, help="Number of samples (default: 8)")
    synth_parser.add_argument(
        "--classes", type=int, help="1 or 2 for binary, 3 for three-class"
    )
    synth_parser.add_argument("--patch-size", help="Image size HxW (default: 64x64)")
    synth_parser.add_argument(
        "--test-fraction", type=float, help="Share of samples in test"
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve(args.command, flags, args.config)
        cfg.validate()
        return COMMAND_HANDLERS[args.command](cfg)
    except KeyboardInterrupt:
        print("\n👋 Interrupted by user")
        return 1
    except OCUNetError as e:
        print(f"❌ {e}")
        return 1
    except OSError as e:
        print(f"❌ I/O error: {e}")
        return 1
    except Exception as e:
        logger.debug("Unhandled error in %s", args.command, exc_info=True)
        print(f"❌ Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
