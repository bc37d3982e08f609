"""Command line entry point: prepare, train, generate, evaluate.

Exit codes: 0 ok, 1 data error, 2 usage, 3 training abort, 4 checkpoint
error, 5 evaluation error. Config precedence is CLI flags over config file
over built-in defaults; the P2LD_DEVICE environment variable overrides the
--device flag. Logs go to stderr, data to the paths given.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data as data_mod
from .data import DataError, DatasetManifest, denormalize, load_image_rgb, normalize_image
from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .losses import LossConfigError
from .metrics import BuiltinExtractor, MetricError, TorchScriptExtractor, evaluate_set
from .trainer import (
    CheckpointError,
    NonFiniteLossError,
    TrainConfig,
    fit,
    load_generator,
)

logger = logging.getLogger("p2ld")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_TRAIN = 3
EXIT_CHECKPOINT = 4
EXIT_EVAL = 5


def load_run_config(path) -> dict:
    """Read the optional JSON config with generator/discriminator/train sections."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"generator", "discriminator", "train"}
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    return doc


def build_configs(args) -> tuple[GeneratorConfig, DiscriminatorConfig, TrainConfig]:
    doc = load_run_config(getattr(args, "config", None))
    train_doc = TrainConfig().to_dict()
    train_doc.update(doc.get("train", {}))
    for flag, key in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("size", "image_size"),
        ("lr", "lr"),
        ("seed", "seed"),
        ("checkpoint_every", "checkpoint_every"),
        ("device", "device"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train_doc[key] = value
    env_device = os.environ.get("P2LD_DEVICE")
    if env_device:
        train_doc["device"] = env_device
    train_cfg = TrainConfig.from_dict(train_doc)

    gen_doc = GeneratorConfig(input_size=train_cfg.image_size).to_dict()
    gen_doc.update(doc.get("generator", {}))
    gen_doc["input_size"] = train_cfg.image_size
    gen_cfg = GeneratorConfig.from_dict(gen_doc)

    disc_doc = DiscriminatorConfig().to_dict()
    disc_doc.update(doc.get("discriminator", {}))
    disc_cfg = DiscriminatorConfig.from_dict(disc_doc)
    return gen_cfg, disc_cfg, train_cfg


def cmd_prepare(args) -> int:
    try:
        manifest = data_mod.scan_pairs(args.photos, args.drawings, args.category_map)
        if len(manifest) == 0:
            manifest.seed = args.seed
            manifest.train_fraction = args.train_frac
        else:
            manifest = data_mod.split_dataset(manifest, args.train_frac, args.seed)
        manifest.save(args.out)
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    counts = manifest.category_counts()
    n_train = len(manifest.subset("train"))
    n_test = len(manifest.subset("test"))
    print(f"pairs={len(manifest)} train={n_train} test={n_test}")
    print("categories: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    for w in manifest.warnings:
        logger.warning("%s", w)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        gen_cfg, disc_cfg, train_cfg = build_configs(args)
    except (DataError, LossConfigError, Exception) as exc:
        if isinstance(exc, (DataError, LossConfigError, ValueError, KeyError, TypeError)):
            logger.error("bad configuration: %s", exc)
            return EXIT_USAGE
        raise
    manifest = DatasetManifest.load(args.manifest)
    print(
        f"config: lr={train_cfg.lr} betas=({train_cfg.beta1}, {train_cfg.beta2}) "
        f"epochs={train_cfg.epochs} batch={train_cfg.batch_size} size={train_cfg.image_size} "
        f"weights=({train_cfg.weights.lambda1}, {train_cfg.weights.lambda2}, {train_cfg.weights.lambda3}) "
        f"seed={train_cfg.seed} device={train_cfg.device}",
        file=sys.stderr,
    )
    try:
        state = fit(
            manifest,
            train_cfg,
            gen_cfg=gen_cfg,
            disc_cfg=disc_cfg,
            out_dir=args.out,
            resume=args.resume,
        )
    except NonFiniteLossError as exc:
        logger.error("training aborted: %s", exc)
        return EXIT_TRAIN
    except CheckpointError as exc:
        logger.error("%s", exc)
        return EXIT_CHECKPOINT
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    if state.epoch >= state.cfg.epochs:
        print("training complete", file=sys.stderr)
    log_path = Path(args.out) / "train_log.jsonl"
    if log_path.exists():
        from .reporting import plot_training_curves

        plot_training_curves(log_path, Path(args.out) / "loss_curves.png")
    return EXIT_OK


def _gather_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return [f for f in sorted(p.iterdir()) if f.suffix.lower() in data_mod.IMAGE_EXTENSIONS]
    return [p]


def cmd_generate(args) -> int:
    import torch

    device = os.environ.get("P2LD_DEVICE") or args.device or "cpu"
    try:
        generator = load_generator(args.ckpt, device=device)
    except CheckpointError as exc:
        logger.error("%s", exc)
        return EXIT_CHECKPOINT
    size = args.size or generator.cfg.input_size
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = _gather_inputs(args.input)
    done = skipped = 0
    for src in inputs:
        try:
            img = load_image_rgb(src)
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", src, exc)
            skipped += 1
            continue
        photo = normalize_image(img, size).unsqueeze(0).to(device)
        with torch.no_grad():
            drawing = generator(photo)[0]
        data_mod.save_png(drawing, out_dir / f"{src.stem}.png")
        done += 1
    print(f"generated {done} drawing(s), skipped {skipped}, into {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        if args.extractor == "builtin":
            extractor = BuiltinExtractor()
        else:
            extractor = TorchScriptExtractor(args.extractor)
        report = evaluate_set(args.generated, args.ground_truth, extractor)
    except MetricError as exc:
        logger.error("%s", exc)
        return EXIT_EVAL
    except Exception as exc:
        logger.error("evaluation failed: %s", exc)
        return EXIT_EVAL
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    from .reporting import plot_metric_histograms, write_per_image_csv

    write_per_image_csv(report, out.with_suffix(".csv"))
    if not args.no_figures:
        plot_metric_histograms(report, out.parent)
    print(
        f"fid={report.fid:.4f} ssim_mean={report.ssim_mean:.4f} "
        f"psnr_mean={report.psnr_mean:.4f} images={len(report.per_image)}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2ld", description="Photo-to-line-drawing translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan paired directories into a split manifest")
    p.add_argument("--photos", required=True, help="directory of photos")
    p.add_argument("--drawings", required=True, help="directory of line drawings")
    p.add_argument("--out", required=True, help="manifest JSON output path")
    p.add_argument("--category-map", default=None, help="CSV with columns id,category")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.7)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train generator and discriminator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="JSON config with generator/discriminator/train sections")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="training image size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="translate photos into line drawings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="an image file or a directory of images")
    p.add_argument("--out", required=True, help="output directory for PNG drawings")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated drawings against ground truth")
    p.add_argument("--generated", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--extractor", default="builtin", help="'builtin' or a TorchScript embedding file")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-figures", action="store_true", help="skip rendering metric figures")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
