"""Command-line entry point: synth, train, eval and visualize."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluation, visualize
from .config import load_config
from .data import load_dataset, read_info, write_dataset, write_info
from .errors import CheckpointError, ConfigError, DatasetError, ScribFormerError
from .losses import acam_filter
from .synthetic import SyntheticSpec, dataset_info, generate_synthetic
from .training import apply_model_state, build_model, fit, load_checkpoint


def _cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    spec = SyntheticSpec(
        num_train=args.train,
        num_val=args.val,
        num_test=args.test,
        image_size=args.size,
        num_classes=args.classes,
        scribble_coverage=args.coverage,
        seed=args.seed,
    )
    splits = generate_synthetic(spec)
    write_info(out, dataset_info(spec))
    for split, samples in splits.items():
        write_dataset(out, split, samples)
    print(f"wrote {sum(len(s) for s in splits.values())} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    overrides: dict[str, str] = {}

    def put(key, value):
        if value is not None:
            overrides[key] = str(value)

    put("data.root", args.data)
    put("data.image_size", args.image_size)
    put("train.out_dir", args.out)
    put("train.epochs", args.epochs)
    put("train.batch_size", args.batch_size)
    put("train.learning_rate", args.lr)
    put("train.weight_decay", args.weight_decay)
    put("train.seed", args.seed)
    put("loss.lambda1", args.lambda1)
    put("loss.lambda2", args.lambda2)
    put("loss.lambda3", args.lambda3)
    put("loss.alpha", args.alpha)
    put("loss.omega", args.omega)
    if args.no_transformer:
        overrides["model.use_transformer"] = "false"

    cfg = load_config(preset=args.preset, path=args.config, overrides=overrides)
    if not cfg.data_root:
        raise ConfigError("no dataset given; pass --data or set [data] root in the config")
    run_dir = fit(cfg, resume_from=args.resume)
    print(f"run directory: {run_dir}")
    return 0


def _load_run_model(run_dir: Path, device: str = "cpu"):
    cfg_path = run_dir / "config.ini"
    if not cfg_path.is_file():
        raise ConfigError(f"{run_dir} has no config.ini; not a run directory?")
    cfg = load_config(path=cfg_path)
    ckpt_path = run_dir / "checkpoints" / "best.pt"
    if not ckpt_path.is_file():
        raise CheckpointError(f"missing checkpoint {ckpt_path}")
    payload = load_checkpoint(ckpt_path)
    model = build_model(cfg, payload["num_classes"])
    apply_model_state(model, payload["model_state"])
    model.eval()
    return model, cfg


def _cmd_eval(args) -> int:
    run_dir = Path(args.run)
    model, cfg = _load_run_model(run_dir)
    data_root = args.data or cfg.data_root
    samples = load_dataset(data_root, args.split, cfg.image_size)
    if not samples:
        raise DatasetError(f"split {args.split!r} under {data_root} is empty")
    info = read_info(data_root)
    result = evaluation.evaluate(
        model,
        samples,
        branch=args.branch or cfg.eval_branch,
        batch_size=cfg.batch_size,
        class_names=info.class_names[1:],
        bootstrap=cfg.bootstrap_resamples,
        level=cfg.confidence_level,
        rng=cfg.seed,
    )
    out = Path(args.out) if args.out else run_dir / "eval_report.json"
    evaluation.write_report(result, out)
    if args.boxplot:
        visualize.dice_box_plot(result.per_case_dice, out.with_suffix(".png"))
    if args.save_predictions or args.save_probs:
        evaluation.save_predictions(
            model,
            samples,
            run_dir / "predictions" / args.split,
            branch=args.branch or cfg.eval_branch,
            batch_size=cfg.batch_size,
            save_probs=args.save_probs,
        )
    print(f"mean Dice {result.mean_dice:.4f} over {len(result.per_case_dice)} cases -> {out}")
    return 0


def _cmd_visualize(args) -> int:
    run_dir = Path(args.run)
    model, cfg = _load_run_model(run_dir)
    data_root = args.data or cfg.data_root
    samples = load_dataset(data_root, args.split, cfg.image_size)
    by_id = {s.id: s for s in samples}
    for sid in args.ids:
        if sid not in by_id:
            known = ", ".join(sorted(by_id)[:10])
            raise DatasetError(f"sample id {sid!r} not in split {args.split!r}; available: {known} ...")
    for sid in args.ids:
        sample = by_id[sid]
        img = torch.from_numpy(sample.image).unsqueeze(0).unsqueeze(0)
        with torch.no_grad():
            out = model(img)
            acam_probs = [acam_filter(a)[0].numpy() for a in out.acams]
        dest = run_dir / "acam" / sid
        visualize.render_acam_heatmaps(acam_probs, sample.image, dest)
        pred = model.predict(img)[0].numpy().astype(np.uint8)
        visualize.overlay_prediction(sample.image, pred, dest / "overlay.png")
        print(f"wrote heatmaps and overlay for {sid} under {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scribformer",
        description="Scribble-supervised triple-branch segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=20)
    p.add_argument("--test", type=int, default=30)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--coverage", type=float, default=0.10)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--alpha", default=None, help="'dynamic' or a fixed value in (0,1)")
    p.add_argument("--omega", default=None, help="four comma-separated weights")
    p.add_argument("--no-transformer", action="store_true", help="CNN-only ablation")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--branch", choices=("cnn", "trans", "mean"), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--boxplot", action="store_true")
    p.add_argument("--save-predictions", action="store_true",
                   help="write predicted masks as 8-bit PNGs")
    p.add_argument("--save-probs", action="store_true",
                   help="also dump float32 probability maps with JSON headers")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("visualize", help="activation heatmaps and prediction overlays")
    p.add_argument("--run", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("ids", nargs="+")
    p.set_defaults(func=_cmd_visualize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScribFormerError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    except Exception as e:  # unexpected failure, still one machine-readable line
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
