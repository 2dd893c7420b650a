"""Command-line entry point: ``csda <subcommand> ...``."""

import argparse
import logging
import os
import sys

from . import data, plotting
from .ablation import ABLATION_COLUMNS, run_ablation
from .config import ABLATION_MODES, TrainConfig
from .gradcheck import LOSS_TOLERANCE, NET_TOLERANCE, focal_error, loss_errors, net_probe
from .train import (
    FAMILY_COLUMNS,
    LOG_COLUMNS,
    evaluate,
    family_rows,
    load_trained,
    train,
    write_csv,
)
from .viz import export_visualization


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_config(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = list(getattr(args, "set", None) or [])
    if overrides:
        merged = cfg.to_lines() + overrides
        cfg = TrainConfig.from_lines(merged)
    return cfg


def _checkpoint_dir(path):
    nested = os.path.join(path, "checkpoint")
    return nested if os.path.isdir(nested) else path


def cmd_gen_data(args):
    params = data.SceneParams(
        image_size=args.image_size,
        shadow_probability=args.shadow_prob,
        noise_sigma=args.noise_sigma,
    )
    entries = data.make_manifest(args.n_train, args.n_val, args.n_test, seed=args.seed)
    data.save_dataset(args.out, entries, params)
    print(f"wrote {len(entries)} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    splits = data.load_dataset(args.data)
    result = train(cfg, splits, out_dir=args.out)
    cfg.save(os.path.join(args.out, "train.cfg"))
    plotting.training_curves(result.history, os.path.join(args.out, "training_curves.png"))
    print(f"best epoch {result.best_epoch}: val mIoU {result.best_val_miou:.4f}")
    return 0


def cmd_eval(args):
    model, cfg, threshold = load_trained(_checkpoint_dir(args.checkpoint))
    splits = data.load_dataset(args.data)
    wanted = ["train", "val", "test"] if args.split == "all" else [args.split]
    os.makedirs(args.out, exist_ok=True)
    rows, per_image, fam = [], [], []
    for split in wanted:
        if not splits.get(split):
            continue
        res = evaluate(model, cfg, splits[split], threshold)
        m = res.aggregate
        rows.append({
            "epoch": "final", "split": split, "loss": float("nan"), "acc": m.accuracy,
            "precision": m.precision, "recall": m.recall, "f1": m.f1, "iou0": m.iou_c0,
            "iou1": m.iou_c1, "miou": m.miou, "lr": float("nan"),
        })
        per_image += [{"split": split, **r} for r in res.per_image]
        if split == "test":
            fam = family_rows(res)
        print(f"{split}: acc {m.accuracy:.4f} f1 {m.f1:.4f} miou {m.miou:.4f}")
    if not rows:
        print("no samples in the requested split(s)", file=sys.stderr)
        return 1
    write_csv(os.path.join(args.out, "eval_metrics.csv"), rows, LOG_COLUMNS)
    img_cols = ("split", "seed", "family_id", "accuracy", "precision", "recall", "f1", "iou_c0", "iou_c1", "miou")
    write_csv(os.path.join(args.out, "per_image.csv"), per_image, img_cols)
    if fam:
        write_csv(os.path.join(args.out, "families.csv"), fam, FAMILY_COLUMNS)
        test_imgs = [r for r in per_image if r["split"] == "test"]
        plotting.family_boxplot(test_imgs, os.path.join(args.out, "family_boxplot.png"))
    return 0


def cmd_gradcheck(args):
    seeds = range(args.seed, args.seed + args.n_seeds)
    ok = True
    for variant, err in loss_errors(seeds).items():
        passed = err < LOSS_TOLERANCE
        ok &= passed
        print(f"loss {variant}: max relative error {err:.3e} ({'ok' if passed else 'FAIL'})")
    ferr = max(focal_error(s) for s in seeds)
    ok &= ferr < LOSS_TOLERANCE
    print(f"loss focal: max relative error {ferr:.3e} ({'ok' if ferr < LOSS_TOLERANCE else 'FAIL'})")
    for name, err in net_probe(args.seed).items():
        passed = err < NET_TOLERANCE
        ok &= passed
        print(f"net {name}: max relative error {err:.3e} ({'ok' if passed else 'FAIL'})")
    return 0 if ok else 1


def cmd_visualize(args):
    model, cfg, threshold = load_trained(_checkpoint_dir(args.checkpoint))
    splits = data.load_dataset(args.data)
    samples = splits[args.split][: args.n]
    paths = export_visualization(model, cfg, samples, args.out, threshold)
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    splits = data.load_dataset(args.data)
    modes = args.modes.split(",") if args.modes else list(ABLATION_MODES)
    for m in modes:
        if m not in ABLATION_MODES:
            print(f"unknown mode {m!r}", file=sys.stderr)
            return 2
    rows = run_ablation(splits, cfg, args.dcs, modes, args.seeds)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "ablation.csv"), rows, ABLATION_COLUMNS)
    plotting.ablation(rows, os.path.join(args.out, "ablation.png"))
    for r in rows:
        print(f"d_cs={r['d_cs']} {r['mode']:>14}: f1 {r['f1']:.4f} miou {r['miou']:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="csda", description="Colorspace discriminant analysis toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic blade dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--shadow-prob", type=float, default=0.6)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.set_defaults(func=cmd_gen_data)

    def config_args(p):
        p.add_argument("--config", help="key = value training config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("train", help="train a model")
    config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="run directory or checkpoint directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of losses and networks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("visualize", help="export colorspace panels as PNG files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--n", type=int, default=4)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("ablate", help="compare CSDA with its baselines across d_cs")
    config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dcs", type=_int_list, default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(ABLATION_MODES)}")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"csda {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
