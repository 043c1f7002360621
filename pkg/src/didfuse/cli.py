"""``didfuse`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as P
from . import plots
from .data import build_manifest, load_checkpoint, load_grayscale, read_manifest_file
from .fusion import FusionConfig
from .network import encode

SAM_FLAGS = {"l1": "l1_attention", "saliency": "saliency", "average": "weighted_average"}


def _manifest(args, prefix: str = "", split: str = "train"):
    mf = getattr(args, f"{prefix}manifest", None)
    if mf:
        return read_manifest_file(mf, split)
    ir, vis = getattr(args, f"{prefix}ir_dir", None), getattr(args, f"{prefix}vis_dir", None)
    if not (ir and vis):
        raise SystemExit(f"need --{prefix.replace('_', '-')}manifest or both --{prefix.replace('_', '-')}ir-dir and --{prefix.replace('_', '-')}vis-dir")
    return build_manifest(ir, vis, split)


def _train_config(args, **override) -> P.TrainConfig:
    fields = dict(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        width=args.width,
        crop=args.crop,
        seed=args.seed,
        skip_mode=args.skip_mode,
        precision=args.precision,
        reduction=args.loss_reduction,
        variant=getattr(args, "variant", "full") or "full",
    )
    fields.update(override)
    return P.TrainConfig(**fields)


def _fusion_config(args) -> FusionConfig:
    gamma = [float(g) for g in args.gamma.split(",")] if args.gamma else [0.5] * 4
    if len(gamma) != 4:
        raise SystemExit("--gamma takes four comma-separated values")
    return FusionConfig(
        sam=SAM_FLAGS[args.sam],
        use_cam=not args.no_cam,
        gamma1=gamma[0],
        gamma2=gamma[1],
        gamma3=gamma[2],
        gamma4=gamma[3],
        gf_radius=args.gf_radius,
        gf_eps=args.gf_eps,
        sal_bins=args.sal_bins,
    )


def _add_train_flags(p, variant: bool = True) -> None:
    p.add_argument("--ir-dir")
    p.add_argument("--vis-dir")
    p.add_argument("--manifest", help="id<TAB>ir<TAB>vis file overriding the directory pairing")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch", type=int, default=24)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--crop", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-mode", choices=("add", "concat"), default="add")
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")
    p.add_argument("--loss-reduction", choices=("sum", "mean"), default="sum")
    if variant:
        p.add_argument("--variant", choices=tuple(P.VARIANT_SPECS), default="full")


def _add_fusion_flags(p) -> None:
    p.add_argument("--sam", choices=tuple(SAM_FLAGS), default="saliency")
    p.add_argument("--no-cam", action="store_true")
    p.add_argument("--gamma", help="a,b,c,d weights for the fixed-weight strategy")
    p.add_argument("--gf-radius", type=int, default=5)
    p.add_argument("--gf-eps", type=float, default=0.01)
    p.add_argument("--sal-bins", type=int, default=256)
    p.add_argument("--fusion-skip", choices=P.FUSION_SKIPS, default="avg")


def _add_eval_flags(p, prefix: str) -> None:
    p.add_argument(f"--{prefix}manifest")
    p.add_argument(f"--{prefix}ir-dir")
    p.add_argument(f"--{prefix}vis-dir")


def cmd_train(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    _, record = P.train(_manifest(args), cfg, out, loss_csv)
    plots.plot_loss_curves(record.epochs, loss_csv.with_suffix(".png"))
    print(f"checkpoint: {out}\nloss csv: {loss_csv}\nwall clock: {record.wall_clock:.1f}s")
    return 0


def cmd_fuse(args) -> int:
    out = P.fuse(args.ckpt, args.ir, args.vis, _fusion_config(args), args.out, args.fusion_skip)
    print(out)
    return 0


def cmd_decompose(args) -> int:
    files = P.decompose(args.ckpt, args.image, args.out_dir)
    for f in files:
        print(f)
    return 0


def cmd_eval(args) -> int:
    manifest = _manifest(args, split="test")
    reports = P.evaluate(args.fused_dir, manifest, args.csv)
    plots.plot_metric_table(reports, Path(args.csv).with_suffix(".png"))
    mean = P.mean_report(reports)
    print(", ".join(f"{k}={v:.6f}" for k, v in mean.items()))
    return 0


def cmd_ablate(args) -> int:
    cfg = _train_config(args, variant="full")
    out = Path(args.out_dir)
    ckpt, record, reports = P.ablate(
        _manifest(args), args.variant.replace("-", "_"), cfg, _manifest(args, "val_", "val"), out, _fusion_config(args)
    )
    plots.plot_loss_curves(record.epochs, out / f"{args.variant.replace('-', '_')}_loss.png")
    print(json.dumps({"variant": args.variant, **P.mean_report(reports)}, indent=2))
    return 0


def cmd_repro(args) -> int:
    out = Path(args.out_dir)
    table, summary = P.repro(
        _manifest(args), args.runs, _train_config(args), _manifest(args, "test_", "test"), out, _fusion_config(args), args.same_seed
    )
    plots.plot_repro(table, out / "repro_runs.png")
    for k, s in summary.items():
        print(f"{k}: mean={s['mean']:.6f} std={s['std']:.6f} cv={s['cv']:.6f}")
    return 0


def cmd_compare(args) -> int:
    rows = P.compare_strategies(args.ckpt, read_manifest_file(args.val_manifest, "val"), args.csv)
    plots.plot_strategies(rows, Path(args.csv).with_suffix(".png"))
    for row in rows:
        print(row["strategy"], " ".join(f"{k}={row[k]:.4f}" for k in ("en", "sd", "sf", "vif", "ag", "scd")))
    return 0


def cmd_figure(args) -> int:
    params = load_checkpoint(args.ckpt).params
    ir = load_grayscale(args.ir).pixels
    vis = load_grayscale(args.vis).pixels
    fI = encode(params, ir.astype(params.dtype)[None, None], "eval")
    fV = encode(params, vis.astype(params.dtype)[None, None], "eval")
    maps = {}
    for tag, fp in (("I", fI), ("V", fV)):
        if fp.base is not None:
            maps[f"B_{tag}"] = P.normalize_map(fp.base.data[0, 0])
        if fp.detail is not None:
            maps[f"D_{tag}"] = P.normalize_map(fp.detail.data[0, 0])
    print(plots.plot_decomposition(ir, vis, maps, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="didfuse", description="Infrared/visible fusion by learned base/detail decomposition.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the auto-encoder")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="per-epoch loss CSV (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--vis", required=True)
    _add_fusion_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("decompose", help="dump the first base/detail channel of an image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("figure", help="render sources and their base/detail maps side by side")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("eval", help="score fused images")
    p.add_argument("--fused-dir", required=True)
    _add_eval_flags(p, "")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score one ablation variant")
    _add_train_flags(p, variant=False)
    p.add_argument("--variant", required=True, choices=("no-base", "no-detail", "no-decomp", "classic-ae", "no-skip"))
    _add_eval_flags(p, "val-")
    _add_fusion_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("repro", help="train several seeds and report metric dispersion")
    _add_train_flags(p)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--same-seed", action="store_true", help="reuse --seed for every run")
    _add_eval_flags(p, "test-")
    _add_fusion_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("compare-strategies", help="score the six fusion-layer settings on validation pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"didfuse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
