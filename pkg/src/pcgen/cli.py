"""Command-line interface: dataset synthesis, training, inference, evaluation.

Subcommands:

    synth-data   build the synthetic dataset
    train        run (or resume) the two-stage training loop
    generate     image -> sparse + dense clouds from a checkpoint
    upsample     upsample an existing cloud with a trained model
    evaluate     metric report (and optional error heatmap) for two clouds
    gradcheck    finite-difference check of every autodiff kernel
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import metrics
from . import tensor as T
from .cloudio import Cloud, read_cloud, read_pgm, write_cloud
from .config import TrainConfig, config_to_text, load_config
from .data import make_dataset, random_subsample
from .encoder import Z_DIM
from .errors import ContractViolation
from .report import write_report
from .train import Trainer, load_models


def _cmd_synth_data(args):
    cfg = TrainConfig()
    make_dataset(args.out, args.train, args.test, seed=args.seed,
                 dense_n=args.dense if args.dense else cfg.dense_points,
                 sparse_n=args.sparse if args.sparse else cfg.sparse_points,
                 image_size=args.image_size)
    print(f"wrote {args.train} train / {args.test} test samples to {args.out}")
    return 0


def _cmd_train(args):
    if args.print_default_config:
        sys.stdout.write(config_to_text(TrainConfig()))
        return 0
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.stage:
        cfg.stage = args.stage
    trainer = Trainer(cfg, data_dir=args.data, out_dir=args.out,
                      resume=args.resume, quiet=args.quiet)
    final = trainer.train()
    counts = " ".join(f"{k}={v}" for k, v in sorted(trainer.updates.items()))
    print(f"done: {final} (updates: {counts})")
    return 0


def _cmd_generate(args):
    cfg, models, header, rngs = load_models(args.ckpt)
    image = read_pgm(args.image)
    if image.shape != (cfg.image_size, cfg.image_size):
        raise ContractViolation(
            f"image {image.shape} does not match the model's configured "
            f"{cfg.image_size}x{cfg.image_size} input")
    code = models.encoder.encode(image, rngs["z"])
    with T.no_grad():
        sparse = models.gen1.generate_np(code.z.astype(np.float32)[None])
        dense = models.gen2.upsample_np(sparse, 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(out / "sparse.ply", Cloud(points=sparse))
    write_cloud(out / "dense.ply", Cloud(points=dense))
    print(f"wrote {out / 'sparse.ply'} ({len(sparse)} pts) and "
          f"{out / 'dense.ply'} ({len(dense)} pts)")
    return 0


def _cmd_upsample(args):
    cfg, models, header, _ = load_models(args.ckpt)
    if args.ratio != cfg.ratio:
        raise ContractViolation(
            f"requested ratio {args.ratio} but the checkpoint was trained "
            f"with ratio {cfg.ratio}")
    cloud = read_cloud(getattr(args, "in"))
    pts = cloud.points
    if args.subsample is not None:
        pts = random_subsample(pts, args.subsample, seed=args.subsample_seed)
    out_pts = models.gen2.upsample_np(pts.astype(np.float32), 1)
    write_cloud(args.out, Cloud(points=out_pts))
    print(f"wrote {args.out} ({len(out_pts)} pts from {len(pts)} inputs)")
    return 0


def _cmd_evaluate(args):
    pred = read_cloud(args.pred).points.astype(np.float64)
    gt = read_cloud(args.gt).points.astype(np.float64)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"cd", "emd", "hd", "p2p"}
    if unknown:
        raise ContractViolation(f"unknown metrics: {sorted(unknown)}")
    entries = {
        "pred": args.pred, "gt": args.gt,
        "n_pred": len(pred), "n_gt": len(gt),
    }
    if "cd" in wanted:
        cd_sum, cd_mean = metrics.chamfer(pred, gt)
        entries["cd_sum"] = cd_sum
        entries["cd_mean"] = cd_mean
    if "emd" in wanted:
        a, b = pred, gt
        if len(a) == len(b) and len(a) <= metrics.EXACT_EMD_CAP:
            entries["emd_mode"] = "exact"
        else:
            k = min(args.subset, len(a), len(b))
            a = random_subsample(a, k, seed=args.subset_seed)
            b = random_subsample(b, k, seed=args.subset_seed + 1)
            entries["emd_mode"] = "exact" if k <= metrics.EXACT_EMD_CAP else "approx"
            entries["emd_subset"] = k
            entries["emd_subset_seed"] = args.subset_seed
        entries["emd"] = metrics.emd(a, b, mode=entries["emd_mode"])
    if "hd" in wanted:
        entries["hd"] = metrics.hausdorff(pred, gt)
    if "p2p" in wanted:
        err = metrics.pc2pc_error(pred, gt)
        entries["p2p_mean"] = float(err.mean())
        entries["p2p_max"] = float(err.max())
        for q in (50, 90, 99):
            entries[f"p2p_p{q}"] = float(np.percentile(err, q))
        if args.heatmap:
            write_cloud(args.heatmap,
                        Cloud(points=pred.astype(np.float32),
                              error=err.astype(np.float32)))
            entries["heatmap"] = args.heatmap
    write_report(args.out, entries)
    print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args):
    results = gc.run_all(seeds=args.seeds, rtol=args.rtol, report=print)
    worst = max(results.values())
    print(f"{len(results)} kernels checked, worst relative error {worst:.3e}")
    return 0 if worst < args.rtol else 1


def build_parser():
    p = argparse.ArgumentParser(prog="pcgen",
                                description="two-stage point-cloud generation "
                                            "and upsampling pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate the synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, default=200)
    s.add_argument("--test", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dense", type=int, default=0,
                   help="dense cloud size (default: ratio * sparse from defaults)")
    s.add_argument("--sparse", type=int, default=0)
    s.add_argument("--image-size", type=int, default=64)
    s.set_defaults(func=_cmd_synth_data)

    s = sub.add_parser("train", help="train (or resume) the pipeline")
    s.add_argument("--config", help="key=value config file")
    s.add_argument("--data", help="dataset directory")
    s.add_argument("--out", help="output directory")
    s.add_argument("--stage", choices=["1", "2", "both"])
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--print-default-config", action="store_true",
                   help="print the full default config and exit")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("generate", help="image -> sparse + dense clouds")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True, help="input slice (pgm)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_cmd_generate)

    s = sub.add_parser("upsample", help="upsample an existing cloud")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", required=True, dest="in")
    s.add_argument("--ratio", type=int, required=True)
    s.add_argument("--subsample", type=int)
    s.add_argument("--subsample-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_upsample)

    s = sub.add_parser("evaluate", help="metric report for two clouds")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--metrics", default="cd,emd,hd,p2p")
    s.add_argument("--heatmap", help="write pred cloud with per-vertex error")
    s.add_argument("--subset", type=int, default=512,
                   help="subset size when clouds exceed the exact EMD cap")
    s.add_argument("--subset-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference kernel checks")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--rtol", type=float, default=1e-4)
    s.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    missing = []
    if args.command == "train" and not args.print_default_config:
        if not args.data:
            missing.append("--data")
        if not args.out:
            missing.append("--out")
    if missing:
        build_parser().error(f"train requires {' and '.join(missing)}")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
