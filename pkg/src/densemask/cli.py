"""Command-line entry points (``densemask <command>``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, checks, formats, harness, inference
from .core import load_tensor, save_tensor
from .synth import generate_dataset
from .transforms import Interp


def _cmd_check(args) -> int:
    if args.input:
        t = load_tensor(args.input)
        out = checks.apply_op(t, args.op, args.lam, Interp(args.interp), args.fill)
        save_tensor(args.out, out)
        print(f"{args.op}: {t.shape} -> {out.shape}, units {out.units}")
        return 0
    rows = checks.check_transforms(args.seed, args.cases)
    print(checks.format_rows(rows))
    return 0 if all(r.ok for r in rows) else 1


def _cmd_bench(args) -> int:
    rows = bench.bench_swap(tuple(args.lambdas), args.vu, args.hw, args.repeats, not args.no_naive)
    if args.out:
        with open(args.out, "w", newline="") as f:
            bench.write_csv(rows, f)
    else:
        bench.write_csv(rows, sys.stdout)
    return 0


def _config(args) -> harness.ExperimentConfig:
    return harness.load_config(args.config) if args.config else harness.ExperimentConfig()


def _cmd_train(args) -> int:
    cfg = _config(args)
    res = harness.train(cfg, progress=not args.quiet)
    harness.save_checkpoint(args.out, cfg, res.params, res.losses)
    if args.loss_csv:
        with open(args.loss_csv, "w") as f:
            f.write("epoch,loss,mask,cls,box\n")
            for e, (l, p) in enumerate(zip(res.losses, res.parts)):
                f.write(f"{e},{l:.6f},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}\n")
    print(f"trained {cfg.epochs} epochs in {res.seconds:.1f}s, final loss {res.losses[-1]:.4f}"
          if res.losses else "trained 0 epochs")
    return 0


def _cmd_eval(args) -> int:
    cfg, params, _ = harness.load_checkpoint(args.checkpoint)
    ap = harness.evaluate(cfg, params, args.split)
    print(json.dumps({"ap50": ap[0.5], "ap75": ap[0.75]}))
    return 0


def _cmd_ablate(args) -> int:
    base = _config(args)
    grid = harness.ablation_grid(base, tuple(args.seeds))
    rows = harness.run_ablation(grid, args.out, args.workers)
    for r in rows:
        print(f"{r['name']:<28} seed {r['seed']}  AP50 {r['ap50']:.3f}  AP75 {r['ap75']:.3f}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg, params, _ = harness.load_checkpoint(args.checkpoint)
    images, insts, _ = harness.make_split(cfg, "val")
    cal = inference.calibrate(harness.predict(cfg, params, images), insts)
    Path(args.out).write_text(json.dumps(cal.to_json()))
    print(f"calibrated {len(cal.tables)} categories -> {args.out}")
    return 0


def _cmd_infer(args) -> int:
    cfg, params, _ = harness.load_checkpoint(args.checkpoint)
    if args.scenes:
        scenes = formats.load_scenes(args.scenes)
        images = np.stack([im for im, _ in scenes]) - 0.5
    else:
        images = harness.make_split(cfg, "val")[0][: args.count]
    dets = harness.predict(cfg, params, images)
    if args.calibration:
        cal = inference.Calibration.from_json(json.loads(Path(args.calibration).read_text()))
        for d in dets:
            cal.apply(d)
    formats.save_detections(args.out, dets)
    if args.render:
        out_dir = Path(args.render)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, (img, d) in enumerate(zip(images, dets)):
            shown = [x for x in d if (x.calibrated_score if x.calibrated_score is not None else x.score)
                     >= args.display_thresh]
            formats.write_pgm(out_dir / f"image{i:03d}.pgm", formats.render_detections(img + 0.5, shown))
    print(f"{sum(len(d) for d in dets)} detections on {len(images)} images -> {args.out}")
    return 0


def _cmd_scenes(args) -> int:
    cfg = _config(args)
    formats.save_scenes(args.out, generate_dataset(cfg.scene, args.count, args.offset))
    print(f"{args.count} scenes -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="densemask", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="compare transforms against their oracles")
    c.add_argument("target", choices=["transforms"])
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--cases", type=int, default=50)
    c.add_argument("--input", help="binary tensor dump to transform instead of running checks")
    c.add_argument("--op", default="align2nat")
    c.add_argument("--lam", type=int, default=1)
    c.add_argument("--interp", default="bilinear", choices=[i.value for i in Interp])
    c.add_argument("--fill", type=float, default=0.0)
    c.add_argument("--out", help="where to write the transformed tensor dump")
    c.set_defaults(func=_cmd_check)

    b = sub.add_parser("bench", help="time the fused swap against the naive path")
    b.add_argument("target", choices=["swap"])
    b.add_argument("--lambdas", type=int, nargs="+", default=[2, 4, 8])
    b.add_argument("--vu", type=int, default=15)
    b.add_argument("--hw", type=int, default=64)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--no-naive", action="store_true")
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=_cmd_bench)

    t = sub.add_parser("train", help="train on synthetic scenes")
    t.add_argument("--config", help="JSON experiment config")
    t.add_argument("--out", default="checkpoint.npz")
    t.add_argument("--loss-csv")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="synthetic AP of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="val", choices=["train", "val"])
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("ablate", help="run the directional ablation grid")
    a.add_argument("--config", help="base JSON experiment config")
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out", default="ablation.csv")
    a.set_defaults(func=_cmd_ablate)

    k = sub.add_parser("calibrate", help="fit per-category score calibration on the val split")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--out", default="calibration.json")
    k.set_defaults(func=_cmd_calibrate)

    i = sub.add_parser("infer", help="detect instances and export JSON (and PGM renders)")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--scenes", help="scene JSON file; default: the config's val split")
    i.add_argument("--count", type=int, default=8)
    i.add_argument("--calibration")
    i.add_argument("--render", metavar="DIR")
    i.add_argument("--display-thresh", type=float, default=inference.CALIBRATED_DISPLAY_THRESH)
    i.add_argument("--out", default="detections.json")
    i.set_defaults(func=_cmd_infer)

    s = sub.add_parser("scenes", help="export synthetic scenes as JSON")
    s.add_argument("--config")
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--offset", type=int, default=0)
    s.add_argument("--out", default="scenes.json")
    s.set_defaults(func=_cmd_scenes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
