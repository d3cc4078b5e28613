"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .annotations import AnnotationSet, ImageInfo
from .cloning import BlurStrength, compose_synthetic
from .curvewatch import detect_transition, read_series
from .errors import DataError, DetectorError, NumericalError
from .fusion import DEFAULT_ACCEPT_THR, FileDetector, FusionConfig, correct_labels
from .imgproc import CATEGORIES, WeakLabelParams, weak_label_pipeline
from .io import (
    RunConfig,
    load_config,
    read_annotations,
    read_csv_rows,
    read_image,
    with_seed,
    write_annotations,
    write_csv,
    write_pgm,
)
from .metrics import evaluate
from .selftrain import EpochRecord, make_world, run_self_training


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x: float) -> str:
    return repr(round(float(x), 6))


# -- subcommands -------------------------------------------------------------


def cmd_weaklabel(args, cfg: RunConfig) -> int:
    params = WeakLabelParams(
        blur_kernel=args.blur_kernel,
        canny_low=args.canny_low,
        canny_high=args.canny_high,
        r_min=args.rmin,
        r_max=args.rmax,
        vote_frac=args.vote_frac,
        min_area=args.min_area,
    )
    if params.r_min < 1 or params.r_max < params.r_min:
        raise UsageError("need 1 <= --rmin <= --rmax")
    images, anns = [], {}
    for path in args.image:
        raster = read_image(path)
        image_id = Path(path).stem
        if image_id in anns:
            raise DataError(f"duplicate image id {image_id!r} (from {path})")
        h, w = raster.shape
        images.append(ImageInfo(image_id, w, h, str(path)))
        anns[image_id] = weak_label_pipeline(raster, args.category, params)
    write_annotations(AnnotationSet(images, anns), args.out)
    print(f"wrote {sum(len(v) for v in anns.values())} boxes for {len(images)} image(s) to {args.out}")
    return 0


def cmd_fuse(args, cfg: RunConfig) -> int:
    current = read_annotations(args.labels)
    detector = FileDetector.from_directory(args.pred_dir)
    views = detector.views
    fusion = FusionConfig(
        cluster_iou_thr=args.iou_thr if args.iou_thr is not None else cfg.fusion.cluster_iou_thr,
        skip_score_thr=cfg.fusion.skip_score_thr,
        n_views=len(views),
    )
    accept = args.accept_thr if args.accept_thr is not None else cfg.accept_thr
    fused = correct_labels(current, detector, views, fusion, accept)
    write_annotations(fused, args.out)
    print(f"fused {len(views)} view(s) into {fused.num_boxes()} boxes; wrote {args.out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    gt = read_annotations(args.gt)
    rows = []
    for path in args.pred:
        report = evaluate(read_annotations(path, check_bounds=False), gt)
        rows.append((Path(path).stem, report))
        metrics = " ".join(f"{k}={_fmt(v)}" for k, v in report.as_dict().items())
        print(metrics if len(args.pred) == 1 else f"{Path(path).stem} {metrics}")
    if args.csv:
        write_csv(args.csv, ("annotations", "ap50", "ap75", "ap", "ar"),
                  ((name, r.ap50, r.ap75, r.ap, r.ar) for name, r in rows))
    return 0


def cmd_detect_transition(args, cfg: RunConfig) -> int:
    try:
        series = read_series(read_csv_rows(args.csv))
    except ValueError as exc:
        raise DataError(f"{args.csv}: {exc}") from None
    threshold = args.threshold if args.threshold is not None else cfg.threshold
    if not 0 < threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    epoch = detect_transition(series, threshold)
    print("none" if epoch is None else epoch)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    raster = read_image(args.image)
    aset = read_annotations(args.annotations)
    image_id = args.image_id
    if image_id is None:
        ids = aset.image_ids
        stem = Path(args.image).stem
        if stem in aset:
            image_id = stem
        elif len(ids) == 1:
            image_id = ids[0]
        else:
            raise UsageError("annotations cover several images; pass --image-id")
    info = aset.image(image_id)
    if (info.height, info.width) != raster.shape:
        raise DataError(
            f"image {args.image} is {raster.shape[1]}x{raster.shape[0]} but {image_id!r} is declared "
            f"{info.width}x{info.height}"
        )
    blur = BlurStrength.from_name(args.blur or cfg.blur)
    margin = args.margin if args.margin is not None else cfg.margin_px
    synth = compose_synthetic(raster, aset.get(image_id), blur, margin)
    write_pgm(args.out, synth)
    print(f"wrote {args.out}")
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(exist_ok=True)
    world = make_world(cfg.world, cfg.corruption, seed=cfg.seed)
    frame_ids = list(cfg.frame_ids) or world.image_ids[:1]
    unknown = [i for i in frame_ids if i not in world.images]
    if unknown:
        raise DataError(f"frame_ids: unknown image ids {unknown}")
    state = run_self_training(
        world,
        cfg.detector,
        cfg.fusion,
        cfg.blur_strength,
        cfg.max_epochs,
        cfg.threshold,
        views=cfg.views,
        accept_thr=cfg.accept_thr,
        batch_size=cfg.batch_size,
        margin_px=cfg.margin_px,
        start_epoch=cfg.start_epoch,
        frame_ids=frame_ids,
    )
    write_csv(
        out / "history.csv",
        EpochRecord.FIELDS,
        ([getattr(r, f) for f in EpochRecord.FIELDS] for r in state.history),
    )
    write_annotations(world.weak_labels, out / "labels" / "weak.json")
    write_annotations(world.hidden_gt, out / "labels" / "hidden_gt.json")
    for epoch, labels in sorted(state.snapshots.items()):
        write_annotations(labels, out / "labels" / f"epoch_{epoch:03d}.json")
    t = state.transition_epoch
    for epoch, frames in sorted(state.frames.items()):
        if (epoch - t) % cfg.frame_every:
            continue
        for image_id, raster in sorted(frames.items()):
            write_pgm(out / "frames" / f"{image_id}_epoch_{epoch:03d}.pgm", raster)
    for image_id in frame_ids:
        write_pgm(out / "frames" / f"{image_id}_original.pgm", world.images[image_id])
    summary = {
        "seed": cfg.seed,
        "transition_epoch": t,
        "initial_f1": state.initial_f1,
        "final_f1": state.history[-1].f1,
        "final_phase": state.phase,
        "warnings": state.warnings,
        "config": cfg.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for w in state.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"transition_epoch={'none' if t is None else t} initial_f1={_fmt(state.initial_f1)} "
          f"final_f1={_fmt(state.history[-1].f1)}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 7)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration JSON")

    parser = _Parser(prog="relabel", description="Label correction for noisy object-detection annotations.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("weaklabel", parents=[common], help="classical weak boxes for PGM/PNG images")
    p.add_argument("--image", action="append", required=True, help="input image (repeatable)")
    p.add_argument("--category", choices=CATEGORIES, required=True)
    p.add_argument("--rmin", type=int, default=WeakLabelParams.r_min)
    p.add_argument("--rmax", type=int, default=WeakLabelParams.r_max)
    p.add_argument("--vote-frac", type=float, default=WeakLabelParams.vote_frac)
    p.add_argument("--canny-low", type=float, default=WeakLabelParams.canny_low)
    p.add_argument("--canny-high", type=float, default=WeakLabelParams.canny_high)
    p.add_argument("--blur-kernel", type=int, default=WeakLabelParams.blur_kernel)
    p.add_argument("--min-area", type=int, default=WeakLabelParams.min_area)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weaklabel)

    p = sub.add_parser("fuse", parents=[common], help="TTA + weighted box fusion of per-view predictions")
    p.add_argument("--labels", required=True, help="current labels (defines the images)")
    p.add_argument("--pred-dir", required=True, help="directory of per-view prediction JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--accept-thr", type=float, default=None, help=f"default {DEFAULT_ACCEPT_THR}")
    p.add_argument("--iou-thr", type=float, default=None, help="clustering IoU (default 0.55)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", parents=[common], help="AP50 / AP75 / AP / AR of predictions")
    p.add_argument("--pred", action="append", required=True, help="annotation file to score (repeatable)")
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect-transition", parents=[common], help="first epoch past the learning transition")
    p.add_argument("--csv", required=True, help="CSV of (epoch, value) rows")
    p.add_argument("--threshold", type=float, default=None, help="default 0.9")
    p.set_defaults(func=cmd_detect_transition)

    p = sub.add_parser("synth", parents=[common], help="blur an image and clone the labelled boxes back")
    p.add_argument("--image", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--image-id", help="annotation image id (default: file stem or the only image)")
    p.add_argument("--blur", choices=("weak", "strong"), default=None)
    p.add_argument("--margin", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", parents=[common], help="run the simulated self-training loop")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = with_seed(load_config(getattr(args, "config", None)), getattr(args, "seed", None))
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, DetectorError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
