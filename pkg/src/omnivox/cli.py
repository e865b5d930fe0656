"""Command-line interface.

Every pipeline stage is runnable standalone, with the same outputs it
produces inside ``run``. All paths are explicit flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import io as ovio
from .completion import FrameLabels, assign_orphans, complete_dynamic, complete_static, voxelize_boxes
from .focus import DIRECTIONS, build_focus_field
from .fov import FovMask, build_fov_mask
from .grid import VoxelGrid
from .lift import DepthBins, build_frustum
from .metrics import SequenceFrame, TrackedSequence, evaluate_sequences
from .occlusion import OcclusionMask, build_occlusion_mask
from .pipeline import PipelineConfig, PipelineError, run_pipeline, validate_inputs


def _cmd_fov_mask(args) -> int:
    calib_dir = Path(args.calib)
    cameras = [ovio.read_calibration(p) for p in sorted(calib_dir.glob("*.txt"))]
    if not cameras:
        print(f"no calibration files (*.txt) in {calib_dir}", file=sys.stderr)
        return 1
    config = ovio.read_grid_config(args.grid)
    mask = build_fov_mask(config, cameras, method=args.method, n_phi=args.n_phi)
    ovio.write_mask(args.out, config, mask.in_fov)
    print(f"wrote {args.out}: {int(mask.in_fov.sum())}/{config.n_voxels} voxels in FoV")
    return 0


def _cmd_occ_mask(args) -> int:
    grid = ovio.read_grid(args.grid)
    origins = [p.translation for p in ovio.read_poses(args.origins)]
    mask = build_occlusion_mask(grid, origins)
    ovio.write_mask(args.out, grid.config, mask.visible)
    print(
        f"wrote {args.out}: {int(mask.visible.sum())}/{grid.config.n_voxels} voxels visible"
    )
    return 0


def _cmd_complete(args) -> int:
    seq = Path(args.seq)
    issues = validate_inputs(seq)
    if issues:
        for issue in issues:
            print(issue, file=sys.stderr)
        return 1
    poses = ovio.read_poses(seq / "poses.txt")
    boxes = ovio.read_boxes(seq / "boxes.txt")
    grid_files = sorted((seq / "grids").glob("*.otg"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames: List[FrameLabels] = []
    for k, path in enumerate(grid_files):
        semantic = ovio.read_grid(path)
        panoptic = voxelize_boxes(semantic, boxes, poses[k], k)
        if args.thing_classes:
            panoptic = assign_orphans(panoptic, boxes, k, poses[k], args.thing_classes)
        frame = FrameLabels(k, poses[k], panoptic)
        history = list(reversed(frames[-args.history:])) if args.history else []
        frame.centered_grid = complete_static(frame, history)
        frame.centered_grid = complete_dynamic(frame, history, boxes)
        frames.append(frame)
        ovio.write_grid(out_dir / f"{k:06d}.otg", frame.centered_grid)
    print(f"wrote {len(frames)} centered grids to {out_dir}")
    return 0


def _cmd_focus(args) -> int:
    grid = ovio.read_grid(args.grid)
    field = build_focus_field(grid, args.epsilon)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ovio.write_field(out_dir / "focus.otf", grid.config, field.normalized)
    written = ["focus.otf"]
    if args.offsets:
        from .focus import directional_offsets

        offsets = directional_offsets(grid)
        for name in DIRECTIONS:
            fname = f"offset_{name.replace('+', 'p').replace('-', 'm')}.otf"
            ovio.write_field(out_dir / fname, grid.config, offsets[name].values)
            written.append(fname)
    print(f"wrote {', '.join(written)} to {out_dir}")
    return 0


def _cmd_lift(args) -> int:
    camera = ovio.read_calibration(args.calib)
    depths = [
        float(line.split()[0])
        for line in Path(args.bins).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    table = build_frustum(camera.intrinsics, DepthBins(depths), args.stride)
    ovio.write_frustum_table(args.out, table.points, table.valid, table.bins.edges)
    print(
        f"wrote {args.out}: {table.rows}x{table.cols} pixels x {len(table.bins)} bins"
    )
    return 0


def _load_eval_dir(path: Path, with_masks: bool) -> TrackedSequence:
    grid_files = sorted(path.glob("*.otg"))
    if not grid_files:
        raise FileNotFoundError(f"no .otg grids in {path}")
    frames = []
    for gf in grid_files:
        grid = ovio.read_grid(gf)
        occ = OcclusionMask.all_true(grid.config)
        fov = FovMask.all_true(grid.config)
        if with_masks:
            occ_path = gf.with_suffix(".occ.otm")
            fov_path = gf.with_suffix(".fov.otm")
            if occ_path.exists():
                _, bits = ovio.read_mask(occ_path)
                occ = OcclusionMask(grid.config, bits)
            if fov_path.exists():
                _, bits = ovio.read_mask(fov_path)
                fov = FovMask(grid.config, bits)
        frames.append(SequenceFrame(grid, occ, fov))
    return TrackedSequence(frames)


def _cmd_eval(args) -> int:
    classes = ovio.read_keyvalues(args.classes)
    stuff = [int(v) for v in classes.get("stuff_classes", [""])[-1].split()]
    thing = [int(v) for v in classes.get("thing_classes", [""])[-1].split()]
    pred = _load_eval_dir(Path(args.pred), with_masks=False)
    gt = _load_eval_dir(Path(args.gt), with_masks=True)
    report = evaluate_sequences(pred, gt, stuff, thing)
    flat: Dict[str, float] = {
        "occ_sq_overall": report.sq_overall,
        "occ_aq_overall": report.aq_overall,
        "occ_stq": report.stq,
    }
    for c, v in sorted(report.sq_per_class.items()):
        flat[f"occ_sq_class_{c}"] = v
    for c, v in sorted(report.aq_per_class.items()):
        flat[f"occ_aq_class_{c}"] = v
    rounded = {k: round(v, 4) for k, v in flat.items()}
    Path(args.report).write_text(json.dumps(rounded, indent=2, sort_keys=True) + "\n")
    print(
        f"occ_sq={report.sq_overall:.4f} occ_aq={report.aq_overall:.4f} "
        f"occ_stq={report.stq:.4f} -> {args.report}"
    )
    return 0


def _cmd_run(args) -> int:
    config = PipelineConfig.from_file(args.config)
    try:
        manifest = run_pipeline(config, args.seq, args.out)
    except PipelineError as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        return 1
    print(f"completed {manifest['frames']} frames -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    config = PipelineConfig.from_file(args.config) if args.config else None
    issues = validate_inputs(args.seq, config)
    if issues:
        for issue in issues:
            print(issue)
        return 1
    print("ok")
    return 0


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omnivox",
        description="Fisheye voxel perception toolkit: masks, completion, "
        "focus fields, lifting tables, and tracking metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fov-mask", help="build a fisheye FoV voxel mask")
    p.add_argument("--calib", required=True, help="directory of calibration files")
    p.add_argument("--grid", required=True, help="grid config file")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("pervoxel", "sweep"), default="pervoxel")
    p.add_argument("--n-phi", type=int, default=3600)
    p.set_defaults(func=_cmd_fov_mask)

    p = sub.add_parser("occ-mask", help="build an all-direction occlusion mask")
    p.add_argument("--grid", required=True, help="occupancy grid (.otg)")
    p.add_argument("--origins", required=True, help="pose file; translations are ray origins")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_occ_mask)

    p = sub.add_parser("complete", help="build ego-centered panoptic grids")
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument("--history", type=int, default=2, metavar="N")
    p.add_argument("--out", required=True)
    p.add_argument("--thing-classes", type=_int_list, default=[], metavar="IDS")
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("focus", help="generate center-focus supervision fields")
    p.add_argument("--grid", required=True, help="panoptic grid (.otg)")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--offsets", action="store_true", help="also write the six offset fields")
    p.set_defaults(func=_cmd_focus)

    p = sub.add_parser("lift", help="build a spherical lifting table")
    p.add_argument("--calib", required=True, help="calibration file")
    p.add_argument("--bins", required=True, help="depth bin file, one depth per line")
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("eval", help="evaluate tracking metrics")
    p.add_argument("--pred", required=True, help="directory with predicted grids")
    p.add_argument("--gt", required=True, help="directory with ground truth grids and masks")
    p.add_argument("--classes", required=True, help="class partition config file")
    p.add_argument("--report", required=True, help="output report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline over a sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check sequence inputs without writing")
    p.add_argument("--seq", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
