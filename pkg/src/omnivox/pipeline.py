"""End-to-end label generation pipeline.

A sequence directory contains::

    poses.txt        ego pose per frame (12 floats per line, [R|t])
    boxes.txt        instance box annotations (one line per frame, box)
    grids/NNNNNN.otg forward-facing semantic grids, one per frame

For each frame the pipeline voxelizes boxes into instance labels, runs
static and dynamic completion against the configured history depth,
builds the occlusion and FoV masks, derives the focus field, and writes
``NNNNNN.otg`` / ``NNNNNN.occ.otm`` / ``NNNNNN.fov.otm`` /
``NNNNNN.focus.otf`` plus a ``manifest.txt`` into the output directory.
Outputs are deterministic for identical inputs and config.

``OCCTRACK_THREADS`` caps the worker pool used for the per-frame mask
and focus stages; completion is inherently sequential because each
frame's fill range depends on the previous centered grid.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io as ovio
from .camera import FisheyeCamera
from .completion import (
    FrameLabels,
    InstanceBox,
    assign_orphans,
    complete_dynamic,
    complete_static,
    voxelize_boxes,
)
from .focus import build_focus_field
from .fov import build_fov_mask
from .grid import GridConfig, Pose, VoxelGrid
from .occlusion import build_occlusion_mask

THREADS_ENV = "OCCTRACK_THREADS"


class PipelineError(RuntimeError):
    """Unrecoverable pipeline failure (missing or corrupt inputs)."""


@dataclass
class PipelineConfig:
    grid: GridConfig
    cameras: List[str]
    history_depth: int = 2
    epsilon: float = 1e-6
    stride: int = 16
    stuff_classes: Tuple[int, ...] = ()
    thing_classes: Tuple[int, ...] = ()
    occlusion_origins: str = "ego"
    n_phi: int = 3600
    frame_rate_hz: Optional[float] = None
    source_text: str = field(default="", repr=False)

    def __post_init__(self) -> None:
        if self.history_depth < 0:
            raise ValueError("history_depth must be non-negative")
        if self.occlusion_origins not in ("ego", "cameras"):
            raise ValueError("occlusion_origins must be 'ego' or 'cameras'")
        for cam in self.cameras:
            if not Path(cam).exists():
                raise FileNotFoundError(f"calibration file not found: {cam}")

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text()
        kv = ovio.read_keyvalues(path)
        grid = ovio.read_grid_config(path)

        def scalar(key, cast, default):
            return cast(kv[key][-1]) if key in kv else default

        def int_list(key):
            if key not in kv:
                return ()
            return tuple(int(v) for v in kv[key][-1].split())

        cameras = [str((path.parent / c).resolve()) for c in kv.get("camera", [])]
        return PipelineConfig(
            grid=grid,
            cameras=cameras,
            history_depth=scalar("history_depth", int, 2),
            epsilon=scalar("epsilon", float, 1e-6),
            stride=scalar("stride", int, 16),
            stuff_classes=int_list("stuff_classes"),
            thing_classes=int_list("thing_classes"),
            occlusion_origins=scalar("occlusion_origins", str, "ego"),
            n_phi=scalar("n_phi", int, 3600),
            frame_rate_hz=scalar("frame_rate_hz", float, None),
            source_text=text,
        )

    def config_hash(self) -> str:
        basis = self.source_text or repr(self)
        return hashlib.sha256(basis.encode()).hexdigest()[:16]

    def load_cameras(self) -> List[FisheyeCamera]:
        return [ovio.read_calibration(p) for p in self.cameras]


def _worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def _frame_grid_files(sequence_dir: Path) -> List[Path]:
    grid_dir = sequence_dir / "grids"
    if not grid_dir.is_dir():
        return []
    return sorted(grid_dir.glob("*.otg"))


def validate_inputs(sequence_dir, config: Optional[PipelineConfig] = None) -> List[str]:
    """Check a sequence directory without mutating anything.

    Returns a list of human-readable issues, empty when the directory is
    usable.
    """
    issues: List[str] = []
    sequence_dir = Path(sequence_dir)
    if not sequence_dir.is_dir():
        return [f"sequence directory not found: {sequence_dir}"]
    poses_path = sequence_dir / "poses.txt"
    boxes_path = sequence_dir / "boxes.txt"
    grid_files = _frame_grid_files(sequence_dir)

    n_poses = None
    if not poses_path.exists():
        issues.append("missing poses.txt")
    else:
        try:
            n_poses = len(ovio.read_poses(poses_path))
        except (ovio.FormatError, ValueError) as exc:
            issues.append(f"poses.txt: {exc}")
    if not boxes_path.exists():
        issues.append("missing boxes.txt")
    else:
        try:
            ovio.read_boxes(boxes_path)
        except (ovio.FormatError, ValueError) as exc:
            issues.append(f"boxes.txt: {exc}")
    if not grid_files:
        issues.append("no frame grids found under grids/")
    elif n_poses is not None and n_poses != len(grid_files):
        issues.append(
            f"pose count {n_poses} does not match grid count {len(grid_files)}"
        )
    if config is not None:
        for cam_path in config.cameras:
            try:
                ovio.read_calibration(cam_path)
            except (ovio.FormatError, ValueError, OSError) as exc:
                issues.append(f"calibration {cam_path}: {exc}")
    return issues


def _load_sequence(
    config: PipelineConfig, sequence_dir: Path
) -> Tuple[List[Path], List[Pose], List[InstanceBox]]:
    issues = validate_inputs(sequence_dir, config)
    if issues:
        raise PipelineError("; ".join(issues))
    grid_files = _frame_grid_files(sequence_dir)
    poses = ovio.read_poses(sequence_dir / "poses.txt")
    boxes = ovio.read_boxes(sequence_dir / "boxes.txt")
    return grid_files, poses, boxes


def _sensor_origins(config: PipelineConfig, cameras: Sequence[FisheyeCamera]):
    if config.occlusion_origins == "cameras" and cameras:
        return [cam.center_in_ego() for cam in cameras]
    return [np.zeros(3)]


def run_pipeline(config: PipelineConfig, sequence_dir, out_dir) -> Dict[str, object]:
    """Run every stage over a sequence and write the manifest.

    Returns the manifest as a dict; raises PipelineError on bad inputs.
    """
    sequence_dir = Path(sequence_dir)
    out_dir = Path(out_dir)
    grid_files, poses, boxes = _load_sequence(config, sequence_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cameras = config.load_cameras()
    fov_mask = build_fov_mask(config.grid, cameras) if cameras else None
    origins = _sensor_origins(config, cameras)

    # Sequential completion pass: frame k needs frame k-1's centered grid.
    frames: List[FrameLabels] = []
    for k, grid_file in enumerate(grid_files):
        try:
            semantic = ovio.read_grid(grid_file)
        except ovio.FormatError as exc:
            raise PipelineError(f"frame {k}: {exc}") from exc
        if semantic.config != config.grid:
            raise PipelineError(
                f"frame {k}: grid config of {grid_file.name} differs from pipeline grid"
            )
        panoptic = voxelize_boxes(semantic, boxes, poses[k], k)
        if config.thing_classes:
            panoptic = assign_orphans(panoptic, boxes, k, poses[k], config.thing_classes)
        frame = FrameLabels(k, poses[k], panoptic)
        history = list(reversed(frames[-config.history_depth:])) if config.history_depth else []
        frame.centered_grid = complete_static(frame, history)
        frame.centered_grid = complete_dynamic(frame, history, boxes)
        frames.append(frame)

    def emit(frame: FrameLabels) -> List[str]:
        stem = f"{frame.frame_index:06d}"
        centered = frame.centered_grid
        occ_mask = build_occlusion_mask(centered, origins)
        focus = build_focus_field(centered, config.epsilon)
        ovio.write_grid(out_dir / f"{stem}.otg", centered)
        ovio.write_mask(out_dir / f"{stem}.occ.otm", config.grid, occ_mask.visible)
        if fov_mask is not None:
            ovio.write_mask(out_dir / f"{stem}.fov.otm", config.grid, fov_mask.in_fov)
        ovio.write_field(out_dir / f"{stem}.focus.otf", config.grid, focus.normalized)
        names = [f"{stem}.otg", f"{stem}.occ.otm"]
        if fov_mask is not None:
            names.append(f"{stem}.fov.otm")
        names.append(f"{stem}.focus.otf")
        return names

    outputs: Dict[int, List[str]] = {}
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        for frame, names in zip(frames, pool.map(emit, frames)):
            outputs[frame.frame_index] = names

    manifest_lines = [
        f"config_hash {config.config_hash()}",
        f"frames {len(frames)}",
    ]
    if config.frame_rate_hz is not None:
        manifest_lines.append(f"frame_rate_hz {config.frame_rate_hz:g}")
    for k in sorted(outputs):
        manifest_lines.append(f"frame {k:06d} " + " ".join(outputs[k]))
    (out_dir / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
    return {
        "config_hash": config.config_hash(),
        "frames": len(frames),
        "outputs": outputs,
    }
