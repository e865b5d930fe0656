"""Ego-centered 4D panoptic label construction.

Source annotations are forward-facing: each frame's grid carries labels
only ahead of the ego vehicle. Completion re-centers the ego by pasting
rigidly transformed history behind it, in two passes:

* static voxels (instance id 0) move with the planarized relative ego
  pose alone;
* instance voxels additionally move with the instance's own world-frame
  motion between frames, so a completed object appears at its current
  pose even when it has left the observed region.

Relative ego transforms are planarized (yaw-only rotation, horizontal
translation) because per-frame height annotations drift; a fill-range
mask bounds how far behind the ego history may be pasted, derived from
how deep the previously completed frame reaches once moved into the
current frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .grid import (
    FREE,
    GridConfig,
    Pose,
    VoxelGrid,
    _scatter_labels,
    merge_labels,
    points_to_indices,
    voxel_centers,
)

logger = logging.getLogger(__name__)

# Orphan voxels farther than this normalized Chebyshev distance from
# every candidate box stay unassigned.
ORPHAN_NORM_CUTOFF = 2.0


@dataclass(frozen=True)
class InstanceBox:
    """Oriented box annotation of one object, with per-frame world poses."""

    instance_id: int
    semantic_id: int
    half_extents: np.ndarray
    poses_world: Mapping[int, Pose]

    def __post_init__(self) -> None:
        ext = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(ext <= 0):
            raise ValueError(f"half extents must be positive, got {ext.tolist()}")
        if self.instance_id <= 0:
            raise ValueError("instance id must be positive")
        ext.setflags(write=False)
        object.__setattr__(self, "half_extents", ext)

    def pose_at(self, frame: int) -> Optional[Pose]:
        return self.poses_world.get(frame)


@dataclass
class FrameLabels:
    """One frame of a sequence: ego pose plus forward-facing labels."""

    frame_index: int
    ego_pose_world: Pose
    forward_grid: VoxelGrid
    centered_grid: Optional[VoxelGrid] = None


@dataclass
class FillRange:
    """How far behind the ego history may be pasted."""

    mask: np.ndarray
    max_depth: float


def _ego_centers(grid: VoxelGrid) -> np.ndarray:
    return voxel_centers(grid.config).reshape(-1, 3)


def voxelize_boxes(
    semantic_grid: VoxelGrid,
    boxes: Sequence[InstanceBox],
    ego_pose: Pose,
    frame_index: int,
) -> VoxelGrid:
    """Assign instance ids to voxels whose centers fall inside a box.

    Boxes are matched against voxels of their own semantic class; when
    boxes overlap, the box whose center is nearest wins, with lower
    instance id breaking exact ties.
    """
    sem = semantic_grid.semantics
    inst = np.array(semantic_grid.instances)
    centers = voxel_centers(semantic_grid.config)
    best = np.full(semantic_grid.config.dims, np.inf)
    ego_inv = ego_pose.inverse()
    for box in sorted(boxes, key=lambda b: b.instance_id):
        pose = box.pose_at(frame_index)
        if pose is None:
            continue
        box_in_ego = ego_inv.compose(pose)
        cls_mask = sem == box.semantic_id
        if not cls_mask.any():
            continue
        local = box_in_ego.inverse().apply(centers[cls_mask])
        inside = np.all(np.abs(local) <= box.half_extents, axis=-1)
        if not inside.any():
            continue
        dist = np.linalg.norm(centers[cls_mask] - box_in_ego.translation, axis=-1)
        take = inside & (dist < best[cls_mask])
        sel = np.zeros(semantic_grid.config.dims, dtype=bool)
        sel[cls_mask] = take
        inst[sel] = box.instance_id
        upd = best[cls_mask]
        upd[take] = dist[take]
        best[cls_mask] = upd
    return VoxelGrid(semantic_grid.config, sem, inst)


def assign_orphans(
    panoptic_grid: VoxelGrid,
    boxes: Sequence[InstanceBox],
    frame_index: int,
    ego_pose: Pose,
    thing_classes: Sequence[int],
) -> VoxelGrid:
    """Attach left-over thing voxels to the box they are most inside of.

    Each unassigned thing-class voxel is expressed in every same-class
    box's local frame, scaled by the half extents; the box minimizing
    the Chebyshev norm of that normalized coordinate wins. Voxels with
    norm above ORPHAN_NORM_CUTOFF for every candidate stay unassigned.
    """
    sem = panoptic_grid.semantics
    inst = np.array(panoptic_grid.instances)
    things = np.isin(sem, np.asarray(list(thing_classes), dtype=np.uint16))
    orphan = things & (inst == 0)
    if not orphan.any():
        return panoptic_grid
    centers = voxel_centers(panoptic_grid.config)[orphan]
    orphan_sem = sem[orphan]
    best_norm = np.full(len(centers), np.inf)
    best_id = np.zeros(len(centers), dtype=np.uint32)
    ego_inv = ego_pose.inverse()
    for box in sorted(boxes, key=lambda b: b.instance_id):
        pose = box.pose_at(frame_index)
        if pose is None:
            continue
        cand = orphan_sem == box.semantic_id
        if not cand.any():
            continue
        box_in_ego = ego_inv.compose(pose)
        local = box_in_ego.inverse().apply(centers[cand]) / box.half_extents
        norm = np.abs(local).max(axis=-1)
        take = norm < best_norm[cand]
        upd_norm = best_norm[cand]
        upd_id = best_id[cand]
        upd_norm[take] = norm[take]
        upd_id[take] = box.instance_id
        best_norm[cand] = upd_norm
        best_id[cand] = upd_id
    assigned = best_norm <= ORPHAN_NORM_CUTOFF
    new_ids = np.where(assigned, best_id, 0).astype(np.uint32)
    inst[orphan] = new_ids
    return VoxelGrid(panoptic_grid.config, sem, inst)


def planarize_transform(pose: Pose) -> Pose:
    """Project a rigid transform onto the horizontal plane.

    The vertical translation is zeroed and the rotation is replaced by
    the nearest (Frobenius) rotation about the z axis, obtained from the
    SVD of the horizontal 2x2 block with determinant correction.
    """
    block = pose.rotation[:2, :2]
    u, s, vt = np.linalg.svd(block)
    if np.all(s < 1e-9):
        raise ValueError("horizontal rotation block is degenerate")
    r2 = u @ vt
    if np.linalg.det(r2) < 0:
        r2 = u @ np.diag([1.0, -1.0]) @ vt
    rot = np.eye(3)
    rot[:2, :2] = r2
    trans = np.array([pose.translation[0], pose.translation[1], 0.0])
    return Pose(rot, trans)


def compute_fill_range(
    prev_centered: Optional[VoxelGrid], relative_pose: Pose, config: GridConfig
) -> FillRange:
    """Backward fill bound from the previous frame's content.

    Occupied voxels of ``prev_centered`` are moved into the current
    frame by ``relative_pose``; the deepest one behind the ego (largest
    -x, clipped to the grid) sets ``max_depth``. The mask admits every
    voxel whose backward depth is at most that.
    """
    max_depth = 0.0
    if prev_centered is not None:
        occ = prev_centered.occupied()
        if occ.any():
            centers = voxel_centers(prev_centered.config)[occ]
            moved = relative_pose.apply(centers)
            max_depth = max(0.0, float((-moved[:, 0]).max()))
    max_depth = min(max_depth, -float(config.extent_min[0]))
    centers_x = voxel_centers(config)[..., 0]
    mask = -centers_x <= max_depth
    return FillRange(mask, max_depth)


def _transform_subset(
    src: VoxelGrid,
    select: np.ndarray,
    pose: Pose,
    dst_config: GridConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Move selected voxels of one grid; returns scatter results plus the
    maximum forward coordinate reached (or -inf when nothing selected)."""
    if not select.any():
        return (
            np.zeros((0, 3), dtype=np.int64),
            np.zeros(0, dtype=np.uint16),
            np.zeros(0, dtype=np.uint32),
            -np.inf,
        )
    idx = np.argwhere(select)
    centers = np.asarray(src.config.extent_min) + (idx + 0.5) * np.asarray(
        src.config.voxel_size
    )
    moved = pose.apply(centers)
    nx, ny, _ = src.config.dims
    src_lin = idx[:, 0] + nx * (idx[:, 1] + ny * idx[:, 2])
    widx, wsem, winst = _scatter_labels(
        dst_config, moved, src.semantics[select], src.instances[select], src_lin
    )
    return widx, wsem, winst, float(moved[:, 0].max())


def _relative_ego(current: FrameLabels, past: FrameLabels) -> Pose:
    return current.ego_pose_world.inverse().compose(past.ego_pose_world)


def _history_fill_range(
    current: FrameLabels, history: Sequence[FrameLabels]
) -> FillRange:
    config = current.forward_grid.config
    if not history:
        return compute_fill_range(None, Pose.identity(), config)
    prev = history[0]
    prev_grid = prev.centered_grid if prev.centered_grid is not None else prev.forward_grid
    rel = planarize_transform(_relative_ego(current, prev))
    return compute_fill_range(prev_grid, rel, config)


def complete_static(current: FrameLabels, history: Sequence[FrameLabels]) -> VoxelGrid:
    """Paste planarized-transform history of static voxels behind the ego.

    ``history`` is ordered most-recent-first; merging never overwrites
    occupied cells, so the current frame wins, then more recent history.
    Accumulation stops at the first frame whose transformed content lies
    entirely behind the grid's rear boundary.
    """
    config = current.forward_grid.config
    out_sem = np.array(current.forward_grid.semantics)
    out_inst = np.array(current.forward_grid.instances)
    fill = _history_fill_range(current, history)
    for past in history:
        rel = planarize_transform(_relative_ego(current, past))
        static = past.forward_grid.occupied() & (past.forward_grid.instances == 0)
        widx, wsem, winst, max_x = _transform_subset(
            past.forward_grid, static & fill.mask, rel, config
        )
        if max_x < config.extent_min[0]:
            break
        merge_labels(out_sem, out_inst, widx, wsem, winst)
    return VoxelGrid(config, out_sem, out_inst)


def complete_dynamic(
    current: FrameLabels,
    history: Sequence[FrameLabels],
    instances: Sequence[InstanceBox],
) -> VoxelGrid:
    """Paste instance voxels from history at their current-frame poses.

    Each instance's voxels move by its own world motion between the two
    frames, conjugated into ego coordinates, followed by the planarized
    relative ego transform. Instance ids are preserved. A missing pose
    at either frame skips that (instance, frame) pair with a warning.
    """
    config = current.forward_grid.config
    base = current.centered_grid if current.centered_grid is not None else current.forward_grid
    out_sem = np.array(base.semantics)
    out_inst = np.array(base.instances)
    fill = _history_fill_range(current, history)
    f0 = current.frame_index
    for past in history:
        rel = planarize_transform(_relative_ego(current, past))
        ego_past_inv = past.ego_pose_world.inverse()
        for box in sorted(instances, key=lambda b: b.instance_id):
            sel = (
                (past.forward_grid.instances == box.instance_id)
                & (past.forward_grid.semantics == box.semantic_id)
                & fill.mask
            )
            if not sel.any():
                continue
            pose_now = box.pose_at(f0)
            pose_then = box.pose_at(past.frame_index)
            if pose_now is None or pose_then is None:
                logger.warning(
                    "instance %d missing pose at frame %d or %d; skipped",
                    box.instance_id,
                    f0,
                    past.frame_index,
                )
                continue
            # Instance motion in the past ego frame, then the ego transform.
            motion = ego_past_inv.compose(pose_now).compose(
                pose_then.inverse()
            ).compose(past.ego_pose_world)
            full = rel.compose(motion)
            widx, wsem, winst, _ = _transform_subset(past.forward_grid, sel, full, config)
            merge_labels(out_sem, out_inst, widx, wsem, winst)
    return VoxelGrid(config, out_sem, out_inst)


def complete_frame(
    current: FrameLabels,
    history: Sequence[FrameLabels],
    instances: Sequence[InstanceBox],
) -> VoxelGrid:
    """Static pass followed by the dynamic pass."""
    current.centered_grid = complete_static(current, history)
    current.centered_grid = complete_dynamic(current, history, instances)
    return current.centered_grid
