"""Panoptic occupancy tracking metrics over visibility-masked sequences.

Segmentation quality is per-class voxel IoU accumulated over all frames
of a sequence. Association quality treats every (class, instance id)
pair as a track, the set of its (frame, voxel) elements: for a ground
truth track g,

    AQ(g) = (1 / |g|) * sum over overlapping predicted tracks p of
            |p intersect g| * IoU(p, g)

with track IoU computed over the full tracks. Class AQ averages over
that class's ground-truth tracks, and the headline score is the
geometric mean of the segmentation and association overall means.

All counts are restricted to the ground truth's combined visibility
mask (occlusion AND field of view), and unknown-labeled ground truth
voxels are excluded entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fov import FovMask
from .grid import UNKNOWN, GridConfig, VoxelGrid
from .occlusion import OcclusionMask


@dataclass
class SequenceFrame:
    """One evaluated frame: panoptic grid plus its visibility masks."""

    grid: VoxelGrid
    occlusion: OcclusionMask
    fov: FovMask


@dataclass
class TrackedSequence:
    """Frames sharing one grid config, the unit of metric evaluation."""

    frames: List[SequenceFrame]

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("sequence must contain at least one frame")
        config = self.frames[0].grid.config
        for f in self.frames:
            if f.grid.config != config or f.occlusion.config != config or f.fov.config != config:
                raise ValueError("all frames and masks must share one grid config")

    @property
    def config(self) -> GridConfig:
        return self.frames[0].grid.config

    @staticmethod
    def from_grids(grids: Sequence[VoxelGrid]) -> "TrackedSequence":
        """Wrap grids with all-true masks (no visibility filtering)."""
        return TrackedSequence(
            [
                SequenceFrame(
                    g,
                    OcclusionMask.all_true(g.config),
                    FovMask.all_true(g.config),
                )
                for g in grids
            ]
        )


@dataclass
class MetricReport:
    sq_per_class: Dict[int, float]
    sq_overall: float
    aq_per_class: Dict[int, float]
    aq_overall: float
    stq: float = field(init=False)

    def __post_init__(self) -> None:
        self.stq = occ_stq(self.sq_overall, self.aq_overall)


def eval_mask(frame: SequenceFrame) -> np.ndarray:
    """Combined visibility: occlusion AND field of view."""
    return frame.occlusion.visible & frame.fov.in_fov


def _check_aligned(pred: TrackedSequence, gt: TrackedSequence) -> None:
    if len(pred.frames) != len(gt.frames):
        raise ValueError(
            f"frame counts differ: {len(pred.frames)} vs {len(gt.frames)}"
        )
    if pred.config != gt.config:
        raise ValueError("prediction and ground truth grid configs differ")


def occ_sq(
    pred: TrackedSequence, gt: TrackedSequence, classes: Sequence[int]
) -> Tuple[Dict[int, float], float]:
    """Per-class IoU over all frames, and the unweighted mean.

    Only classes present in the (masked) ground truth enter the mean.
    """
    _check_aligned(pred, gt)
    cls = sorted(set(int(c) for c in classes))
    tp = {c: 0 for c in cls}
    fp = {c: 0 for c in cls}
    fn = {c: 0 for c in cls}
    for pf, gf in zip(pred.frames, gt.frames):
        valid = eval_mask(gf) & (gf.grid.semantics != UNKNOWN)
        ps = pf.grid.semantics[valid]
        gs = gf.grid.semantics[valid]
        for c in cls:
            pm = ps == c
            gm = gs == c
            tp[c] += int(np.count_nonzero(pm & gm))
            fp[c] += int(np.count_nonzero(pm & ~gm))
            fn[c] += int(np.count_nonzero(~pm & gm))
    per_class: Dict[int, float] = {}
    for c in cls:
        if tp[c] + fn[c] == 0:
            continue
        denom = tp[c] + fp[c] + fn[c]
        per_class[c] = tp[c] / denom if denom else 0.0
    overall = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, overall


def _track_key(sem: np.ndarray, inst: np.ndarray) -> np.ndarray:
    return (sem.astype(np.int64) << 32) | inst.astype(np.int64)


def occ_aq(
    pred: TrackedSequence, gt: TrackedSequence, thing_classes: Sequence[int]
) -> Tuple[Dict[int, float], float]:
    """Association quality per thing class, and the unweighted mean."""
    _check_aligned(pred, gt)
    things = np.asarray(sorted(set(int(c) for c in thing_classes)), dtype=np.uint16)

    gt_sizes: Dict[int, int] = {}
    pred_sizes: Dict[int, int] = {}
    overlaps: Dict[Tuple[int, int], int] = {}
    for pf, gf in zip(pred.frames, gt.frames):
        valid = eval_mask(gf) & (gf.grid.semantics != UNKNOWN)
        g_inst = gf.grid.instances
        p_inst = pf.grid.instances
        g_track = valid & (g_inst > 0) & np.isin(gf.grid.semantics, things)
        p_track = valid & (p_inst > 0)
        if g_track.any():
            keys = _track_key(gf.grid.semantics[g_track], g_inst[g_track])
            uk, cnt = np.unique(keys, return_counts=True)
            for k, c in zip(uk.tolist(), cnt.tolist()):
                gt_sizes[k] = gt_sizes.get(k, 0) + c
        if p_track.any():
            keys = _track_key(pf.grid.semantics[p_track], p_inst[p_track])
            uk, cnt = np.unique(keys, return_counts=True)
            for k, c in zip(uk.tolist(), cnt.tolist()):
                pred_sizes[k] = pred_sizes.get(k, 0) + c
        both = g_track & p_track
        if both.any():
            gk = _track_key(gf.grid.semantics[both], g_inst[both])
            pk = _track_key(pf.grid.semantics[both], p_inst[both])
            pair = np.stack([gk, pk], axis=1)
            up, cnt = np.unique(pair, axis=0, return_counts=True)
            for (g, p), c in zip(up.tolist(), cnt.tolist()):
                overlaps[(g, p)] = overlaps.get((g, p), 0) + c

    per_gt_track: Dict[int, float] = {k: 0.0 for k in gt_sizes}
    for (gk, pk), inter in overlaps.items():
        union = gt_sizes[gk] + pred_sizes[pk] - inter
        per_gt_track[gk] += inter * (inter / union)

    per_class: Dict[int, float] = {}
    for c in things.tolist():
        tracks = [k for k in gt_sizes if (k >> 32) == c]
        if not tracks:
            continue
        per_class[c] = sum(per_gt_track[k] / gt_sizes[k] for k in tracks) / len(tracks)
    overall = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, overall


def occ_stq(sq_overall: float, aq_overall: float) -> float:
    """Geometric mean of the two overall scores."""
    return math.sqrt(sq_overall * aq_overall)


def evaluate_sequences(
    pred: TrackedSequence,
    gt: TrackedSequence,
    stuff_classes: Sequence[int],
    thing_classes: Sequence[int],
) -> MetricReport:
    sq_pc, sq = occ_sq(pred, gt, stuff_classes)
    aq_pc, aq = occ_aq(pred, gt, thing_classes)
    return MetricReport(sq_pc, sq, aq_pc, aq)
