from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnivox.fov import FovMask
from omnivox.grid import GridConfig, VoxelGrid
from omnivox.metrics import (
    MetricReport,
    SequenceFrame,
    TrackedSequence,
    eval_mask,
    evaluate_sequences,
    occ_aq,
    occ_sq,
    occ_stq,
)
from omnivox.occlusion import OcclusionMask

from conftest import grid_with


@pytest.fixture
def cfg():
    return GridConfig((0, 0, 0), (4, 4, 4), (1, 1, 1))


def seq(cfg, grids):
    return TrackedSequence.from_grids(grids)


def masked_frame(grid, occlusion=None, fov=None):
    occ = OcclusionMask(grid.config, occlusion) if occlusion is not None else OcclusionMask.all_true(grid.config)
    f = FovMask(grid.config, fov) if fov is not None else FovMask.all_true(grid.config)
    return SequenceFrame(grid, occ, f)


class TestEvalMask:
    def test_all_true(self, cfg):
        frame = masked_frame(VoxelGrid.empty(cfg))
        assert eval_mask(frame).all()

    def test_disjoint_masks_empty(self, cfg):
        half = np.zeros(cfg.dims, bool)
        half[:2] = True
        frame = masked_frame(VoxelGrid.empty(cfg), occlusion=half, fov=~half)
        assert not eval_mask(frame).any()

    def test_elementwise_and(self, cfg):
        rng = np.random.default_rng(3)
        a = rng.random(cfg.dims) < 0.5
        b = rng.random(cfg.dims) < 0.5
        frame = masked_frame(VoxelGrid.empty(cfg), occlusion=a, fov=b)
        assert np.array_equal(eval_mask(frame), a & b)


class TestOccSq:
    def test_perfect_prediction(self, cfg):
        rng = np.random.default_rng(5)
        sem = rng.integers(0, 4, cfg.dims).astype(np.uint16)
        g = VoxelGrid(cfg, sem, np.zeros(cfg.dims, np.uint32))
        per, overall = occ_sq(seq(cfg, [g]), seq(cfg, [g]), [1, 2, 3])
        assert overall == 1.0
        assert all(v == 1.0 for v in per.values())

    def test_disjoint_classes_zero(self, cfg):
        ga = grid_with(cfg, {(i, j, 0): 1 for i in range(4) for j in range(4)})
        gb = grid_with(cfg, {(i, j, 0): 2 for i in range(4) for j in range(4)})
        per, overall = occ_sq(seq(cfg, [ga]), seq(cfg, [gb]), [1, 2])
        # class 1 absent from gt -> excluded; class 2 fully missed -> 0
        assert per == {2: 0.0}
        assert overall == 0.0

    def test_hand_counted_iou(self, cfg):
        # 8 TP, 4 FP, 4 FN for class 1 -> IoU 8 / 16 = 0.5
        gt_cells = {(i, j, 0): 1 for i in range(3) for j in range(4)}  # 12 voxels
        pred_cells = {(i, j, 0): 1 for i in range(3) for j in range(4)}
        # remove 4 from pred (FN), add 4 elsewhere (FP), keep 8 common
        for j in range(4):
            del pred_cells[(1, j, 0)]
            pred_cells[(3, j, 0)] = 1
        gt = grid_with(cfg, gt_cells)
        pred = grid_with(cfg, pred_cells)
        per, overall = occ_sq(seq(cfg, [pred]), seq(cfg, [gt]), [1])
        assert per[1] == pytest.approx(0.5)
        assert overall == pytest.approx(0.5)

    def test_mask_restricts_counts(self, cfg):
        gt = grid_with(cfg, {(0, 0, 0): 1, (3, 3, 3): 1})
        pred = grid_with(cfg, {(0, 0, 0): 1})
        vis = np.zeros(cfg.dims, bool)
        vis[0, 0, 0] = True
        gt_seq = TrackedSequence([masked_frame(gt, occlusion=vis)])
        per, overall = occ_sq(seq(cfg, [pred]), gt_seq, [1])
        # the missed voxel is invisible, so no FN is counted
        assert per[1] == 1.0

    def test_unknown_excluded(self, cfg):
        gt = grid_with(cfg, {(0, 0, 0): 1, (1, 0, 0): 255})
        pred = grid_with(cfg, {(0, 0, 0): 1, (1, 0, 0): 2})
        per, overall = occ_sq(seq(cfg, [pred]), seq(cfg, [gt]), [1, 2])
        assert per == {1: 1.0}

    def test_shape_mismatch_raises(self, cfg):
        other = GridConfig((0, 0, 0), (2, 2, 2), (1, 1, 1))
        with pytest.raises(ValueError):
            occ_sq(seq(cfg, [VoxelGrid.empty(cfg)]), seq(other, [VoxelGrid.empty(other)]), [1])

    def test_frame_count_mismatch_raises(self, cfg):
        g = VoxelGrid.empty(cfg)
        with pytest.raises(ValueError):
            occ_sq(seq(cfg, [g]), seq(cfg, [g, g]), [1])


def two_frame_tracks(cfg, pred_ids):
    """gt: one 8-voxel track over two frames; pred ids given per frame."""
    gt_frames, pred_frames = [], []
    for k, pid in enumerate(pred_ids):
        cells_gt = {(i, j, 0): (1, 1) for i in range(2) for j in range(4)}
        cells_pred = {(i, j, 0): (1, pid) for i in range(2) for j in range(4)}
        gt_frames.append(grid_with(cfg, cells_gt))
        pred_frames.append(grid_with(cfg, cells_pred))
    return seq(cfg, pred_frames), seq(cfg, gt_frames)


class TestOccAq:
    def test_identical_tracks(self, cfg):
        pred, gt = two_frame_tracks(cfg, [5, 5])
        per, overall = occ_aq(pred, gt, [1])
        assert per[1] == pytest.approx(1.0)
        assert overall == pytest.approx(1.0)

    def test_id_switch_halves_quality(self, cfg):
        # one gt track; prediction alternates two ids, each covering half
        # the track with perfect per-frame overlap:
        # AQ = (8 * 0.5 + 8 * 0.5) / 16 = 0.5
        pred, gt = two_frame_tracks(cfg, [5, 9])
        per, overall = occ_aq(pred, gt, [1])
        assert per[1] == pytest.approx(0.5)
        assert overall == pytest.approx(0.5)

    def test_no_prediction_zero(self, cfg):
        _, gt = two_frame_tracks(cfg, [5, 5])
        empty = seq(cfg, [VoxelGrid.empty(cfg), VoxelGrid.empty(cfg)])
        per, overall = occ_aq(empty, gt, [1])
        assert per[1] == 0.0
        assert overall == 0.0

    def test_permutation_invariance(self, cfg):
        rng = np.random.default_rng(11)
        gt_frames, pred_frames, relabeled_frames = [], [], []
        mapping = {1: 17, 2: 3, 3: 99, 4: 8}
        for _ in range(3):
            sem = (rng.random(cfg.dims) < 0.6).astype(np.uint16)
            gt_inst = np.where(sem > 0, rng.integers(1, 5, cfg.dims), 0).astype(np.uint32)
            pred_inst = np.where(sem > 0, rng.integers(1, 5, cfg.dims), 0).astype(np.uint32)
            relabeled = np.vectorize(lambda v: mapping.get(v, 0))(pred_inst).astype(np.uint32)
            gt_frames.append(VoxelGrid(cfg, sem, gt_inst))
            pred_frames.append(VoxelGrid(cfg, sem, pred_inst))
            relabeled_frames.append(VoxelGrid(cfg, sem, relabeled))
        base = occ_aq(seq(cfg, pred_frames), seq(cfg, gt_frames), [1])
        perm = occ_aq(seq(cfg, relabeled_frames), seq(cfg, gt_frames), [1])
        assert base[1] == pytest.approx(perm[1], abs=1e-12)

    def test_fragment_sizes_weigh_in(self, cfg):
        # pred covers 6 of 8 voxels with one id each frame: per-frame
        # intersect 6, pred track size 12, gt 16 -> AQ = 2*6*(6/ (16+... ))
        gt_cells = {(i, j, 0): (1, 1) for i in range(2) for j in range(4)}
        pred_cells = {(i, j, 0): (1, 4) for i in range(2) for j in range(3)}
        pred, gt = (
            seq(cfg, [grid_with(cfg, pred_cells)] * 2),
            seq(cfg, [grid_with(cfg, gt_cells)] * 2),
        )
        per, _ = occ_aq(pred, gt, [1])
        inter, p_size, g_size = 12, 12, 16
        expected = inter * (inter / (p_size + g_size - inter)) / g_size
        assert per[1] == pytest.approx(expected)


class TestStqAndReport:
    def test_perfect(self):
        assert occ_stq(1.0, 1.0) == 1.0

    def test_square_root(self):
        assert occ_stq(0.25, 1.0) == pytest.approx(0.5)

    def test_published_baseline_row(self):
        # overall scores 29.4 / 13.5 reconstruct the reported 20.0
        assert occ_stq(0.294, 0.135) == pytest.approx(0.1992, abs=1e-4)

    def test_report_consistency(self, cfg):
        g = grid_with(cfg, {(0, 0, 0): (1, 1), (1, 1, 1): 2})
        report = evaluate_sequences(seq(cfg, [g]), seq(cfg, [g]), [2], [1])
        assert report.stq == pytest.approx(math.sqrt(report.sq_overall * report.aq_overall), abs=1e-12)
        assert 0.0 <= report.stq <= 1.0

    @given(sq=st.floats(0.0, 1.0), aq=st.floats(0.0, 1.0))
    def test_stq_within_bounds(self, sq, aq):
        v = occ_stq(sq, aq)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(math.sqrt(sq * aq), abs=1e-12)


class TestMaskMonotonicity:
    def test_shrinking_mask_never_increases_tp(self, cfg):
        rng = np.random.default_rng(13)
        sem = rng.integers(0, 3, cfg.dims).astype(np.uint16)
        g = VoxelGrid(cfg, sem, np.zeros(cfg.dims, np.uint32))
        full = TrackedSequence([masked_frame(g)])
        half_mask = np.zeros(cfg.dims, bool)
        half_mask[:2] = True
        half = TrackedSequence([masked_frame(g, occlusion=half_mask)])
        pred = seq(cfg, [g])
        per_full, _ = occ_sq(pred, full, [1, 2])
        per_half, _ = occ_sq(pred, half, [1, 2])
        # with identical pred, IoU stays 1 but the masked counts shrink;
        # assert via raw TP by comparing against a wrong prediction
        wrong = VoxelGrid(cfg, np.roll(sem, 1, axis=0), np.zeros(cfg.dims, np.uint32))
        for c in (1, 2):
            tp_full = int(((sem == c) & (np.roll(sem, 1, axis=0) == c)).sum())
            tp_half = int(((sem == c) & (np.roll(sem, 1, axis=0) == c) & half_mask).sum())
            assert tp_half <= tp_full
