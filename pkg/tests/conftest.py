from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from omnivox.camera import FisheyeCamera, FisheyeIntrinsics
from omnivox.grid import GridConfig, Pose, VoxelGrid


@pytest.fixture
def unit_config() -> GridConfig:
    return GridConfig((-8.0, -8.0, 0.0), (8.0, 8.0, 4.0), (1.0, 1.0, 1.0))


@pytest.fixture
def small_config() -> GridConfig:
    return GridConfig((-1.6, -1.6, -0.8), (1.6, 1.6, 0.8), (0.2, 0.2, 0.2))


@pytest.fixture
def plain_intrinsics() -> FisheyeIntrinsics:
    return FisheyeIntrinsics(
        xi=2.0, gamma1=400.0, gamma2=400.0, u0=352.0, v0=352.0, width=704, height=704
    )


@pytest.fixture
def distorted_intrinsics() -> FisheyeIntrinsics:
    return FisheyeIntrinsics(
        xi=1.5,
        gamma1=420.0,
        gamma2=410.0,
        u0=350.0,
        v0=356.0,
        width=704,
        height=704,
        k1=0.03,
        k2=-0.01,
        p1=1e-4,
        p2=-2e-4,
    )


def forward_camera(intr: FisheyeIntrinsics) -> FisheyeCamera:
    """Camera looking along ego +x (camera z forward, x right, y down)."""
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return FisheyeCamera(intr, Pose(rot, np.zeros(3)))


def backward_camera(intr: FisheyeIntrinsics) -> FisheyeCamera:
    """Camera looking along ego -x."""
    rot = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return FisheyeCamera(intr, Pose(rot, np.zeros(3)))


def grid_with(config: GridConfig, cells, default_semantic=0) -> VoxelGrid:
    """Build a grid from {(ix, iy, iz): (semantic, instance)} entries."""
    sem = np.full(config.dims, default_semantic, dtype=np.uint16)
    inst = np.zeros(config.dims, dtype=np.uint32)
    for (ix, iy, iz), label in cells.items():
        s, i = label if isinstance(label, tuple) else (label, 0)
        sem[ix, iy, iz] = s
        inst[ix, iy, iz] = i
    return VoxelGrid(config, sem, inst)
