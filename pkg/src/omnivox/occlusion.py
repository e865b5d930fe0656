"""All-direction occlusion masks by boundary-voxel ray casting.

Rays run from each sensor origin to the center of every voxel on the
grid boundary, so every direction in the lattice is covered even where
no occupied voxel exists. Along each ray, voxels are visible up to and
including the first blocking voxel. Traversal is grid stepping in the
Amanatides-Woo style; ties at exact face or edge crossings step x, then
y, then z, which makes the voxel sequence deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .grid import GridConfig, VoxelGrid, center_to_index, index_to_center


@dataclass
class OcclusionMask:
    """Boolean visibility flags over a voxel lattice, shape config.dims."""

    config: GridConfig
    visible: np.ndarray

    def __post_init__(self) -> None:
        mask = np.ascontiguousarray(self.visible, dtype=bool)
        if mask.shape != self.config.dims:
            raise ValueError(f"mask shape {mask.shape} != dims {self.config.dims}")
        self.visible = mask

    @staticmethod
    def all_true(config: GridConfig) -> "OcclusionMask":
        return OcclusionMask(config, np.ones(config.dims, dtype=bool))


def boundary_voxels(config: GridConfig) -> np.ndarray:
    """Indices of all voxels with any coordinate on the grid boundary.

    Returned as an (n, 3) int array without duplicates, in ascending
    linear order.
    """
    nx, ny, nz = config.dims
    gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    on_edge = (
        (gx == 0) | (gx == nx - 1) | (gy == 0) | (gy == ny - 1) | (gz == 0) | (gz == nz - 1)
    )
    return np.argwhere(on_edge)


def traverse_ray(
    config: GridConfig, origin: Sequence[float], target: Sequence[float]
) -> List[Tuple[int, int, int]]:
    """Ordered voxels intersected by the segment origin -> target.

    The origin must lie inside the grid extent. Traversal stops at the
    voxel containing the target, at the segment end, or on leaving the
    grid.
    """
    origin = np.asarray(origin, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    start = center_to_index(config, origin)
    if start is None:
        raise ValueError(f"ray origin {origin.tolist()} outside grid extent")
    cur = np.array(start, dtype=np.int64)
    end_idx = center_to_index(config, target)
    end = None if end_idx is None else np.array(end_idx, dtype=np.int64)

    direction = target - origin
    size = np.asarray(config.voxel_size)
    emin = np.asarray(config.extent_min)
    dims = np.asarray(config.dims)

    step = np.sign(direction).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        next_boundary = emin + (cur + (step > 0)) * size
        t_max = np.where(direction != 0, (next_boundary - origin) / direction, np.inf)
        t_delta = np.where(direction != 0, size / np.abs(direction), np.inf)

    visited: List[Tuple[int, int, int]] = [tuple(cur)]
    max_steps = int(dims.sum()) + 3
    for _ in range(max_steps):
        if end is not None and np.array_equal(cur, end):
            break
        axis = int(np.argmin(t_max))  # argmin prefers x over y over z on ties
        if t_max[axis] > 1.0:
            break
        cur[axis] += step[axis]
        if cur[axis] < 0 or cur[axis] >= dims[axis]:
            break
        t_max[axis] += t_delta[axis]
        visited.append(tuple(cur))
    return visited


def _cast_from_origin(
    config: GridConfig,
    blocking: np.ndarray,
    origin: np.ndarray,
    targets_idx: np.ndarray,
    visible: np.ndarray,
) -> None:
    """Batched traversal from one origin to many targets, marking visibility.

    All rays step in lockstep; a ray dies on reaching its target, on
    leaving the grid, or after marking its first blocking voxel.
    """
    size = np.asarray(config.voxel_size)
    emin = np.asarray(config.extent_min)
    dims = np.asarray(config.dims)

    start = center_to_index(config, origin)
    if start is None:
        raise ValueError(f"sensor origin {origin.tolist()} outside grid extent")

    targets = emin + (targets_idx + 0.5) * size
    direction = targets - origin
    n = len(targets)
    cur = np.tile(np.asarray(start, dtype=np.int64), (n, 1))
    step = np.sign(direction).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        next_boundary = emin + (cur + (step > 0)) * size
        t_max = np.where(direction != 0, (next_boundary - origin) / direction, np.inf)
        t_delta = np.where(direction != 0, size / np.abs(direction), np.inf)

    alive = np.ones(n, dtype=bool)
    max_steps = int(dims.sum()) + 3
    for _ in range(max_steps + 1):
        if not alive.any():
            break
        ci = cur[alive]
        visible[ci[:, 0], ci[:, 1], ci[:, 2]] = True
        blocked = blocking[ci[:, 0], ci[:, 1], ci[:, 2]]
        reached = np.all(cur[alive] == targets_idx[alive], axis=1)
        done = blocked | reached
        if done.any():
            idx_alive = np.flatnonzero(alive)
            alive[idx_alive[done]] = False
            if not alive.any():
                break
        # argmax on the min-equality mask picks x before y before z on ties.
        tm = t_max[alive]
        axis = np.argmax(tm == tm.min(axis=1, keepdims=True), axis=1)
        rows = np.flatnonzero(alive)
        over = tm[np.arange(len(rows)), axis] > 1.0
        if over.any():
            alive[rows[over]] = False
            rows = rows[~over]
            axis = axis[~over]
            if len(rows) == 0:
                continue
        cur[rows, axis] += step[rows, axis]
        oob = (cur[rows, axis] < 0) | (cur[rows, axis] >= dims[axis])
        if oob.any():
            alive[rows[oob]] = False
            rows = rows[~oob]
            axis = axis[~oob]
        t_max[rows, axis] += t_delta[rows, axis]


def build_occlusion_mask(
    occupancy: VoxelGrid, sensor_origins: Sequence[Sequence[float]]
) -> OcclusionMask:
    """Visibility mask from all origins, OR-combined.

    Blocking voxels are those with real geometry (free and unknown do
    not block). The first blocking voxel on a ray is itself visible.
    """
    origins = [np.asarray(o, dtype=np.float64) for o in sensor_origins]
    if not origins:
        raise ValueError("at least one sensor origin required")
    config = occupancy.config
    blocking = occupancy.blocking()
    visible = np.zeros(config.dims, dtype=bool)
    targets = boundary_voxels(config)
    for origin in origins:
        _cast_from_origin(config, blocking, origin, targets, visible)
    return OcclusionMask(config, visible)


