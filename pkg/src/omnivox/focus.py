"""Center-focus supervision fields.

For every occupied voxel, six directional offsets count the run length
of identically labeled voxels up to the instance boundary along each
axis direction (1-based; 1 right at a boundary or grid face). Their
product peaks at the geometric center of a box-shaped instance and
decays toward its faces. Dividing by the per-instance maximum (plus a
small epsilon) yields a scale-invariant field in (0, 1).

Stuff voxels have no annotated instances, so 26-connected components of
each stuff class act as pseudo-instances for normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy import ndimage

from .grid import FREE, UNKNOWN, VoxelGrid

DIRECTIONS = ("x+", "x-", "y+", "y-", "z+", "z-")

_AXIS = {"x": 0, "y": 1, "z": 2}


@dataclass
class OffsetField:
    """Run-length distance along one cardinal direction."""

    direction: str
    values: np.ndarray


@dataclass
class FocusField:
    """Product focus feature, raw and per-instance normalized."""

    raw: np.ndarray
    normalized: np.ndarray
    epsilon: float


def _labeled(grid: VoxelGrid) -> np.ndarray:
    return (grid.semantics != FREE) & (grid.semantics != UNKNOWN)


def _scan(grid: VoxelGrid, axis: int, forward: bool) -> np.ndarray:
    sem = grid.semantics
    inst = grid.instances
    occ = _labeled(grid)
    vals = np.zeros(grid.config.dims, dtype=np.int32)
    n = grid.config.dims[axis]
    order = range(n) if forward else range(n - 1, -1, -1)
    prev = None
    for i in order:
        sl = [slice(None)] * 3
        sl[axis] = i
        sl = tuple(sl)
        run = np.where(occ[sl], 1, 0).astype(np.int32)
        if prev is not None:
            same = (
                occ[sl]
                & occ[prev]
                & (sem[sl] == sem[prev])
                & (inst[sl] == inst[prev])
            )
            run = np.where(same, vals[prev] + 1, run)
        vals[sl] = run
        prev = sl
    return vals


def directional_offsets(panoptic: VoxelGrid) -> Dict[str, OffsetField]:
    """All six offset fields; label equality is the (semantic, instance) pair."""
    out: Dict[str, OffsetField] = {}
    for name in DIRECTIONS:
        axis = _AXIS[name[0]]
        forward = name[1] == "+"
        out[name] = OffsetField(name, _scan(panoptic, axis, forward))
    return out


def focus_product(offsets: Dict[str, OffsetField], panoptic: VoxelGrid) -> np.ndarray:
    """Product of the six offsets; zero off the labeled voxels."""
    occ = _labeled(panoptic)
    prod = np.ones(panoptic.config.dims, dtype=np.float64)
    for name in DIRECTIONS:
        prod *= offsets[name].values
    prod[~occ] = 0.0
    return prod


def _instance_regions(panoptic: VoxelGrid) -> np.ndarray:
    """Integer region id per voxel: annotated instances, then 26-connected
    components of each remaining labeled (semantic, no-instance) class.
    Zero marks voxels outside any region."""
    occ = _labeled(panoptic)
    regions = np.zeros(panoptic.config.dims, dtype=np.int64)
    next_id = 1
    inst_mask = occ & (panoptic.instances > 0)
    if inst_mask.any():
        keys = (
            panoptic.semantics[inst_mask].astype(np.int64) << 32
        ) | panoptic.instances[inst_mask].astype(np.int64)
        _, inv = np.unique(keys, return_inverse=True)
        regions[inst_mask] = inv + next_id
        next_id += int(inv.max()) + 1
    stuff_mask = occ & (panoptic.instances == 0)
    structure = np.ones((3, 3, 3), dtype=bool)
    for cls in np.unique(panoptic.semantics[stuff_mask]):
        sel = stuff_mask & (panoptic.semantics == cls)
        comp, n = ndimage.label(sel, structure=structure)
        regions[sel] = comp[sel] + next_id - 1
        next_id += n
    return regions


def instance_normalize(
    raw: np.ndarray, panoptic: VoxelGrid, epsilon: float = 1e-6
) -> np.ndarray:
    """Divide the raw product by each region's maximum plus epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    regions = _instance_regions(panoptic)
    normalized = np.zeros_like(raw, dtype=np.float64)
    occ = regions > 0
    if not occ.any():
        return normalized
    flat_regions = regions[occ]
    flat_raw = raw[occ]
    n_regions = int(flat_regions.max()) + 1
    maxima = np.zeros(n_regions, dtype=np.float64)
    np.maximum.at(maxima, flat_regions, flat_raw)
    normalized[occ] = flat_raw / (maxima[flat_regions] + epsilon)
    return normalized


def build_focus_field(panoptic: VoxelGrid, epsilon: float = 1e-6) -> FocusField:
    """Offsets, product, and normalization in one pass."""
    offsets = directional_offsets(panoptic)
    raw = focus_product(offsets, panoptic)
    normalized = instance_normalize(raw, panoptic, epsilon)
    return FocusField(raw, normalized, epsilon)
