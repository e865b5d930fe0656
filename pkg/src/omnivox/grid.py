"""Core voxel lattice types and coordinate conventions.

Axis conventions used throughout the package:

* ego frame: x forward, y left, z up (meters)
* voxel index (ix, iy, iz) covers the half-open cell
  ``[extent_min + i * voxel_size, extent_min + (i + 1) * voxel_size)``
* label arrays have shape ``(nx, ny, nz)``; the canonical linear order
  (used by the binary file formats) is x-fastest:
  ``linear = ix + nx * (iy + ny * iz)``

Semantic id 0 means free space and 255 means unknown/unannotated.
Instance id 0 means "no instance".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

FREE = 0
UNKNOWN = 255

_EXTENT_TOL = 1e-9
_POSE_TOL = 1e-9


class PanopticLabel(NamedTuple):
    """Per-voxel label: semantic class plus optional instance identity."""

    semantic_id: int
    instance_id: int


@dataclass(frozen=True)
class GridConfig:
    """Geometry of a dense voxel lattice.

    ``dims`` is derived from the extents and voxel size, which must
    divide exactly (within 1e-9 m per axis).
    """

    extent_min: Tuple[float, float, float]
    extent_max: Tuple[float, float, float]
    voxel_size: Tuple[float, float, float]
    dims: Tuple[int, int, int] = field(init=False)

    def __post_init__(self) -> None:
        emin = tuple(float(v) for v in self.extent_min)
        emax = tuple(float(v) for v in self.extent_max)
        size = tuple(float(v) for v in self.voxel_size)
        if any(s <= 0 for s in size):
            raise ValueError(f"voxel_size must be positive, got {size}")
        dims = []
        for lo, hi, s in zip(emin, emax, size):
            n = round((hi - lo) / s)
            if n < 1:
                raise ValueError(f"extent [{lo}, {hi}] too small for voxel size {s}")
            if abs(n * s - (hi - lo)) > _EXTENT_TOL:
                raise ValueError(
                    f"extent [{lo}, {hi}] is not an integer multiple of voxel size {s}"
                )
            dims.append(int(n))
        object.__setattr__(self, "extent_min", emin)
        object.__setattr__(self, "extent_max", emax)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", tuple(dims))

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def contains(self, point: Sequence[float]) -> bool:
        return all(
            lo <= p < hi
            for lo, hi, p in zip(self.extent_min, self.extent_max, point)
        )


def index_to_center(config: GridConfig, index: Sequence[int]) -> np.ndarray:
    """Center of the voxel at ``index``, in grid-frame meters."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (3,):
        raise ValueError(f"index must be a 3-vector, got shape {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= np.asarray(config.dims)):
        raise IndexError(f"voxel index {tuple(idx)} outside dims {config.dims}")
    return np.asarray(config.extent_min) + (idx + 0.5) * np.asarray(config.voxel_size)


def center_to_index(
    config: GridConfig, point: Sequence[float]
) -> Optional[Tuple[int, int, int]]:
    """Voxel index containing ``point``, or None when outside the extent.

    Cells are half-open, so a point exactly on extent_max belongs to no
    voxel.
    """
    idx, valid = points_to_indices(config, np.asarray(point, dtype=np.float64)[None, :])
    if not valid[0]:
        return None
    return (int(idx[0, 0]), int(idx[0, 1]), int(idx[0, 2]))


def points_to_indices(
    config: GridConfig, points: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized binning of (n, 3) points; returns (indices, valid mask).

    Indices are meaningful only where valid is True.
    """
    pts = np.asarray(points, dtype=np.float64)
    rel = (pts - np.asarray(config.extent_min)) / np.asarray(config.voxel_size)
    idx = np.floor(rel).astype(np.int64)
    dims = np.asarray(config.dims)
    valid = np.all((idx >= 0) & (idx < dims), axis=-1)
    return idx, valid


def voxel_centers(config: GridConfig) -> np.ndarray:
    """Centers of every voxel, shape (nx, ny, nz, 3)."""
    nx, ny, nz = config.dims
    axes = [
        np.asarray(config.extent_min)[i]
        + (np.arange(config.dims[i]) + 0.5) * np.asarray(config.voxel_size)[i]
        for i in range(3)
    ]
    gx, gy, gz = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def linear_indices(config: GridConfig, idx: np.ndarray) -> np.ndarray:
    """x-fastest linear index of (n, 3) voxel indices."""
    nx, ny, _ = config.dims
    return idx[..., 0] + nx * (idx[..., 1] + ny * idx[..., 2])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``p_out = rotation @ p_in + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.abs(rot @ rot.T - np.eye(3)).max() > _POSE_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _POSE_TOL:
            raise ValueError("rotation determinant is not +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "Pose":
        """Build from a 3x4 or 4x4 [R|t] matrix."""
        m = np.asarray(mat, dtype=np.float64)
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """Row-major 3x4 [R|t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self . other).apply(p) == self.apply(other.apply(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass
class VoxelGrid:
    """Dense panoptic voxel labels over a GridConfig.

    ``semantics`` is uint16 and ``instances`` uint32, both of shape
    ``config.dims``. Grids are treated as immutable once constructed;
    operations return new grids.
    """

    config: GridConfig
    semantics: np.ndarray
    instances: np.ndarray

    def __post_init__(self) -> None:
        sem = np.ascontiguousarray(self.semantics, dtype=np.uint16)
        inst = np.ascontiguousarray(self.instances, dtype=np.uint32)
        if sem.shape != self.config.dims or inst.shape != self.config.dims:
            raise ValueError(
                f"label arrays must have shape {self.config.dims}, "
                f"got {sem.shape} and {inst.shape}"
            )
        sem.setflags(write=False)
        inst.setflags(write=False)
        self.semantics = sem
        self.instances = inst

    @staticmethod
    def empty(config: GridConfig) -> "VoxelGrid":
        return VoxelGrid(
            config,
            np.zeros(config.dims, dtype=np.uint16),
            np.zeros(config.dims, dtype=np.uint32),
        )

    def label_at(self, index: Sequence[int]) -> PanopticLabel:
        ix, iy, iz = index
        return PanopticLabel(
            int(self.semantics[ix, iy, iz]), int(self.instances[ix, iy, iz])
        )

    def occupied(self) -> np.ndarray:
        """Boolean mask of all non-free voxels (unknown counts as occupied)."""
        return self.semantics != FREE

    def blocking(self) -> np.ndarray:
        """Voxels with actual geometry: occupied and not unknown."""
        return (self.semantics != FREE) & (self.semantics != UNKNOWN)

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.semantics != FREE))


def check_thing_instances(grid: VoxelGrid, thing_classes: Sequence[int]) -> None:
    """Raise if an instance id appears on a non-thing semantic class."""
    has_inst = grid.instances > 0
    if not has_inst.any():
        return
    things = np.isin(grid.semantics, np.asarray(list(thing_classes), dtype=np.uint16))
    bad = has_inst & ~things
    if bad.any():
        ix, iy, iz = np.argwhere(bad)[0]
        raise ValueError(
            f"instance id on non-thing class {int(grid.semantics[ix, iy, iz])} "
            f"at voxel ({ix}, {iy}, {iz})"
        )


def _scatter_labels(
    dst_config: GridConfig,
    moved_centers: np.ndarray,
    sem: np.ndarray,
    inst: np.ndarray,
    src_linear: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin transformed voxel centers into a destination lattice.

    When several sources land in one destination cell, the one farthest
    from the destination-frame origin wins; ties go to the lower source
    linear index. Returns an (n, 3) index array of the surviving writes
    plus the label arrays selected the same way.
    """
    idx, valid = points_to_indices(dst_config, moved_centers)
    if not valid.any():
        return np.zeros((0, 3), dtype=np.int64), sem[:0], inst[:0]
    idx = idx[valid]
    sem = sem[valid]
    inst = inst[valid]
    depth = np.linalg.norm(moved_centers[valid], axis=-1)
    src_linear = src_linear[valid]
    dst_lin = linear_indices(dst_config, idx)
    order = np.lexsort((src_linear, -depth, dst_lin))
    dst_sorted = dst_lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = dst_sorted[1:] != dst_sorted[:-1]
    keep = order[first]
    return idx[keep], sem[keep], inst[keep]


def transform_grid(src: VoxelGrid, pose: Pose, dst_config: GridConfig) -> VoxelGrid:
    """Rigidly transform occupied voxels of ``src`` into a new lattice.

    Each occupied source voxel center is mapped by ``pose`` and written
    to the destination cell containing the result; unknown labels travel
    like any other occupied label. Cells receiving nothing stay free.
    """
    occ = src.occupied()
    out_sem = np.zeros(dst_config.dims, dtype=np.uint16)
    out_inst = np.zeros(dst_config.dims, dtype=np.uint32)
    if occ.any():
        idx = np.argwhere(occ)
        centers = np.asarray(src.config.extent_min) + (idx + 0.5) * np.asarray(
            src.config.voxel_size
        )
        moved = pose.apply(centers)
        src_lin = linear_indices(src.config, idx)
        widx, wsem, winst = _scatter_labels(
            dst_config,
            moved,
            src.semantics[occ],
            src.instances[occ],
            src_lin,
        )
        out_sem[widx[:, 0], widx[:, 1], widx[:, 2]] = wsem
        out_inst[widx[:, 0], widx[:, 1], widx[:, 2]] = winst
    return VoxelGrid(dst_config, out_sem, out_inst)


def merge_labels(
    dst_sem: np.ndarray,
    dst_inst: np.ndarray,
    idx: np.ndarray,
    sem: np.ndarray,
    inst: np.ndarray,
) -> None:
    """Merge incoming labels into mutable arrays, free cells only.

    Free never overwrites anything, and occupied or unknown destination
    cells are never overwritten, so earlier merges take precedence.
    """
    if len(idx) == 0:
        return
    writable = (dst_sem[idx[:, 0], idx[:, 1], idx[:, 2]] == FREE) & (sem != FREE)
    sel = idx[writable]
    dst_sem[sel[:, 0], sel[:, 1], sel[:, 2]] = sem[writable]
    dst_inst[sel[:, 0], sel[:, 1], sel[:, 2]] = inst[writable]
