"""Spherical 2D-to-3D lifting tables.

Each feature-grid pixel is lifted onto the unit projection sphere
(undistort, polar decomposition, radius rectification, angle recovery)
and scaled by every depth bin, yielding the camera-frame sample point a
lifting network would gather features at. Invalid pixels (undistortion
failure) carry a validity flag instead of poisoning the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

import math

from .camera import FisheyeIntrinsics, normalized_radius, rectify_a, unproject_batch

__all__ = ["DepthBins", "FrustumTable", "rectify_a", "build_frustum"]


@dataclass(frozen=True)
class DepthBins:
    """Strictly increasing, positive sample depths in meters."""

    edges: tuple

    def __init__(self, edges: Sequence[float]) -> None:
        vals = tuple(float(e) for e in edges)
        if not vals:
            raise ValueError("at least one depth bin required")
        if vals[0] <= 0 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("depth bins must be positive and strictly increasing")
        object.__setattr__(self, "edges", vals)

    def __len__(self) -> int:
        return len(self.edges)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.edges)


@dataclass
class FrustumTable:
    """Per-pixel, per-depth-bin 3D sample points in the camera frame.

    ``points`` has shape (rows, cols, bins, 3); ``valid`` has shape
    (rows, cols) and is False where the pixel could not be lifted.
    """

    points: np.ndarray
    valid: np.ndarray
    bins: DepthBins
    stride: int

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]


def feature_pixel_coords(intr: FisheyeIntrinsics, stride: int) -> np.ndarray:
    """Source pixel coordinate of each feature cell, shape (rows, cols, 2).

    Cells sample at their centers: feature cell (r, c) maps to pixel
    ((c + 0.5) * stride - 0.5, (r + 0.5) * stride - 0.5).
    """
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if intr.width % stride or intr.height % stride:
        raise ValueError(
            f"stride {stride} must divide image size {intr.width}x{intr.height}"
        )
    rows = intr.height // stride
    cols = intr.width // stride
    us = (np.arange(cols) + 0.5) * stride - 0.5
    vs = (np.arange(rows) + 0.5) * stride - 0.5
    gu, gv = np.meshgrid(us, vs, indexing="xy")
    return np.stack([gu, gv], axis=-1)


def build_frustum(
    intr: FisheyeIntrinsics, bins: DepthBins, feature_stride: int = 16
) -> FrustumTable:
    """Lift the strided pixel grid through the sphere and scale by depth.

    Pixels whose undistortion diverges or whose radius had to be clamped
    to the feasible bound (they lie outside the imaged disc, so a ray
    through them cannot reproject to the same pixel) are flagged
    invalid; their table entries still hold the rectified direction.
    """
    uv = feature_pixel_coords(intr, feature_stride)
    dirs, valid = unproject_batch(uv, intr)
    radius, _ = normalized_radius(uv, intr)
    cap = rectify_a(math.inf, intr.xi)
    if math.isfinite(cap):
        valid = valid & (radius <= cap * (1.0 + 1e-12))
    depths = bins.as_array()
    points = dirs[:, :, None, :] * depths[None, None, :, None]
    return FrustumTable(points, valid, bins, feature_stride)
