"""Fisheye field-of-view masks over a voxel lattice.

A voxel is in FoV of a camera when its center, expressed in the camera
frame, projects to a valid pixel. That per-voxel test is the
authoritative definition. A faster sweep variant first traces the image
boundary as a radial contour a(phi) on the normalized plane and then
compares each voxel's radius against the interpolated contour; it must
agree with the per-voxel test except on a thin shell of boundary
voxels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import camera as cam
from .grid import GridConfig, voxel_centers


@dataclass(frozen=True)
class FovContour:
    """Largest in-image rectified radius per sampled azimuth."""

    phi: np.ndarray
    a_rect: np.ndarray

    def __post_init__(self) -> None:
        if self.phi.shape != self.a_rect.shape:
            raise ValueError("phi and a_rect must align")

    @property
    def samples(self):
        return list(zip(self.phi.tolist(), self.a_rect.tolist()))


@dataclass
class FovMask:
    """Boolean in-FoV flags over a voxel lattice, shape config.dims."""

    config: GridConfig
    in_fov: np.ndarray

    def __post_init__(self) -> None:
        mask = np.ascontiguousarray(self.in_fov, dtype=bool)
        if mask.shape != self.config.dims:
            raise ValueError(f"mask shape {mask.shape} != dims {self.config.dims}")
        self.in_fov = mask

    @staticmethod
    def all_true(config: GridConfig) -> "FovMask":
        return FovMask(config, np.ones(config.dims, dtype=bool))


def _pixel_inside(uv: np.ndarray, intr: cam.FisheyeIntrinsics) -> np.ndarray:
    u, v = uv[..., 0], uv[..., 1]
    return (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)


def _project_radius(a: np.ndarray, phi: np.ndarray, intr: cam.FisheyeIntrinsics):
    """Pixel of the normalized-plane point at polar (a, phi)."""
    x_d, y_d = cam.distort(a * np.cos(phi), a * np.sin(phi), intr)
    u = intr.gamma1 * x_d + intr.u0
    v = intr.gamma2 * y_d + intr.v0
    return np.stack([np.asarray(u), np.asarray(v)], axis=-1)


def _start_radius(intr: cam.FisheyeIntrinsics) -> float:
    """Initial radius for the contour sweep.

    For xi > 1 the feasibility bound is the natural start. Otherwise
    there is no finite bound, so start at a radius whose undistorted
    projection spans the full image diagonal and grow it until it
    projects outside along every axis direction. Both cases stay within
    the monotone region of the distortion polynomial so the swept
    boundary is uniquely invertible.
    """
    r_mono = cam.max_invertible_radius(intr)
    if intr.xi > 1.0:
        return min(cam.a_max(intr.xi), r_mono)
    a = math.hypot(intr.width, intr.height) / min(intr.gamma1, intr.gamma2)
    probe = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    for _ in range(60):
        if a >= r_mono:
            a = r_mono
            break
        uv = _project_radius(np.full_like(probe, a), probe, intr)
        if not _pixel_inside(uv, intr).any():
            break
        a *= 2.0
    return min(a, r_mono)


def build_fov_contour(
    intr: cam.FisheyeIntrinsics, n_phi: int = 3600, tol: float = 1e-6
) -> FovContour:
    """Trace the valid-image boundary as a radius-per-azimuth contour.

    For each sampled azimuth the sweep starts at the feasible radius
    bound (or the diagonal cap when xi <= 1); if that projects outside
    the image, a bisection finds the largest radius that still lands
    inside.
    """
    if n_phi < 8:
        raise ValueError("need at least 8 azimuth samples")
    phis = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    a_start = _start_radius(intr)
    a_hi = np.full(n_phi, a_start)
    inside_hi = _pixel_inside(_project_radius(a_hi, phis, intr), intr)
    result = np.where(inside_hi, a_hi, 0.0)
    todo = ~inside_hi
    if todo.any():
        lo = np.zeros(n_phi)
        hi = a_hi.copy()
        # Bisection keeps lo inside and hi outside.
        while np.any((hi - lo)[todo] > tol):
            mid = 0.5 * (lo + hi)
            inside = _pixel_inside(_project_radius(mid, phis, intr), intr)
            lo = np.where(todo & inside, mid, lo)
            hi = np.where(todo & ~inside, mid, hi)
        result = np.where(todo, lo, result)
    a_rect = np.asarray(cam.rectify_a(result, intr.xi))
    return FovContour(phis, a_rect)


def _camera_frame_centers(centers: np.ndarray, camera: cam.FisheyeCamera) -> np.ndarray:
    flat = centers.reshape(-1, 3)
    return camera.ego_to_camera(flat)


def voxel_in_fov(voxel_center: Sequence[float], camera: cam.FisheyeCamera) -> bool:
    """Per-voxel FoV test: does the center project to a valid pixel?"""
    pt = camera.ego_to_camera(np.asarray(voxel_center, dtype=np.float64)[None, :])
    _, valid = cam.project_batch(pt, camera.intrinsics)
    return bool(valid[0])


def _mask_pervoxel(config: GridConfig, cameras) -> np.ndarray:
    centers = voxel_centers(config)
    out = np.zeros(config.dims, dtype=bool)
    for camera in cameras:
        pts = _camera_frame_centers(centers, camera)
        _, valid = cam.project_batch(pts, camera.intrinsics)
        out |= valid.reshape(config.dims)
    return out


def _mask_sweep(config: GridConfig, cameras, n_phi: int) -> np.ndarray:
    centers = voxel_centers(config)
    out = np.zeros(config.dims, dtype=bool)
    for camera in cameras:
        intr = camera.intrinsics
        contour = build_fov_contour(intr, n_phi=n_phi)
        pts = _camera_frame_centers(centers, camera)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        d = np.linalg.norm(pts, axis=-1)
        denom = z + intr.xi * d
        ok = (d > 0) & (denom > 0) & (d + intr.xi * z >= 0)
        a = np.where(ok, np.hypot(x, y) / np.where(ok, denom, 1.0), np.inf)
        phi = np.mod(np.arctan2(y, x), 2.0 * math.pi)
        # Periodic interpolation of the contour radius.
        phi_grid = np.concatenate([contour.phi, [2.0 * math.pi]])
        a_grid = np.concatenate([contour.a_rect, [contour.a_rect[0]]])
        limit = np.interp(phi, phi_grid, a_grid)
        out |= (ok & (a <= limit)).reshape(config.dims)
    return out


def build_fov_mask(
    config: GridConfig,
    cameras: Iterable[cam.FisheyeCamera],
    method: str = "pervoxel",
    n_phi: int = 3600,
) -> FovMask:
    """Union FoV mask over all cameras.

    ``method`` selects the authoritative per-voxel projection test
    (default) or the contour-sweep fast path.
    """
    cameras = list(cameras)
    if not cameras:
        raise ValueError("at least one camera required")
    if method == "pervoxel":
        mask = _mask_pervoxel(config, cameras)
    elif method == "sweep":
        mask = _mask_sweep(config, cameras, n_phi)
    else:
        raise ValueError(f"unknown method {method!r}")
    return FovMask(config, mask)
