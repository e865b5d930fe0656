"""Unified-projection fisheye camera with Brown-Conrady distortion.

Camera frame: x right, y down, z forward. Forward projection:

1. normalize the 3D point onto the unit sphere,
2. reproject through a viewpoint shifted by the mirror parameter ``xi``
   along +z, giving normalized-plane coordinates
   ``(x / (z + xi * d), y / (z + xi * d))`` with ``d`` the point norm,
3. apply polynomial radial/tangential distortion,
4. scale by the focal terms and offset to the principal point.

Writing the ray direction as (theta, phi) spherical angles about +z,
the normalized-plane radius is ``a = sin(theta) / (cos(theta) + xi)``.
For ``xi > 1`` this radius has a finite feasible maximum
``a_max = sqrt(1 / (xi^2 - 1))``; beyond the corresponding incident
angle the mapping folds back onto itself and rays stop being imaged.
The inverse mapping keeps the root of the radius/angle quadratic that
corresponds to this front branch (``1 + xi * cos(theta) >= 0``).

``xi = 0`` reduces to a plain pinhole model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Pose

# Tolerance for treating a slightly negative discriminant (pure rounding
# at the feasibility boundary) as zero.
_DELTA_TOL = 1e-12


class InvalidRayError(ValueError):
    """Ray cannot be expressed in the shifted projection frame."""


class FeasibilityError(ValueError):
    """Normalized radius exceeds the feasible bound for this xi."""


class ConvergenceError(RuntimeError):
    """Iterative undistortion failed to reach tolerance."""


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Mirror parameter, focal/center mapping, distortion, image size."""

    xi: float
    gamma1: float
    gamma2: float
    u0: float
    v0: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("focal scalings must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.xi < 0:
            raise ValueError("mirror parameter must be non-negative")


@dataclass(frozen=True)
class SpherePoint:
    """Unit viewing direction on the projection sphere."""

    x_sp: float
    y_sp: float
    z_sp: float

    def __post_init__(self) -> None:
        n = math.sqrt(self.x_sp**2 + self.y_sp**2 + self.z_sp**2)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"sphere point norm {n} is not 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_sp, self.y_sp, self.z_sp])


@dataclass(frozen=True)
class FisheyeCamera:
    """Intrinsics plus the camera-to-ego mounting pose."""

    intrinsics: FisheyeIntrinsics
    cam_to_ego: Pose

    def ego_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.cam_to_ego.inverse().apply(points)

    def center_in_ego(self) -> np.ndarray:
        return np.array(self.cam_to_ego.translation)


def radial_ratio(theta, xi):
    """Normalized-plane radius of a ray at incident angle ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    denom = np.cos(theta) + xi
    if np.any(denom <= 0):
        raise InvalidRayError(f"cos(theta) + xi <= 0 for theta={theta}, xi={xi}")
    out = np.sin(theta) / denom
    return float(out) if out.ndim == 0 else out


def cos_theta_from_a(a, xi):
    """Invert the radius back to cos(theta), front-branch root.

    The discriminant ``delta = 1 - a^2 (xi^2 - 1)`` must be
    non-negative; radii past the feasible bound raise FeasibilityError.
    """
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("radial ratio must be non-negative")
    delta = 1.0 - a * a * (xi * xi - 1.0)
    if np.any(delta < -_DELTA_TOL):
        raise FeasibilityError(f"radius {a} outside feasible domain for xi={xi}")
    delta = np.maximum(delta, 0.0)
    out = (-a * a * xi + np.sqrt(delta)) / (a * a + 1.0)
    return float(out) if out.ndim == 0 else out


def a_max(xi: float) -> float:
    """Feasible radius bound; infinity when xi <= 1 (no finite bound)."""
    if xi <= 1.0:
        return math.inf
    return math.sqrt(1.0 / (xi * xi - 1.0))


def rectify_a(a, xi, return_clamp: bool = False):
    """Clamp a radius into the invertible domain.

    Applies both the inversion bound ``sqrt((1 + xi) / (xi - 1))`` and
    the tighter feasibility bound ``a_max``; for xi <= 1 every finite
    radius is feasible and the value passes through. With
    ``return_clamp`` also reports which bound fired (None when neither).
    """
    a_in = np.asarray(a, dtype=np.float64)
    if xi > 1.0:
        inversion = math.sqrt((1.0 + xi) / (xi - 1.0))
        feasibility = a_max(xi)
        cap = min(inversion, feasibility)
    else:
        cap = math.inf
        feasibility = math.inf
    out = np.minimum(a_in, cap)
    if out.ndim == 0:
        out = float(out)
    if not return_clamp:
        return out
    clamped = np.asarray(a_in > cap)
    if clamped.ndim == 0:
        which = None if not clamped else ("feasibility" if cap == feasibility else "inversion")
    else:
        which = np.where(clamped, "feasibility" if cap == feasibility else "inversion", None)
    return out, which


def theta_max(xi: float) -> float:
    """Largest incident angle the model can image."""
    if xi > 1.0:
        return math.acos(-1.0 / xi)
    return math.acos(-xi)


def max_invertible_radius(intr: FisheyeIntrinsics) -> float:
    """Largest normalized-plane radius with monotone radial distortion.

    Past this radius the polynomial ``r * (1 + k1 r^2 + k2 r^4)`` folds
    back, so distant rays would alias into the image and undistortion
    loses its unique solution. Infinite when the polynomial never folds.
    """
    k1, k2 = intr.k1, intr.k2
    # Roots of d/dr [r + k1 r^3 + k2 r^5] = 1 + 3 k1 s + 5 k2 s^2, s = r^2.
    if k2 == 0.0:
        if k1 >= 0.0:
            return math.inf
        return math.sqrt(-1.0 / (3.0 * k1))
    disc = 9.0 * k1 * k1 - 20.0 * k2
    if disc < 0.0:
        return math.inf
    roots = [(-3.0 * k1 + sign * math.sqrt(disc)) / (10.0 * k2) for sign in (1.0, -1.0)]
    positive = [s for s in roots if s > 0.0]
    if not positive:
        return math.inf
    return math.sqrt(min(positive))


def distort(x_u, y_u, intr: FisheyeIntrinsics):
    """Brown-Conrady distortion on normalized-plane coordinates."""
    x = np.asarray(x_u, dtype=np.float64)
    y = np.asarray(y_u, dtype=np.float64)
    r2 = x * x + y * y
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    x_d = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    y_d = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    if x_d.ndim == 0:
        return float(x_d), float(y_d)
    return x_d, y_d


def _undistort_batch(x_d, y_d, intr, tol, max_iter):
    """Fixed-point inversion of the distortion map.

    Iterates ``x_u <- x_d - (distort(x_u) - x_u)`` from ``x_u = x_d``
    until the forward residual drops below ``tol`` per coordinate.
    Returns (x_u, y_u, converged mask).
    """
    x_d = np.asarray(x_d, dtype=np.float64)
    y_d = np.asarray(y_d, dtype=np.float64)
    x_u = x_d.copy()
    y_u = y_d.copy()
    converged = np.zeros(x_d.shape, dtype=bool)
    # Divergence (outside the invertible region) overflows harmlessly;
    # such points end up flagged unconverged.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            fx, fy = distort(x_u, y_u, intr)
            rx = fx - x_d
            ry = fy - y_d
            converged = (np.abs(rx) <= tol) & (np.abs(ry) <= tol)
            if converged.all():
                break
            x_u = x_u - rx
            y_u = y_u - ry
        else:
            fx, fy = distort(x_u, y_u, intr)
            converged = (np.abs(fx - x_d) <= tol) & (np.abs(fy - y_d) <= tol)
    return x_u, y_u, converged


def undistort(x_d, y_d, intr: FisheyeIntrinsics, tol: float = 1e-10, max_iter: int = 50):
    """Invert the distortion; raises ConvergenceError when iteration stalls."""
    x_u, y_u, ok = _undistort_batch(
        np.asarray(x_d, dtype=np.float64),
        np.asarray(y_d, dtype=np.float64),
        intr,
        tol,
        max_iter,
    )
    if not np.all(ok):
        raise ConvergenceError(
            f"undistortion did not converge within {max_iter} iterations"
        )
    if np.ndim(x_u) == 0:
        return float(x_u), float(y_u)
    return x_u, y_u


def project_batch(points: np.ndarray, intr: FisheyeIntrinsics):
    """Project (..., 3) camera-frame points to pixels.

    Returns (uv, valid): pixel coordinates of shape (..., 2) and a
    boolean validity mask. Invalid entries (zero-length input, behind
    the shifted viewpoint, past the imaging fold, or off-image) hold
    unspecified pixel values.
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    d = np.linalg.norm(pts, axis=-1)
    valid = d > 0
    denom = z + intr.xi * d
    valid &= denom > 0
    # Front-branch condition 1 + xi * cos(theta) >= 0; automatic for xi <= 1.
    valid &= d + intr.xi * z >= 0
    safe = np.where(valid, denom, 1.0)
    x_u = x / safe
    y_u = y / safe
    valid &= np.hypot(x_u, y_u) <= max_invertible_radius(intr)
    x_d, y_d = distort(x_u, y_u, intr)
    u = intr.gamma1 * x_d + intr.u0
    v = intr.gamma2 * y_d + intr.v0
    valid &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return np.stack([u, v], axis=-1), valid


def project(point, intr: FisheyeIntrinsics):
    """Project one camera-frame point; None when not imaged."""
    pt = np.asarray(point, dtype=np.float64).reshape(3)
    if not np.any(pt):
        raise InvalidRayError("cannot project the camera center")
    uv, valid = project_batch(pt[None, :], intr)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def normalized_radius(uv: np.ndarray, intr: FisheyeIntrinsics, tol: float = 1e-12, max_iter: int = 50):
    """Undistorted normalized-plane radius of (..., 2) pixels.

    Returns (radius, converged); the radius is not rectified, so it can
    exceed the feasible bound for pixels outside the imaged disc.
    """
    uv = np.asarray(uv, dtype=np.float64)
    x_d = (uv[..., 0] - intr.u0) / intr.gamma1
    y_d = (uv[..., 1] - intr.v0) / intr.gamma2
    x_u, y_u, valid = _undistort_batch(x_d, y_d, intr, tol, max_iter)
    return np.hypot(x_u, y_u), valid


def unproject_batch(uv: np.ndarray, intr: FisheyeIntrinsics, tol: float = 1e-12, max_iter: int = 50):
    """Lift (..., 2) pixels to unit directions on the projection sphere.

    Radii are rectified into the feasible domain before inversion, so
    every pixel yields a direction; ``valid`` is False only where the
    undistortion iteration failed to converge. The default tolerance is
    tighter than plain undistortion because errors in the radius are
    amplified near the feasibility bound when recovering the angle.
    """
    uv = np.asarray(uv, dtype=np.float64)
    x_d = (uv[..., 0] - intr.u0) / intr.gamma1
    y_d = (uv[..., 1] - intr.v0) / intr.gamma2
    x_u, y_u, valid = _undistort_batch(x_d, y_d, intr, tol, max_iter)
    a = np.hypot(x_u, y_u)
    phi = np.arctan2(y_u, x_u)
    a_r = rectify_a(a, intr.xi)
    cos_t = cos_theta_from_a(a_r, intr.xi)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    return dirs, valid


def unproject(u: float, v: float, intr: FisheyeIntrinsics, tol: float = 1e-12, max_iter: int = 50) -> SpherePoint:
    """Lift one pixel to a SpherePoint."""
    uv = np.array([[float(u), float(v)]])
    dirs, valid = unproject_batch(uv, intr, tol=tol, max_iter=max_iter)
    if not valid[0]:
        raise ConvergenceError("undistortion did not converge for this pixel")
    return SpherePoint(float(dirs[0, 0]), float(dirs[0, 1]), float(dirs[0, 2]))
