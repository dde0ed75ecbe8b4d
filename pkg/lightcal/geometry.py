"""Pinhole camera, lens distortion and back-projection onto the z=0 plane.

Every function works on stacked arrays (``(..., 2)`` pixel coordinates,
``(..., 3)`` vectors) so whole images can be processed at once. The scalar
operations (`undistort_pixel`, `back_project_corner`, `pixel_quad`,
`solid_angle_quad`) run the same array code on a single element and raise
typed errors instead of returning validity masks.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, model_validator

from lightcal.config import (
    DIRECTION_DOT_TOLERANCE,
    RAY_PARALLEL_TOLERANCE,
    ROTATION_TOLERANCE,
    UNDISTORT_MAX_ITERATIONS,
    UNDISTORT_TOLERANCE_PX,
)
from lightcal.errors import (
    DegenerateQuad,
    InputError,
    IntersectionBehindCamera,
    NonConvergence,
    RayParallelToPlane,
)

Array = NDArray[np.float64]
Mask = NDArray[np.bool_]

# pixel (u, v) owns [u, u+1] x [v, v+1]
CORNER_OFFSETS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def dot3(a: Array, b: Array) -> Array:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def cross3(a: Array, b: Array) -> Array:
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def norm3(a: Array) -> Array:
    return np.sqrt(dot3(a, a))


def rotate(R: Array, v: Array) -> Array:
    """R @ v for a stack of vectors, evaluated element by element."""
    return (
        v[..., 0, None] * R[:, 0]
        + v[..., 1, None] * R[:, 1]
        + v[..., 2, None] * R[:, 2]
    )


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    # k1, k2, p1, p2, k3
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def check_ranges(self) -> "CameraIntrinsics":
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie on the sensor")
        return self

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.dist)


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rotation `R` and camera center `C` in the plane frame."""

    R: Array
    C: Array

    def __post_init__(self) -> None:
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        C = np.array(self.C, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() >= ROTATION_TOLERANCE:
            raise InputError("camera rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= ROTATION_TOLERANCE:
            raise InputError("camera rotation is not a proper rotation")
        if not C[2] > 0:
            raise InputError("camera center must lie above the reference plane")
        R.flags.writeable = False
        C.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", C)


@dataclass(frozen=True, eq=False)
class PlaneQuad:
    corners: Array
    centroid: Array


def nearest_rotation(matrix: ArrayLike) -> Array:
    """Project a nearly orthonormal 3x3 matrix onto SO(3)."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64).reshape(3, 3))
    R: Array = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] = -u[:, -1]
        R = u @ vt
    return R


def distort_normalized(xy: Array, dist: Sequence[float]) -> Array:
    """Forward radial-tangential model applied to ideal normalized coordinates."""
    k1, k2, p1, p2, k3 = dist
    x = xy[..., 0]
    y = xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distort_pixel(xy: ArrayLike, intr: CameraIntrinsics) -> Array:
    """Normalized ideal coordinates to distorted pixel coordinates."""
    d = distort_normalized(np.asarray(xy, dtype=np.float64), intr.dist)
    return np.stack([intr.fx * d[..., 0] + intr.cx, intr.fy * d[..., 1] + intr.cy], -1)


def undistort_points(p: ArrayLike, intr: CameraIntrinsics) -> tuple[Array, Mask]:
    """Fixed-point undistortion of pixel coordinates.

    Returns ideal normalized coordinates and a mask of the points whose
    re-distortion reproduces the input within `UNDISTORT_TOLERANCE_PX`.
    """
    p = np.asarray(p, dtype=np.float64)
    xd = (p[..., 0] - intr.cx) / intr.fx
    yd = (p[..., 1] - intr.cy) / intr.fy
    if not intr.has_distortion:
        return np.stack([xd, yd], axis=-1), np.ones(xd.shape, dtype=bool)

    k1, k2, p1, p2, k3 = intr.dist
    x = xd.copy()
    y = yd.copy()
    converged = np.zeros(xd.shape, dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(UNDISTORT_MAX_ITERATIONS):
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            # converged points stay put so every point iterates independently
            x = np.where(converged, x, (xd - dx) / radial)
            y = np.where(converged, y, (yd - dy) / radial)
            redistorted = distort_normalized(np.stack([x, y], axis=-1), intr.dist)
            error_px = np.hypot(
                (redistorted[..., 0] - xd) * intr.fx,
                (redistorted[..., 1] - yd) * intr.fy,
            )
            converged = error_px < UNDISTORT_TOLERANCE_PX
            if converged.all():
                break
    return np.stack([x, y], axis=-1), converged


def undistort_pixel(p: ArrayLike, intr: CameraIntrinsics) -> Array:
    xy, converged = undistort_points(np.asarray(p, dtype=np.float64)[None], intr)
    if not converged[0]:
        raise NonConvergence(
            f"undistortion of pixel {tuple(np.asarray(p).tolist())} did not converge "
            f"in {UNDISTORT_MAX_ITERATIONS} iterations"
        )
    return xy[0]


def unit_rays(xy: Array, pose: CameraPose) -> Array:
    """World directions of the rays through normalized image points."""
    camera = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    world = rotate(pose.R, camera)
    return world / norm3(world)[..., None]


def back_project_points(
    p: ArrayLike, intr: CameraIntrinsics, pose: CameraPose
) -> tuple[Array, Mask]:
    """Intersect the rays through pixel-corner coordinates with the z=0 plane.

    Failed points (no undistortion, ray parallel to the plane or plane behind
    the camera) are NaN and False in the returned mask.
    """
    xy, converged = undistort_points(p, intr)
    rays = unit_rays(xy, pose)
    rz = rays[..., 2]
    with np.errstate(all="ignore"):
        lam = -pose.C[2] / rz
        points = lam[..., None] * rays + pose.C
        valid = converged & (np.abs(rz) > RAY_PARALLEL_TOLERANCE) & (lam > 0)
    points[..., 2] = 0.0
    points[~valid] = np.nan
    return points, valid


def back_project_corner(
    p: ArrayLike, intr: CameraIntrinsics, pose: CameraPose
) -> Array:
    xy = undistort_pixel(p, intr)
    ray = unit_rays(xy[None], pose)[0]
    if abs(ray[2]) <= RAY_PARALLEL_TOLERANCE:
        raise RayParallelToPlane(f"viewing ray through {tuple(xy)} is parallel")
    lam = -pose.C[2] / ray[2]
    if lam <= 0:
        raise IntersectionBehindCamera(
            f"reference plane lies behind the camera for corner {tuple(xy)}"
        )
    point: Array = lam * ray + pose.C
    point[2] = 0.0
    return point


def signed_areas(corners: Array) -> Array:
    x = corners[..., 0]
    y = corners[..., 1]
    xn = np.roll(x, -1, axis=-1)
    yn = np.roll(y, -1, axis=-1)
    return 0.5 * (x * yn - xn * y).sum(axis=-1)


def orient_counter_clockwise(corners: Array) -> Array:
    """Reorder quads (..., 4, 3) so they run counter-clockwise seen from +Z."""
    clockwise = signed_areas(corners) < 0
    oriented = corners.copy()
    oriented[clockwise] = corners[clockwise][:, [0, 3, 2, 1]]
    return oriented


def quad_centroids(corners: Array) -> Array:
    total = corners[..., 0, :] + corners[..., 1, :] + corners[..., 2, :]
    return (total + corners[..., 3, :]) / 4.0


def pixel_quads(
    us: ArrayLike, vs: ArrayLike, intr: CameraIntrinsics, pose: CameraPose
) -> tuple[Array, Mask]:
    """Plane quads (N, 4, 3) of integer pixels and the mask of those that exist."""
    pixels = np.stack(
        [np.asarray(us, dtype=np.float64), np.asarray(vs, dtype=np.float64)], -1
    )
    points, ok = back_project_points(pixels[..., None, :] + CORNER_OFFSETS, intr, pose)
    return orient_counter_clockwise(points), ok.all(axis=-1)


def lattice_quads(intr: CameraIntrinsics, pose: CameraPose) -> tuple[Array, Mask]:
    """Quads of every pixel, shape (height, width, 4, 3).

    Back-projects the (height+1) x (width+1) corner lattice once and shares it
    between neighbouring pixels.
    """
    us, vs = np.meshgrid(
        np.arange(intr.width + 1, dtype=np.float64),
        np.arange(intr.height + 1, dtype=np.float64),
    )
    points, ok = back_project_points(np.stack([us, vs], axis=-1), intr, pose)
    corners = np.stack(
        [points[:-1, :-1], points[:-1, 1:], points[1:, 1:], points[1:, :-1]], axis=2
    )
    valid = ok[:-1, :-1] & ok[:-1, 1:] & ok[1:, 1:] & ok[1:, :-1]
    return orient_counter_clockwise(corners), valid


def pixel_quad(
    px: tuple[int, int], intr: CameraIntrinsics, pose: CameraPose
) -> PlaneQuad:
    u, v = px
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise InputError(
            f"pixel {px} lies outside the {intr.width}x{intr.height} image"
        )
    corners = np.stack(
        [back_project_corner((u + du, v + dv), intr, pose) for du, dv in CORNER_OFFSETS]
    )
    corners = orient_counter_clockwise(corners[None])[0]
    return PlaneQuad(corners=corners, centroid=quad_centroids(corners))


def solid_angle_triangle(a: Array, b: Array, c: Array) -> Array:
    """Solid angle of spherical triangles given by unit vectors (Van Oosterom-Strackee).

    The triple product is taken on edge vectors, which keeps full relative
    precision for the tiny triangles pixel footprints produce.
    """
    numerator = np.abs(dot3(a, cross3(b - a, c - a)))
    denominator = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a)
    result: Array = 2.0 * np.arctan2(numerator, denominator)
    return result


def degenerate_directions(directions: Array) -> Mask:
    """True where any two of the four unit vectors are (anti)parallel."""
    bad = np.zeros(directions.shape[:-2], dtype=bool)
    limit = 1.0 - DIRECTION_DOT_TOLERANCE
    for i in range(4):
        for j in range(i + 1, 4):
            d = dot3(directions[..., i, :], directions[..., j, :])
            bad |= ~(np.abs(d) < limit)
    return bad


def quad_solid_angles(directions: Array) -> Array:
    """Solid angle of spherical quads (..., 4, 3), split along the 0-2 diagonal."""
    d0 = directions[..., 0, :]
    d1 = directions[..., 1, :]
    d2 = directions[..., 2, :]
    d3 = directions[..., 3, :]
    return solid_angle_triangle(d0, d1, d2) + solid_angle_triangle(d0, d2, d3)


def solid_angle_quad(directions: ArrayLike) -> float | Array:
    """Checked solid angle of one or more spherical quads of unit vectors."""
    directions = np.asarray(directions, dtype=np.float64)
    if degenerate_directions(directions).any():
        raise DegenerateQuad("quad has identical or antipodal vertex directions")
    omega = quad_solid_angles(directions)
    return float(omega) if omega.ndim == 0 else omega
