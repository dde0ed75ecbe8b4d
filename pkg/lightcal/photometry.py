"""Light characteristics, Lambertian reflection and the per-pixel renderer.

A pixel is rendered by back-projecting its four corners onto the z=0 plane,
measuring the solid angle the resulting quad subtends at the light, weighting
it by the light's angular characteristic and scale, and finally applying the
cosine law and the inverse square falloff towards the camera.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial.transform import Rotation

from lightcal.config import GRID_THETA_MAX_DEG, MIN_DISTANCE, MIN_LIGHT_HEIGHT
from lightcal.errors import DegenerateQuad, LightOnPlane, ZeroDistance
from lightcal.geometry import (
    Array,
    CameraIntrinsics,
    CameraPose,
    Mask,
    PlaneQuad,
    degenerate_directions,
    dot3,
    lattice_quads,
    norm3,
    pixel_quad,
    quad_centroids,
    quad_solid_angles,
    rotate,
)

logger = logging.getLogger(__name__)

E_Z = np.array([0.0, 0.0, 1.0])


class IsotropicCharacteristic(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["isotropic"] = "isotropic"

    def evaluate(self, theta: Array, phi: Array) -> Array:
        return np.ones_like(theta)


class RIDCurve(BaseModel):
    """Rotationally symmetric intensity over the angle from the central axis.

    `samples` are (theta in degrees, relative intensity) pairs, interpolated
    linearly. Nothing is emitted beyond the last sample.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["rid"] = "rid"
    samples: tuple[tuple[float, float], ...]

    @field_validator("samples")
    @classmethod
    def check_samples(
        cls, samples: tuple[tuple[float, float], ...]
    ) -> tuple[tuple[float, float], ...]:
        if not samples:
            raise ValueError("RID curve needs at least one sample")
        thetas = [t for t, _ in samples]
        if thetas[0] != 0.0:
            raise ValueError("first RID sample must be at theta = 0")
        if any(b <= a for a, b in zip(thetas, thetas[1:])):
            raise ValueError("RID theta values must be strictly increasing")
        if thetas[-1] > 180.0:
            raise ValueError("RID theta values must not exceed 180 degrees")
        if any(e < 0 or not math.isfinite(e) for _, e in samples):
            raise ValueError("RID intensities must be finite and non-negative")
        return samples

    @cached_property
    def theta_deg(self) -> Array:
        return np.array([t for t, _ in self.samples], dtype=np.float64)

    @cached_property
    def values(self) -> Array:
        return np.array([e for _, e in self.samples], dtype=np.float64)

    def evaluate(self, theta: Array, phi: Array) -> Array:
        result: Array = np.interp(
            np.degrees(theta), self.theta_deg, self.values, right=0.0
        )
        return result


class RadianceGrid(BaseModel):
    """Relative intensity over (theta, phi) around the central axis.

    Rows sample theta uniformly on [0, 90] degrees, columns sample phi
    uniformly on [0, 360) degrees. Lookup is bilinear and periodic in phi.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["grid"] = "grid"
    values: tuple[tuple[float, ...], ...]

    @field_validator("values")
    @classmethod
    def check_values(
        cls, values: tuple[tuple[float, ...], ...]
    ) -> tuple[tuple[float, ...], ...]:
        if len(values) < 2:
            raise ValueError("radiance grid needs n_theta >= 2")
        widths = {len(row) for row in values}
        if len(widths) != 1:
            raise ValueError("radiance grid rows must have equal length")
        if widths.pop() < 4:
            raise ValueError("radiance grid needs n_phi >= 4")
        if any(v < 0 or not math.isfinite(v) for row in values for v in row):
            raise ValueError("radiance grid entries must be finite and non-negative")
        return values

    @cached_property
    def array(self) -> Array:
        return np.array(self.values, dtype=np.float64)

    @property
    def resolution(self) -> tuple[int, int]:
        n_theta, n_phi = self.array.shape
        return n_theta, n_phi

    def evaluate(self, theta: Array, phi: Array) -> Array:
        grid = self.array
        n_theta, n_phi = grid.shape
        t = np.degrees(theta) / (GRID_THETA_MAX_DEG / (n_theta - 1))
        inside = t <= n_theta - 1
        j0 = np.clip(np.floor(np.where(inside, t, 0.0)).astype(np.intp), 0, n_theta - 2)
        a = np.where(inside, t, 0.0) - j0

        f = np.mod(phi, 2.0 * np.pi) / (2.0 * np.pi / n_phi)
        k = np.floor(f)
        b = f - k
        k0 = k.astype(np.intp) % n_phi
        k1 = (k0 + 1) % n_phi

        row0 = grid[j0, k0] * (1.0 - b) + grid[j0, k1] * b
        row1 = grid[j0 + 1, k0] * (1.0 - b) + grid[j0 + 1, k1] * b
        return np.where(inside, row0 * (1.0 - a) + row1 * a, 0.0)

    def profile(self) -> RIDCurve:
        """The theta profile of the first phi column as a RID curve."""
        n_theta = self.array.shape[0]
        step = GRID_THETA_MAX_DEG / (n_theta - 1)
        return RIDCurve(
            samples=tuple((j * step, float(self.array[j, 0])) for j in range(n_theta))
        )


Characteristic = Annotated[
    Union[IsotropicCharacteristic, RIDCurve, RadianceGrid], Field(discriminator="kind")
]


def light_axis(roll: float, pitch: float) -> Array:
    """Central axis in the camera frame.

    +Z rotated by roll about X, then by pitch about Y.
    """
    axis: Array = Rotation.from_euler("xy", [roll, pitch]).as_matrix()[:, 2]
    return axis


class LightModel(BaseModel):
    """A point light rigidly mounted on the camera.

    `position` (meters) and the angles (radians) are expressed in the camera
    frame. `yaw` turns the light about its own central axis and only matters
    for radiance grids.
    """

    model_config = ConfigDict(frozen=True)

    position: tuple[float, float, float]
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    characteristic: Characteristic
    scale: float = Field(gt=0)

    @property
    def kind(self) -> str:
        return self.characteristic.kind

    @property
    def axis(self) -> Array:
        return light_axis(self.roll, self.pitch)

    @property
    def rotation(self) -> Array:
        """Light-to-camera rotation, Ry(pitch) @ Rx(roll) @ Rz(yaw)."""
        matrix: Array = Rotation.from_euler(
            "zxy", [self.yaw, self.roll, self.pitch]
        ).as_matrix()
        return matrix


@dataclass(frozen=True, eq=False)
class PlacedLight:
    """A light expressed in the reference plane frame for one camera pose."""

    origin: Array
    axis: Array
    rotation: Array
    characteristic: IsotropicCharacteristic | RIDCurve | RadianceGrid
    scale: float

    def evaluate(self, directions: Array) -> Array:
        """Relative intensity emitted along unit world directions (..., 3)."""
        ch = self.characteristic
        if isinstance(ch, IsotropicCharacteristic):
            return np.ones(directions.shape[:-1])
        if isinstance(ch, RIDCurve):
            theta = np.arccos(np.clip(dot3(directions, self.axis), -1.0, 1.0))
            return ch.evaluate(theta, theta)
        local = rotate(self.rotation.T, directions)
        theta = np.arccos(np.clip(local[..., 2], -1.0, 1.0))
        phi = np.arctan2(local[..., 1], local[..., 0])
        return ch.evaluate(theta, phi)


def place_light(light: LightModel, pose: CameraPose) -> PlacedLight:
    origin = pose.C + rotate(pose.R, np.asarray(light.position, dtype=np.float64))
    if isinstance(light.characteristic, RadianceGrid):
        rotation: Array = pose.R @ light.rotation
    else:
        rotation = np.asarray(pose.R)
    return PlacedLight(
        origin=origin,
        axis=rotate(pose.R, light.axis),
        rotation=rotation,
        characteristic=light.characteristic,
        scale=light.scale,
    )


def quad_irradiance(
    corners: Array, centroids: Array, light: PlacedLight
) -> tuple[Array, Mask]:
    """Relative energy `s * omega * mean(E)` arriving on plane quads (N, 4, 3)."""
    with np.errstate(all="ignore"):
        rel = corners - light.origin
        dist = norm3(rel)
        directions = rel / dist[..., None]
        rel_c = centroids - light.origin
        centroid_dir = rel_c / norm3(rel_c)[..., None]

        omega = quad_solid_angles(directions)
        e = light.evaluate(
            np.concatenate([directions, centroid_dir[..., None, :]], axis=-2)
        )
        mean_e = (e[..., 0] + e[..., 1] + e[..., 2] + e[..., 3] + e[..., 4]) / 5.0
        irradiance = light.scale * (omega * mean_e)
        ok = (dist > 0).all(axis=-1) & ~degenerate_directions(directions)
    return irradiance, ok


def reflected(
    irradiance: Array, points: Array, light_origin: Array, camera_center: Array
) -> tuple[Array, Mask]:
    """Lambert cosine and inverse square falloff to the camera."""
    with np.errstate(all="ignore"):
        to_point = points - light_origin
        span = norm3(to_point)
        # -n.l with n = +Z
        cosine = np.maximum(-to_point[..., 2] / span, 0.0)
        to_camera = points - camera_center
        d2 = dot3(to_camera, to_camera)
        value = irradiance * cosine / d2
        ok = (span >= MIN_DISTANCE) & (d2 >= MIN_DISTANCE * MIN_DISTANCE)
    return value, ok


def render_quads(
    corners: Array, quad_ok: Mask, pose: CameraPose, light: LightModel
) -> tuple[Array, Mask]:
    """Rendered intensities of prepared quads; invalid entries are 0 and False."""
    placed = place_light(light, pose)
    if placed.origin[2] <= MIN_LIGHT_HEIGHT:
        return np.zeros(quad_ok.shape), np.zeros(quad_ok.shape, dtype=bool)
    centroids = quad_centroids(corners)
    irradiance, ok_i = quad_irradiance(corners, centroids, placed)
    value, ok_r = reflected(irradiance, centroids, placed.origin, pose.C)
    valid = quad_ok & ok_i & ok_r
    return np.where(valid, value, 0.0), valid


def incident_irradiance(quad: PlaneQuad, light: LightModel, pose: CameraPose) -> float:
    """Energy reaching one quad from `light` mounted on a camera at `pose`."""
    placed = place_light(light, pose)
    if placed.origin[2] <= MIN_LIGHT_HEIGHT:
        raise LightOnPlane(f"light at z={placed.origin[2]:.3g} is not above the plane")
    irradiance, ok = quad_irradiance(quad.corners[None], quad.centroid[None], placed)
    if not ok[0]:
        raise DegenerateQuad("quad vertices are degenerate as seen from the light")
    return float(irradiance[0])


def reflect_to_camera(
    irradiance: float, point: Array, light: LightModel, pose: CameraPose
) -> float:
    placed = place_light(light, pose)
    value, ok = reflected(
        np.array([irradiance]), np.asarray(point)[None], placed.origin, pose.C
    )
    if not ok[0]:
        raise ZeroDistance("plane point coincides with the light or the camera")
    return float(value[0])


def render_pixel(
    px: tuple[int, int], intr: CameraIntrinsics, pose: CameraPose, light: LightModel
) -> float:
    quad = pixel_quad(px, intr, pose)
    irradiance = incident_irradiance(quad, light, pose)
    return reflect_to_camera(irradiance, quad.centroid, light, pose)


def render_image(
    intr: CameraIntrinsics, pose: CameraPose, light: LightModel
) -> tuple[Array, Mask]:
    """Linear-intensity image (height, width) and the mask of rendered pixels."""
    corners, quad_ok = lattice_quads(intr, pose)
    image, valid = render_quads(corners, quad_ok, pose, light)
    if not valid.all():
        logger.debug(
            "%d of %d pixels could not be rendered", (~valid).sum(), valid.size
        )
    return image, valid
