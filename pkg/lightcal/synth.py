"""Synthetic multi-view datasets rendered from a known light.

Used as the ground-truth oracle: a dataset generated here and calibrated with
`lightcal.solver.calibrate` must give back the light it was rendered with.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.transform import Rotation

from lightcal.dataset import Dataset, ViewRecord, write_dataset
from lightcal.errors import InputError
from lightcal.geometry import Array, CameraIntrinsics, CameraPose
from lightcal.photometry import LightModel, RIDCurve, render_image
from lightcal.schemas import (
    GroundTruth,
    LightPose,
    PoseEntry,
    ScenarioFile,
    describe_validation_error,
)

logger = logging.getLogger(__name__)

# camera looking straight down at the plane
DOWNWARD = np.diag([1.0, -1.0, -1.0])
# the plane must stay below the horizon of every corner ray
MAX_OFF_AXIS_DEG = 85.0


def default_rid(cutoff_deg: float = 75.0, step_deg: float = 2.5) -> RIDCurve:
    """Reflector-like profile falling smoothly to zero at `cutoff_deg`."""
    thetas = np.arange(0.0, cutoff_deg + step_deg / 2, step_deg)
    values = np.cos(0.5 * np.pi * thetas / cutoff_deg) ** 2
    values[-1] = 0.0
    return RIDCurve(samples=tuple(zip(thetas.tolist(), values.tolist())))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240
    )


def default_light() -> LightModel:
    return LightModel(
        position=(0.15, -0.05, 0.02),
        roll=math.radians(6.0),
        pitch=math.radians(-8.0),
        characteristic=default_rid(),
        scale=1.5e5,
    )


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_views: int = Field(12, ge=1)
    distance_range: tuple[float, float] = (1.5, 3.0)
    tilt_range_deg: tuple[float, float] = (0.0, 30.0)
    # half size of the square the cameras aim into, meters
    target_extent: float = Field(0.5, ge=0)
    light: LightModel = Field(default_factory=default_light)
    intrinsics: CameraIntrinsics = Field(default_factory=default_intrinsics)
    # gaussian sigma as a fraction of the brightest noise-free pixel
    noise_sigma: float = Field(0.0, ge=0)
    quantization_bits: int | None = Field(None, ge=1, le=32)
    extrinsic_noise_m: float = Field(0.0, ge=0)
    extrinsic_noise_deg: float = Field(0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_ranges(self) -> "ScenarioSpec":
        low, high = self.distance_range
        if not 0 < low <= high:
            raise ValueError("distance_range must be positive and ordered")
        low, high = self.tilt_range_deg
        if not 0 <= low <= high:
            raise ValueError("tilt_range_deg must be non-negative and ordered")
        intr = self.intrinsics
        half_diagonal = math.degrees(
            math.atan(
                math.hypot(
                    max(intr.cx, intr.width - intr.cx) / intr.fx,
                    max(intr.cy, intr.height - intr.cy) / intr.fy,
                )
            )
        )
        if high + half_diagonal >= MAX_OFF_AXIS_DEG:
            raise ValueError(
                f"tilt up to {high} deg with a {half_diagonal:.1f} deg half field of "
                "view would show the horizon"
            )
        return self

    def to_file(self) -> ScenarioFile:
        return ScenarioFile(
            n_views=self.n_views,
            distance_range=self.distance_range,
            tilt_range_deg=self.tilt_range_deg,
            target_extent=self.target_extent,
            light=LightPose.from_light(self.light),
            characteristic=self.light.characteristic,
            intrinsics=self.intrinsics,
            noise_sigma=self.noise_sigma,
            quantization_bits=self.quantization_bits,
            extrinsic_noise_m=self.extrinsic_noise_m,
            extrinsic_noise_deg=self.extrinsic_noise_deg,
            seed=self.seed,
        )

    @classmethod
    def from_file(cls, scenario: ScenarioFile) -> "ScenarioSpec":
        fields = scenario.model_dump(exclude={"light", "characteristic"})
        fields["intrinsics"] = scenario.intrinsics
        fields["light"] = scenario.light.to_light(scenario.characteristic)
        return cls(**fields)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """A dataset in memory plus the truth it was rendered from."""

    dataset: Dataset
    true_poses: tuple[CameraPose, ...]
    clean_images: tuple[Array, ...]
    spec: ScenarioSpec


def sample_poses(spec: ScenarioSpec) -> list[CameraPose]:
    """Cameras at random distances and tilts, aimed into the central region."""
    rng = np.random.default_rng(spec.seed)
    poses = []
    for _ in range(spec.n_views):
        distance = rng.uniform(*spec.distance_range)
        tilt = math.radians(rng.uniform(*spec.tilt_range_deg))
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        tx, ty = rng.uniform(-spec.target_extent, spec.target_extent, size=2)

        tilt_axis = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        R = Rotation.from_rotvec(tilt * tilt_axis).as_matrix() @ DOWNWARD
        C = np.array([tx, ty, 0.0]) - distance * R[:, 2]
        poses.append(CameraPose(R=R, C=C))
    return poses


def render_views(spec: ScenarioSpec, poses: list[CameraPose]) -> list[Array]:
    images = []
    for index, pose in enumerate(poses):
        image, valid = render_image(spec.intrinsics, pose, spec.light)
        if not valid.all():
            logger.warning("view %d: %d pixels not rendered", index, (~valid).sum())
        images.append(image)
    return images


def apply_noise(images: list[Array], spec: ScenarioSpec) -> list[Array]:
    """Additive gaussian noise, clipped at zero, then optional quantization."""
    rng = np.random.default_rng([spec.seed, 1])
    peak = max(float(image.max()) for image in images)
    noisy = []
    for image in images:
        result = image.copy()
        if spec.noise_sigma > 0:
            result = result + rng.normal(0.0, spec.noise_sigma * peak, result.shape)
            result = np.maximum(result, 0.0)
        if spec.quantization_bits is not None:
            levels = 2.0**spec.quantization_bits - 1.0
            result = np.round(np.clip(result, 0.0, 1.0) * levels) / levels
        noisy.append(result)
    return noisy


def perturb_poses(poses: list[CameraPose], spec: ScenarioSpec) -> list[CameraPose]:
    """Poses as an imperfect extrinsic calibration would report them."""
    if spec.extrinsic_noise_m == 0 and spec.extrinsic_noise_deg == 0:
        return list(poses)
    rng = np.random.default_rng([spec.seed, 2])
    perturbed = []
    for pose in poses:
        rotvec = rng.normal(0.0, math.radians(spec.extrinsic_noise_deg), 3)
        shift = rng.normal(0.0, spec.extrinsic_noise_m, 3)
        R = Rotation.from_rotvec(rotvec).as_matrix() @ pose.R
        perturbed.append(CameraPose(R=R, C=pose.C + shift))
    return perturbed


def synthesize(spec: ScenarioSpec) -> SyntheticScene:
    poses = sample_poses(spec)
    clean = render_views(spec, poses)
    images = apply_noise(clean, spec)
    recorded = perturb_poses(poses, spec)
    views = tuple(
        ViewRecord(index=i, pose=pose, image=image)
        for i, (pose, image) in enumerate(zip(recorded, images))
    )
    dataset = Dataset(
        intrinsics=spec.intrinsics,
        characteristic=spec.light.characteristic,
        views=views,
    )
    return SyntheticScene(
        dataset=dataset, true_poses=tuple(poses), clean_images=tuple(clean), spec=spec
    )


def generate_dataset(spec: ScenarioSpec, out_dir: Path) -> Path:
    """Write a synthetic dataset and its ground-truth sidecar; returns the manifest."""
    scene = synthesize(spec)
    out_dir = Path(out_dir)
    manifest_path = write_dataset(scene.dataset, out_dir)
    truth = GroundTruth(
        light=LightPose.from_light(spec.light),
        poses=[
            PoseEntry(R=pose.R.ravel().tolist(), C=pose.C.tolist())
            for pose in scene.true_poses
        ],
        scenario=spec.to_file(),
    )
    (out_dir / "ground_truth.json").write_text(truth.model_dump_json(indent=2) + "\n")
    logger.info("wrote %d views to %s", spec.n_views, out_dir)
    return manifest_path


def load_scenario(path: Path) -> ScenarioSpec:
    try:
        scenario = ScenarioFile.model_validate_json(Path(path).read_text())
        return ScenarioSpec.from_file(scenario)
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}") from exc
    except ValidationError as exc:
        raise InputError(f"{path}: {describe_validation_error(exc)}") from exc


def save_scenario(path: Path, spec: ScenarioSpec) -> None:
    Path(path).write_text(spec.to_file().model_dump_json(indent=2) + "\n")
