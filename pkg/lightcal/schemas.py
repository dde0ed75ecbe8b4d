import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from lightcal.config import MANIFEST_VERSION, REPORT_VERSION
from lightcal.geometry import CameraIntrinsics
from lightcal.photometry import Characteristic, LightModel


def describe_validation_error(exc: ValidationError) -> str:
    """One line per offending field, e.g. ``views.0.C: List should have ...``."""
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{location}: {error['msg']}")
    return "; ".join(lines)


class LightPose(BaseModel):
    """Light pose as written to files: angles in degrees."""

    model_config = ConfigDict(extra="forbid")

    position: tuple[float, float, float]
    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: float = 0.0
    scale: float = Field(gt=0)

    def to_light(self, characteristic: Characteristic) -> LightModel:
        return LightModel(
            position=self.position,
            roll=math.radians(self.roll_deg),
            pitch=math.radians(self.pitch_deg),
            yaw=math.radians(self.yaw_deg),
            characteristic=characteristic,
            scale=self.scale,
        )

    @classmethod
    def from_light(cls, light: LightModel) -> "LightPose":
        return cls(
            position=light.position,
            roll_deg=math.degrees(light.roll),
            pitch_deg=math.degrees(light.pitch),
            yaw_deg=math.degrees(light.yaw),
            scale=light.scale,
        )


class CharacteristicRef(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["isotropic", "rid", "grid"]
    file: str | None = None


class ViewEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image: str
    R: list[float]
    C: list[float]
    exposure: float = Field(1.0, gt=0)
    linearization: float = Field(1.0, gt=0)

    @field_validator("R")
    @classmethod
    def check_rotation_length(cls, value: list[float]) -> list[float]:
        if len(value) != 9:
            raise ValueError("R must hold 9 numbers (row-major 3x3)")
        return value

    @field_validator("C")
    @classmethod
    def check_center_length(cls, value: list[float]) -> list[float]:
        if len(value) != 3:
            raise ValueError("C must hold 3 numbers")
        return value


class Manifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = MANIFEST_VERSION
    intrinsics: CameraIntrinsics
    light: CharacteristicRef
    views: list[ViewEntry]

    @field_validator("version")
    @classmethod
    def check_version(cls, value: int) -> int:
        if value != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {value}")
        return value


class PoseEntry(BaseModel):
    R: list[float]
    C: list[float]


class ScenarioFile(BaseModel):
    """Synthetic scenario as stored on disk (angles in degrees)."""

    model_config = ConfigDict(extra="forbid")

    n_views: int = 12
    distance_range: tuple[float, float] = (1.5, 3.0)
    tilt_range_deg: tuple[float, float] = (0.0, 30.0)
    target_extent: float = 0.5
    light: LightPose
    characteristic: Characteristic
    intrinsics: CameraIntrinsics
    noise_sigma: float = 0.0
    quantization_bits: int | None = None
    extrinsic_noise_m: float = 0.0
    extrinsic_noise_deg: float = 0.0
    seed: int = 0


class GroundTruth(BaseModel):
    light: LightPose
    poses: list[PoseEntry]
    scenario: ScenarioFile


class ParameterSpread(BaseModel):
    mean: float
    std: float


class RunReport(BaseModel):
    n_views: int
    status: Literal["converged", "max_iterations", "stalled"]
    iterations: int
    cost: float
    cost_trace: list[float]
    n_samples: int
    light: LightPose
    parameter_names: list[str]
    # null where undefined (too few samples, views without samples)
    standard_errors: list[float | None]
    per_view_rms: list[float | None]


class ResultReport(BaseModel):
    version: int = REPORT_VERSION
    estimate: RunReport
    subsets: list[RunReport] = []
    consistency: dict[str, ParameterSpread] = {}
