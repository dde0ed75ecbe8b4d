import math

import numpy as np
import pytest

from lightcal.geometry import CameraIntrinsics, CameraPose
from lightcal.photometry import IsotropicCharacteristic, LightModel, RIDCurve
from lightcal.synth import DOWNWARD, ScenarioSpec, SyntheticScene, synthesize


@pytest.fixture(name="rid")
def rid_fixture() -> RIDCurve:
    # cos^2 falloff sampled every degree, dark beyond 80 degrees
    thetas = np.arange(0.0, 81.0, 1.0)
    values = np.cos(0.5 * np.pi * thetas / 80.0) ** 2
    values[-1] = 0.0
    return RIDCurve(samples=tuple(zip(thetas.tolist(), values.tolist())))


@pytest.fixture(name="downward_pose")
def downward_pose_fixture() -> CameraPose:
    return CameraPose(R=DOWNWARD, C=[0.0, 0.0, 2.0])


@pytest.fixture(name="small_intrinsics")
def small_intrinsics_fixture() -> CameraIntrinsics:
    return CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0, width=64, height=48)


@pytest.fixture(name="isotropic_light")
def isotropic_light_fixture() -> LightModel:
    return LightModel(
        position=(0.0, 0.0, 0.0), characteristic=IsotropicCharacteristic(), scale=1.0
    )


@pytest.fixture(name="scene", scope="session")
def scene_fixture() -> SyntheticScene:
    return synthesize(ScenarioSpec())


@pytest.fixture(name="truth", scope="session")
def truth_fixture(scene: SyntheticScene) -> LightModel:
    return scene.spec.light


@pytest.fixture(name="far_init", scope="session")
def far_init_fixture(truth: LightModel) -> LightModel:
    """30 degrees of pitch and one meter of position away from the truth."""
    x, y, z = truth.position
    return truth.model_copy(
        update={
            "position": (x + 0.6, y, z - 0.8),
            "pitch": truth.pitch + math.radians(30.0),
            "scale": truth.scale * 3.0,
        }
    )
