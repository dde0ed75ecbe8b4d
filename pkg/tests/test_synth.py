import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from lightcal.dataset import load_manifest
from lightcal.errors import InputError
from lightcal.geometry import CameraIntrinsics, lattice_quads
from lightcal.schemas import GroundTruth
from lightcal.synth import (
    DOWNWARD,
    ScenarioSpec,
    SyntheticScene,
    apply_noise,
    default_rid,
    generate_dataset,
    load_scenario,
    sample_poses,
    save_scenario,
    synthesize,
)


@pytest.fixture(name="small_spec")
def small_spec_fixture(small_intrinsics: CameraIntrinsics) -> ScenarioSpec:
    return ScenarioSpec(n_views=3, intrinsics=small_intrinsics, seed=4)


def test_default_rid():
    rid = default_rid()

    assert rid.samples[0] == (0.0, 1.0)
    assert rid.samples[-1] == (75.0, 0.0)
    assert all(b[1] <= a[1] for a, b in zip(rid.samples, rid.samples[1:]))


def test_single_fronto_parallel_pose():
    spec = ScenarioSpec(
        n_views=1, distance_range=(2.0, 2.0), tilt_range_deg=(0.0, 0.0), target_extent=0
    )

    (pose,) = sample_poses(spec)

    np.testing.assert_allclose(pose.R, DOWNWARD, atol=1e-15)
    np.testing.assert_allclose(pose.C, [0.0, 0.0, 2.0], atol=1e-15)


def test_poses_are_seeded_and_distinct():
    spec = ScenarioSpec()

    poses = sample_poses(spec)
    again = sample_poses(spec)
    other = sample_poses(spec.model_copy(update={"seed": 1}))

    assert len(poses) == 12
    for a, b in zip(poses, again):
        np.testing.assert_array_equal(a.R, b.R)
        np.testing.assert_array_equal(a.C, b.C)
    assert not np.array_equal(poses[0].C, other[0].C)

    centers = np.array([pose.C for pose in poses])
    gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    assert gaps[~np.eye(12, dtype=bool)].min() > 0
    for pose in poses:
        # along the optical axis down to the plane
        distance = pose.C[2] / -pose.R[2, 2]
        assert 1.5 <= distance <= 3.0
        tilt = np.degrees(np.arccos(-pose.R[2, 2]))
        assert tilt <= 30.0 + 1e-9
        _, valid = lattice_quads(spec.intrinsics, pose)
        assert valid.all()


def test_scenario_validation():
    with pytest.raises(ValidationError):
        ScenarioSpec(distance_range=(3.0, 1.0))
    with pytest.raises(ValidationError):
        ScenarioSpec(tilt_range_deg=(0.0, 60.0))
    with pytest.raises(ValidationError):
        ScenarioSpec(n_views=0)
    with pytest.raises(ValidationError):
        ScenarioSpec(noise_sigma=-0.1)


def test_clean_scene(scene: SyntheticScene):
    assert len(scene.dataset.views) == 12
    for view, clean in zip(scene.dataset.views, scene.clean_images):
        assert view.image is not clean
        np.testing.assert_array_equal(view.image, clean)
        assert 0.0 < view.image.max() < 1.0
        assert view.image.min() > 0.0


def test_gaussian_noise_statistics():
    spec = ScenarioSpec(noise_sigma=0.01, seed=9)
    flat = [np.full((1000, 1000), 0.5)]

    (noisy,) = apply_noise(flat, spec)

    deviation = noisy - 0.5
    assert abs(deviation.mean()) < 1e-4
    assert deviation.std() == pytest.approx(0.01 * 0.5, rel=0.05)
    np.testing.assert_array_equal(apply_noise(flat, spec)[0], noisy)


def test_noise_is_clipped_and_quantized():
    spec = ScenarioSpec(noise_sigma=0.5, quantization_bits=8)
    image = np.linspace(0.0, 1.0, 10000).reshape(100, 100)

    (noisy,) = apply_noise([image], spec)

    assert noisy.min() >= 0.0
    assert noisy.max() <= 1.0
    levels = noisy * 255.0
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)


def test_extrinsic_noise_only_touches_recorded_poses(small_spec: ScenarioSpec):
    clean = synthesize(small_spec)
    perturbed = synthesize(
        small_spec.model_copy(
            update={"extrinsic_noise_m": 0.01, "extrinsic_noise_deg": 0.5}
        )
    )

    for a, b in zip(clean.dataset.views, perturbed.dataset.views):
        np.testing.assert_array_equal(a.image, b.image)
        assert not np.allclose(a.pose.C, b.pose.C)
        assert np.abs(a.pose.C - b.pose.C).max() < 0.1
    for a, b in zip(clean.true_poses, perturbed.true_poses):
        np.testing.assert_array_equal(a.R, b.R)


def test_generate_dataset(small_spec: ScenarioSpec, tmp_path: Path):
    manifest = generate_dataset(small_spec, tmp_path)
    scene = synthesize(small_spec)

    loaded = load_manifest(manifest)
    sidecar = tmp_path / "ground_truth.json"
    truth = GroundTruth.model_validate_json(sidecar.read_text())

    assert manifest == tmp_path / "manifest.json"
    assert "ground_truth" not in manifest.read_text()
    assert len(loaded.views) == 3
    for view, expected in zip(loaded.views, scene.dataset.views):
        np.testing.assert_array_equal(view.image, expected.image.astype(np.float32))
        np.testing.assert_allclose(view.pose.R, expected.pose.R, atol=1e-12)
    assert truth.light.position == small_spec.light.position
    assert truth.light.scale == small_spec.light.scale
    assert len(truth.poses) == 3
    assert truth.scenario.n_views == 3


def test_generate_dataset_is_reproducible(small_spec: ScenarioSpec, tmp_path: Path):
    generate_dataset(small_spec, tmp_path / "a")
    generate_dataset(small_spec, tmp_path / "b")

    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*"))
    assert Path("images/view_002.pfm") in files
    for name in files:
        first = tmp_path / "a" / name
        if first.is_file():
            assert first.read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_scenario_file_round_trip(small_spec: ScenarioSpec, tmp_path: Path):
    path = tmp_path / "scenario.json"
    spec = small_spec.model_copy(update={"noise_sigma": 0.01, "quantization_bits": 12})

    save_scenario(path, spec)
    loaded = load_scenario(path)
    data = json.loads(path.read_text())

    assert data["light"]["pitch_deg"] == pytest.approx(-8.0)
    assert data["characteristic"]["kind"] == "rid"
    assert loaded.intrinsics == spec.intrinsics
    assert loaded.light.position == spec.light.position
    assert loaded.light.pitch == pytest.approx(spec.light.pitch, rel=1e-15)
    assert loaded.light.characteristic == spec.light.characteristic
    assert loaded.model_dump(exclude={"light"}) == spec.model_dump(exclude={"light"})


def test_malformed_scenario(tmp_path: Path):
    path = tmp_path / "scenario.json"
    data = ScenarioSpec().to_file().model_dump(mode="json")
    data["n_views"] = "many"
    path.write_text(json.dumps(data))

    with pytest.raises(InputError, match="n_views"):
        load_scenario(path)
    with pytest.raises(InputError, match="cannot read"):
        load_scenario(tmp_path / "missing.json")
