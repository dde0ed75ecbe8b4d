"""Views, manifests and the image/curve file formats.

Images are PFM (single channel, little-endian, float32) or 16-bit PGM with a
linearization factor. Manifests are JSON validated by `lightcal.schemas`.
"""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from pydantic import ValidationError

from lightcal.config import MANIFEST_ROTATION_TOLERANCE
from lightcal.errors import InputError, LightcalError
from lightcal.geometry import Array, CameraIntrinsics, CameraPose, nearest_rotation
from lightcal.photometry import (
    Characteristic,
    IsotropicCharacteristic,
    LightModel,
    RadianceGrid,
    RIDCurve,
)
from lightcal.schemas import (
    CharacteristicRef,
    LightPose,
    Manifest,
    ViewEntry,
    describe_validation_error,
)

logger = logging.getLogger(__name__)

RID_HEADER = "theta_deg,intensity"
GRID_HEADER = "n_theta,n_phi"
CHARACTERISTIC_FILES = {"rid": "rid.csv", "grid": "grid.csv"}


@dataclass(frozen=True, eq=False)
class ViewRecord:
    index: int
    pose: CameraPose
    image: Array
    exposure: float = 1.0
    source: str | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    intrinsics: CameraIntrinsics
    characteristic: Characteristic
    views: tuple[ViewRecord, ...]

    def subset(self, n_views: int) -> "Dataset":
        """The first `n_views` views."""
        if not 1 <= n_views <= len(self.views):
            raise InputError(
                f"cannot take {n_views} views from a dataset of {len(self.views)}"
            )
        return replace(self, views=self.views[:n_views])


def read_pfm(path: Path) -> Array:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc.strerror}") from exc

    match = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", raw)
    if match is None:
        raise InputError(f"{path} is not a PFM file")
    if match.group(1) != b"Pf":
        raise InputError(f"{path} is a color PFM, expected a single channel")
    width, height = int(match.group(2)), int(match.group(3))
    scale = float(match.group(4))
    dtype = "<f4" if scale < 0 else ">f4"

    data = np.frombuffer(raw, dtype=dtype, offset=match.end())
    if data.size != width * height:
        raise InputError(f"{path}: expected {width * height} samples, got {data.size}")
    # PFM rows run bottom to top
    return np.flipud(data.reshape(height, width)).astype(np.float64)


def write_pfm(path: Path, image: Array) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PFM images must be single channel (height, width)")
    height, width = image.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(np.flipud(image), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pgm(path: Path, linearization: float = 1.0) -> Array:
    try:
        with Image.open(path) as img:
            data = np.asarray(img, dtype=np.float64)
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    if data.ndim != 2:
        raise InputError(f"{path} is not a single channel image")
    result: Array = data * linearization
    return result


def read_image(path: Path, linearization: float = 1.0) -> Array:
    if Path(path).suffix.lower() == ".pgm":
        return read_pgm(path, linearization)
    return read_pfm(path) * linearization


def load_characteristic(path: Path | None, kind: str) -> Characteristic:
    if kind == "isotropic":
        return IsotropicCharacteristic()
    if path is None:
        raise InputError(f"light type {kind!r} needs a characteristic file")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read light characteristic {path}") from exc

    lines = [line.strip() for line in text.splitlines() if line.strip()]
    try:
        if kind == "rid":
            if not lines or lines[0] != RID_HEADER:
                raise InputError(f"{path}: expected header {RID_HEADER!r}")
            rows = [tuple(float(x) for x in line.split(",")) for line in lines[1:]]
            if any(len(row) != 2 for row in rows):
                raise InputError(f"{path}: every row needs theta_deg and intensity")
            return RIDCurve(samples=tuple((row[0], row[1]) for row in rows))
        if kind == "grid":
            if not lines or lines[0] != GRID_HEADER or len(lines) < 2:
                raise InputError(f"{path}: expected header {GRID_HEADER!r}")
            n_theta, n_phi = (int(x) for x in lines[1].split(","))
            rows = [tuple(float(x) for x in line.split(",")) for line in lines[2:]]
            if len(rows) != n_theta or any(len(row) != n_phi for row in rows):
                raise InputError(f"{path}: grid is not {n_theta} x {n_phi}")
            return RadianceGrid(values=tuple(rows))
    except ValueError as exc:
        detail = (
            describe_validation_error(exc)
            if isinstance(exc, ValidationError)
            else str(exc)
        )
        raise InputError(f"{path}: {detail}") from exc
    raise InputError(f"unknown light type {kind!r}")


def save_characteristic(path: Path, characteristic: Characteristic) -> None:
    if isinstance(characteristic, RIDCurve):
        rows = [f"{t!r},{e!r}" for t, e in characteristic.samples]
        Path(path).write_text("\n".join([RID_HEADER, *rows]) + "\n")
    elif isinstance(characteristic, RadianceGrid):
        n_theta, n_phi = characteristic.resolution
        rows = [",".join(repr(v) for v in row) for row in characteristic.values]
        Path(path).write_text(
            "\n".join([GRID_HEADER, f"{n_theta},{n_phi}", *rows]) + "\n"
        )
    else:
        raise ValueError("isotropic lights have no characteristic file")


def load_light(path: Path, characteristic: Characteristic) -> LightModel:
    try:
        pose = LightPose.model_validate_json(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read light file {path}") from exc
    except ValidationError as exc:
        raise InputError(f"{path}: {describe_validation_error(exc)}") from exc
    return pose.to_light(characteristic)


def save_light(path: Path, light: LightModel) -> None:
    Path(path).write_text(LightPose.from_light(light).model_dump_json(indent=2) + "\n")


def _pose_from_entry(entry: ViewEntry, where: str) -> CameraPose:
    R = np.asarray(entry.R, dtype=np.float64).reshape(3, 3)
    if np.abs(R.T @ R - np.eye(3)).max() >= MANIFEST_ROTATION_TOLERANCE:
        raise InputError(f"{where}: R is not a rotation matrix")
    try:
        return CameraPose(R=nearest_rotation(R), C=np.asarray(entry.C))
    except LightcalError as exc:
        raise InputError(f"{where}: {exc.detail}") from exc


def load_manifest(path: Path) -> Dataset:
    path = Path(path)
    try:
        manifest = Manifest.model_validate_json(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}") from exc
    except ValidationError as exc:
        raise InputError(f"{path}: {describe_validation_error(exc)}") from exc

    base = path.parent
    ref = manifest.light
    characteristic = load_characteristic(
        base / ref.file if ref.file is not None else None, ref.type
    )
    intr = manifest.intrinsics
    views = []
    for index, entry in enumerate(manifest.views):
        where = f"{path}: views.{index}"
        image_path = base / entry.image
        if not image_path.is_file():
            raise InputError(f"{where}: image {image_path} does not exist")
        image = read_image(image_path, entry.linearization)
        if image.shape != (intr.height, intr.width):
            raise InputError(
                f"{where}: image is {image.shape[1]}x{image.shape[0]}, "
                f"intrinsics say {intr.width}x{intr.height}"
            )
        views.append(
            ViewRecord(
                index=index,
                pose=_pose_from_entry(entry, where),
                image=image,
                exposure=entry.exposure,
                source=str(image_path),
            )
        )
    logger.info("loaded %d views from %s", len(views), path)
    return Dataset(intrinsics=intr, characteristic=characteristic, views=tuple(views))


def write_dataset(dataset: Dataset, out_dir: Path) -> Path:
    """Write images, the characteristic file and `manifest.json` under `out_dir`."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    kind = dataset.characteristic.kind
    file_name = CHARACTERISTIC_FILES.get(kind)
    if file_name is not None:
        save_characteristic(out_dir / file_name, dataset.characteristic)

    entries = []
    for view in dataset.views:
        name = f"images/view_{view.index:03d}.pfm"
        write_pfm(out_dir / name, view.image)
        entries.append(
            ViewEntry(
                image=name,
                R=view.pose.R.ravel().tolist(),
                C=view.pose.C.tolist(),
                exposure=view.exposure,
            )
        )
    manifest = Manifest(
        intrinsics=dataset.intrinsics,
        light=CharacteristicRef(type=kind, file=file_name),
        views=entries,
    )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n")
    return manifest_path
