"""Light pose and scale estimation by damped nonlinear least squares.

The unknowns are packed as ``[x, y, z, (roll, pitch, (yaw)), log_s]`` in the
camera frame, depending on the light characteristic. Residuals compare sampled
pixel intensities with renders of the same pixels; the Jacobian is taken by
central differences and the cost `0.5 * |r|^2` is minimized with
Levenberg-Marquardt using Marquardt's diagonal scaling.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from lightcal.config import (
    ANGLE_STEP,
    COST_TOLERANCE,
    DAMPING_FACTOR,
    FLAT_COLUMN_FRACTION,
    FLOOR_THRESHOLD,
    GRADIENT_TOLERANCE,
    INITIAL_DAMPING,
    LOG_SCALE_STEP,
    MAX_CONDITION,
    MAX_DAMPING,
    MAX_ITERATIONS,
    MIN_LIGHT_HEIGHT,
    PARAMETER_TOLERANCE,
    PIXELS_PER_IMAGE,
    POSITION_STEP,
    SATURATION_THRESHOLD,
    SEED,
    SENTINEL_FACTOR,
    ZERO_RENDER_WARNING_FRACTION,
)
from lightcal.dataset import Dataset, ViewRecord
from lightcal.errors import (
    DegenerateDataset,
    InputError,
    InsufficientValidPixels,
    LightOnPlane,
)
from lightcal.geometry import Array, CameraIntrinsics, CameraPose, Mask, pixel_quads
from lightcal.photometry import LightModel, place_light, render_quads

logger = logging.getLogger(__name__)

PARAMETER_LAYOUTS: dict[str, tuple[str, ...]] = {
    "isotropic": ("x", "y", "z", "log_s"),
    "rid": ("x", "y", "z", "roll", "pitch", "log_s"),
    "grid": ("x", "y", "z", "roll", "pitch", "yaw", "log_s"),
}
STEP_SIZES = {
    "x": POSITION_STEP,
    "y": POSITION_STEP,
    "z": POSITION_STEP,
    "roll": ANGLE_STEP,
    "pitch": ANGLE_STEP,
    "yaw": ANGLE_STEP,
    "log_s": LOG_SCALE_STEP,
}


class ConvergenceStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    STALLED = "stalled"


class SolverOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: int = Field(MAX_ITERATIONS, ge=1)
    cost_tolerance: float = Field(COST_TOLERANCE, ge=0)
    gradient_tolerance: float = Field(GRADIENT_TOLERANCE, ge=0)
    parameter_tolerance: float = Field(PARAMETER_TOLERANCE, ge=0)
    pixels_per_image: int = Field(PIXELS_PER_IMAGE, ge=1)
    saturation_threshold: float = SATURATION_THRESHOLD
    floor_threshold: float = FLOOR_THRESHOLD
    seed: int = SEED
    estimate_initial_scale: bool = True


class PixelSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    view_index: int
    u: int
    v: int
    intensity: float = Field(ge=0)


class CalibrationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    light: LightModel
    parameter_names: tuple[str, ...]
    parameters: tuple[float, ...]
    standard_errors: tuple[float, ...]
    cost: float
    cost_trace: tuple[float, ...]
    per_view_rms: tuple[float, ...]
    status: ConvergenceStatus
    iterations: int
    n_samples: int

    @property
    def converged(self) -> bool:
        return self.status is ConvergenceStatus.CONVERGED


def parameter_names(kind: str) -> tuple[str, ...]:
    return PARAMETER_LAYOUTS[kind]


def pack(light: LightModel) -> Array:
    values = {
        "x": light.position[0],
        "y": light.position[1],
        "z": light.position[2],
        "roll": light.roll,
        "pitch": light.pitch,
        "yaw": light.yaw,
        "log_s": math.log(light.scale),
    }
    return np.array([values[name] for name in parameter_names(light.kind)])


def unpack(params: Array, template: LightModel) -> LightModel:
    """Light with the pose and scale of `params` and everything else of `template`.

    Angles are reduced modulo 2*pi into [-pi, pi].
    """
    values = dict(zip(parameter_names(template.kind), (float(p) for p in params)))
    update = {
        "position": (values["x"], values["y"], values["z"]),
        "scale": math.exp(values["log_s"]),
    }
    for name in ("roll", "pitch", "yaw"):
        if name in values:
            update[name] = math.remainder(values[name], 2.0 * math.pi)
    return template.model_copy(update=update)


def select_pixels(
    view: ViewRecord,
    n: int = PIXELS_PER_IMAGE,
    saturation: float = SATURATION_THRESHOLD,
    floor: float = FLOOR_THRESHOLD,
    seed: int = SEED,
) -> list[PixelSample]:
    """Pick one usable pixel from each cell of a ceil(sqrt(n))^2 grid.

    A pixel is usable when floor < intensity < saturation. Within a cell the
    first usable pixel of a seeded shuffle wins.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    image = view.image
    height, width = image.shape
    cells = math.ceil(math.sqrt(n))
    row_edges = np.linspace(0, height, cells + 1).astype(int)
    col_edges = np.linspace(0, width, cells + 1).astype(int)
    rng = np.random.default_rng([seed, view.index])

    samples = []
    for r0, r1 in zip(row_edges[:-1], row_edges[1:]):
        for c0, c1 in zip(col_edges[:-1], col_edges[1:]):
            block = image[r0:r1, c0:c1]
            if block.size == 0:
                continue
            order = rng.permutation(block.size)
            candidates = block.ravel()[order]
            usable = (candidates > floor) & (candidates < saturation)
            if not usable.any():
                continue
            k = int(order[np.argmax(usable)])
            v, u = int(r0) + k // block.shape[1], int(c0) + k % block.shape[1]
            samples.append(
                PixelSample(
                    view_index=view.index, u=u, v=v, intensity=float(image[v, u])
                )
            )

    if len(samples) < n / 2:
        raise InsufficientValidPixels(
            f"view {view.index}: only {len(samples)} of {cells * cells} cells hold a "
            f"pixel between {floor} and {saturation}"
        )
    return samples[:n]


@dataclass(frozen=True, eq=False)
class ViewGeometry:
    index: int
    pose: CameraPose
    exposure: float
    corners: Array
    quad_ok: Mask
    rows: Array


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    """Samples with their plane quads precomputed, ready for repeated rendering."""

    samples: tuple[PixelSample, ...]
    template: LightModel
    measured: Array
    views: tuple[ViewGeometry, ...]
    view_indices: tuple[int, ...]
    sentinel: float

    @property
    def names(self) -> tuple[str, ...]:
        return parameter_names(self.template.kind)


def build_problem(
    samples: Sequence[PixelSample],
    views: Sequence[ViewRecord],
    intr: CameraIntrinsics,
    template: LightModel,
) -> CalibrationProblem:
    by_index = {view.index: view for view in views}
    kept: list[PixelSample] = []
    geometry = []
    for view in views:
        own = [s for s in samples if s.view_index == view.index]
        if not own:
            continue
        corners, ok = pixel_quads(
            [s.u for s in own], [s.v for s in own], intr, view.pose
        )
        if not ok.all():
            logger.warning(
                "view %d: dropping %d samples whose pixels do not reach the plane",
                view.index,
                int((~ok).sum()),
            )
        rows = np.arange(len(kept), len(kept) + int(ok.sum()))
        kept.extend(s for s, good in zip(own, ok) if good)
        geometry.append(
            ViewGeometry(
                index=view.index,
                pose=view.pose,
                exposure=view.exposure,
                corners=corners[ok],
                quad_ok=ok[ok],
                rows=rows,
            )
        )
    unknown = {s.view_index for s in samples} - set(by_index)
    if unknown:
        raise ValueError(f"samples refer to unknown views {sorted(unknown)}")

    measured = np.array([s.intensity for s in kept], dtype=np.float64)
    peak = float(measured.max()) if measured.size else 1.0
    return CalibrationProblem(
        samples=tuple(kept),
        template=template,
        measured=measured,
        views=tuple(geometry),
        view_indices=tuple(view.index for view in views),
        sentinel=SENTINEL_FACTOR * peak,
    )


def render_samples(params: Array, problem: CalibrationProblem) -> tuple[Array, Mask]:
    light = unpack(params, problem.template)
    values = np.zeros(problem.measured.shape)
    valid = np.zeros(problem.measured.shape, dtype=bool)
    for view in problem.views:
        rendered, ok = render_quads(view.corners, view.quad_ok, view.pose, light)
        values[view.rows] = view.exposure * rendered
        valid[view.rows] = ok
    return values, valid


def residuals(params: Array, problem: CalibrationProblem) -> Array:
    """Measured minus rendered intensity; failed renders give `problem.sentinel`."""
    values, valid = render_samples(params, problem)
    return np.where(valid, problem.measured - values, problem.sentinel)


def jacobian(params: Array, problem: CalibrationProblem) -> Array:
    """Central-difference Jacobian of `residuals`, columns in parameter order."""
    params = np.asarray(params, dtype=np.float64)
    columns = []
    for j, name in enumerate(problem.names):
        h = STEP_SIZES[name]
        forward = params.copy()
        backward = params.copy()
        forward[j] += h
        backward[j] -= h
        columns.append(
            (residuals(forward, problem) - residuals(backward, problem)) / (2.0 * h)
        )
    return np.stack(columns, axis=1)


def _damped_step(
    A: Array, gradient: Array, damping: float
) -> tuple[Array, float]:
    """Solve (A + damping * diag(A)) step = -gradient, raising damping if singular."""
    diagonal = np.diag(np.diag(A))
    while damping <= MAX_DAMPING:
        system = A + damping * diagonal
        try:
            if np.linalg.cond(system) < MAX_CONDITION:
                step: Array = np.linalg.solve(system, -gradient)
                return step, damping
        except np.linalg.LinAlgError:
            pass
        damping *= DAMPING_FACTOR
    raise DegenerateDataset(
        "normal equations are singular even with maximal damping; "
        "the views do not constrain every light parameter"
    )


def _initial_scale(params: Array, problem: CalibrationProblem) -> Array:
    """Replace log_s by the least-squares gain of the current pose."""
    unit = params.copy()
    unit[-1] = 0.0
    values, valid = render_samples(unit, problem)
    g = values[valid]
    denominator = float(g @ g)
    numerator = float(problem.measured[valid] @ g)
    if denominator > 0 and numerator > 0:
        unit[-1] = math.log(numerator / denominator)
        return unit
    return params


def _per_view_rms(r: Array, problem: CalibrationProblem) -> tuple[float, ...]:
    """RMS residual per dataset view, NaN for views without samples."""
    rms = {}
    for view in problem.views:
        part = r[view.rows]
        rms[view.index] = float(np.sqrt(np.mean(part * part)))
    return tuple(rms.get(index, math.nan) for index in problem.view_indices)


def _flat_parameters(J: Array, problem: CalibrationProblem) -> list[str]:
    """Parameters the residuals do not respond to, relative to the measurements."""
    floor = FLAT_COLUMN_FRACTION * float(np.linalg.norm(problem.measured))
    norms = np.linalg.norm(J, axis=0)
    return [name for name, norm in zip(problem.names, norms) if not norm > floor]


def _standard_errors(params: Array, cost: float, problem: CalibrationProblem) -> Array:
    """NaN throughout when the Jacobian does not have full column rank."""
    J = jacobian(params, problem)
    m, n = J.shape
    if m <= n or _flat_parameters(J, problem) or np.linalg.matrix_rank(J) < n:
        return np.full(n, np.nan)
    variance = 2.0 * cost / (m - n)
    covariance = variance * np.linalg.pinv(J.T @ J)
    result: Array = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    return result


def solve(
    problem: CalibrationProblem, init: LightModel, options: SolverOptions
) -> CalibrationResult:
    """Levenberg-Marquardt on a prepared problem."""
    x = pack(init)
    if options.estimate_initial_scale:
        x = _initial_scale(x, problem)

    values, valid = render_samples(x, problem)
    zero_fraction = float(np.mean(values == 0.0)) if values.size else 0.0
    if zero_fraction > ZERO_RENDER_WARNING_FRACTION:
        logger.warning(
            "%.0f%% of the samples render as zero at the initial guess; "
            "the initial light may not point at the measured pattern",
            100 * zero_fraction,
        )

    r = residuals(x, problem)
    cost = 0.5 * float(r @ r)
    trace = [cost]
    damping = INITIAL_DAMPING
    status = ConvergenceStatus.MAX_ITERATIONS
    iterations = 0
    A: Array | None = None
    gradient: Array | None = None
    logger.info("initial cost %.6g over %d samples", cost, r.size)
    if not math.isfinite(cost):
        raise InputError(
            f"initial cost overflows at scale {unpack(x, init).scale:.3g}; "
            "start from a scale near the measured intensities"
        )

    for iteration in range(1, options.max_iterations + 1):
        iterations = iteration
        if A is None or gradient is None:
            J = jacobian(x, problem)
            gradient = J.T @ r
            A = J.T @ J
            if not (np.isfinite(A).all() and np.isfinite(gradient).all()):
                raise InputError(
                    "normal equations overflow at the current estimate "
                    f"(scale {unpack(x, init).scale:.3g}); "
                    "start from a scale near the measured intensities"
                )
            if np.abs(gradient).max() < options.gradient_tolerance:
                flat = _flat_parameters(J, problem)
                if flat:
                    logger.warning(
                        "residuals do not depend on %s at the current estimate; "
                        "the light may not reach the sampled pixels",
                        ", ".join(flat),
                    )
                    status = ConvergenceStatus.STALLED
                else:
                    status = ConvergenceStatus.CONVERGED
                break

        step, damping = _damped_step(A, gradient, damping)
        tolerance = options.parameter_tolerance
        if np.abs(step).max() <= tolerance * (np.abs(x).max() + tolerance):
            status = ConvergenceStatus.CONVERGED
            break

        candidate = x + step
        r_new = residuals(candidate, problem)
        cost_new = 0.5 * float(r_new @ r_new)
        accepted = cost_new < cost
        logger.debug(
            "iteration %d: cost %.6g -> %.6g, damping %.1e, %s",
            iteration,
            cost,
            cost_new,
            damping,
            "accepted" if accepted else "rejected",
        )
        if accepted:
            decrease = (cost - cost_new) / cost
            x, r, cost = candidate, r_new, cost_new
            trace.append(cost)
            damping /= DAMPING_FACTOR
            A = gradient = None
            if decrease < options.cost_tolerance:
                status = ConvergenceStatus.CONVERGED
                break
        else:
            damping *= DAMPING_FACTOR
            if damping > MAX_DAMPING:
                status = ConvergenceStatus.STALLED
                break

    light = unpack(x, init)
    logger.info(
        "%s after %d iterations, cost %.6g", status.value, iterations, cost
    )
    return CalibrationResult(
        light=light,
        parameter_names=problem.names,
        parameters=tuple(float(p) for p in pack(light)),
        standard_errors=tuple(float(e) for e in _standard_errors(x, cost, problem)),
        cost=cost,
        cost_trace=tuple(trace),
        per_view_rms=_per_view_rms(r, problem),
        status=status,
        iterations=iterations,
        n_samples=int(r.size),
    )


def _check_pose_variation(views: Sequence[ViewRecord]) -> None:
    first = views[0].pose
    for view in views[1:]:
        if (
            np.abs(view.pose.R - first.R).max() > 1e-9
            or np.abs(view.pose.C - first.C).max() > 1e-9
        ):
            return
    raise DegenerateDataset(
        f"all {len(views)} views share one camera pose; "
        "vary distance and viewing angle between images"
    )


def calibrate(
    dataset: Dataset, init: LightModel, options: SolverOptions | None = None
) -> CalibrationResult:
    """Select pixels in every view and estimate the light pose and scale."""
    options = options or SolverOptions()
    views = dataset.views
    if len(views) < 2:
        raise DegenerateDataset("calibration needs at least two views")
    _check_pose_variation(views)

    init = init.model_copy(update={"characteristic": dataset.characteristic})
    for view in views:
        if place_light(init, view.pose).origin[2] <= MIN_LIGHT_HEIGHT:
            raise LightOnPlane(
                f"initial light lies on or below the plane in view {view.index}"
            )

    samples = []
    for view in views:
        samples.extend(
            select_pixels(
                view,
                options.pixels_per_image,
                options.saturation_threshold,
                options.floor_threshold,
                options.seed,
            )
        )
    problem = build_problem(samples, views, dataset.intrinsics, init)
    return solve(problem, init, options)


def calibrate_subsets(
    dataset: Dataset,
    init: LightModel,
    sizes: Sequence[int],
    options: SolverOptions | None = None,
) -> list[tuple[int, CalibrationResult]]:
    """Calibrate on the first n views for every n in `sizes`."""
    return [(n, calibrate(dataset.subset(n), init, options)) for n in sizes]
