"""Conversion of solver results to the report schema, and spreads across runs."""

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from lightcal.errors import InputError
from lightcal.schemas import (
    LightPose,
    ParameterSpread,
    ResultReport,
    RunReport,
    describe_validation_error,
)
from lightcal.solver import CalibrationResult

# report quantities in file units, keyed by the solver parameter they follow
FILE_UNITS = {
    "x": "x",
    "y": "y",
    "z": "z",
    "roll": "roll_deg",
    "pitch": "pitch_deg",
    "yaw": "yaw_deg",
    "log_s": "scale",
}


def _finite_or_none(values: Sequence[float]) -> list[float | None]:
    return [v if math.isfinite(v) else None for v in values]


def run_report(result: CalibrationResult, n_views: int) -> RunReport:
    return RunReport(
        n_views=n_views,
        status=result.status.value,
        iterations=result.iterations,
        cost=result.cost,
        cost_trace=list(result.cost_trace),
        n_samples=result.n_samples,
        light=LightPose.from_light(result.light),
        parameter_names=list(result.parameter_names),
        standard_errors=_finite_or_none(result.standard_errors),
        per_view_rms=_finite_or_none(result.per_view_rms),
    )


def file_values(run: RunReport) -> dict[str, float]:
    """Estimated quantities of a run, in meters, degrees and raw scale."""
    light = run.light
    quantities = {
        "x": light.position[0],
        "y": light.position[1],
        "z": light.position[2],
        "roll_deg": light.roll_deg,
        "pitch_deg": light.pitch_deg,
        "yaw_deg": light.yaw_deg,
        "scale": light.scale,
    }
    units = (FILE_UNITS[name] for name in run.parameter_names)
    return {unit: quantities[unit] for unit in units}


def parameter_spread(runs: Sequence[RunReport]) -> dict[str, ParameterSpread]:
    """Mean and sample standard deviation of every estimated quantity.

    Only quantities estimated in every run are included.
    """
    if len(runs) < 2:
        return {}
    tables = [file_values(run) for run in runs]
    names = [name for name in tables[0] if all(name in table for table in tables)]
    spread = {}
    for name in names:
        values = np.array([table[name] for table in tables])
        spread[name] = ParameterSpread(
            mean=float(values.mean()), std=float(values.std(ddof=1))
        )
    return spread


def build_report(
    estimate: RunReport, subsets: Sequence[RunReport] = ()
) -> ResultReport:
    return ResultReport(
        estimate=estimate,
        subsets=list(subsets),
        consistency=parameter_spread(subsets),
    )


def save_report(path: Path, report: ResultReport) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n")


def load_report(path: Path) -> ResultReport:
    try:
        return ResultReport.model_validate_json(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read report {path}") from exc
    except ValidationError as exc:
        raise InputError(f"{path}: {describe_validation_error(exc)}") from exc
