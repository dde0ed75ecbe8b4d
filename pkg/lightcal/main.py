import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Iterator, Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from lightcal.dataset import Dataset, load_light, load_manifest, write_pfm
from lightcal.errors import InputError, LightcalError
from lightcal.photometry import LightModel, render_image
from lightcal.report import (
    build_report,
    file_values,
    load_report,
    parameter_spread,
    run_report,
    save_report,
)
from lightcal.schemas import (
    ParameterSpread,
    ResultReport,
    RunReport,
    describe_validation_error,
)
from lightcal.solver import SolverOptions, calibrate_subsets
from lightcal.synth import ScenarioSpec, generate_dataset, load_scenario

logger = logging.getLogger(__name__)

app = typer.Typer(
    help="Calibrate the pose and intensity scale of a camera-mounted point light.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()
err_console = Console(stderr=True)


@contextmanager
def exit_on_error() -> Iterator[None]:
    try:
        yield
    except LightcalError as exc:
        err_console.print(
            f"error: {exc.detail}", style="bold red", markup=False, soft_wrap=True
        )
        raise typer.Exit(code=exc.exit_code) from exc


@app.callback()
def main(
    verbose: Annotated[
        bool, typer.Option("--verbose", "-v", help="Log every solver iteration.")
    ] = False,
) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


@app.command()
def synth(
    out: Annotated[Path, typer.Option(help="Directory for the dataset.")],
    scenario: Annotated[
        Optional[Path],
        typer.Option(help="Scenario JSON; built-in default if omitted."),
    ] = None,
    seed: Annotated[
        Optional[int], typer.Option(help="Override the scenario seed.")
    ] = None,
) -> None:
    """Render a synthetic dataset with a ground-truth sidecar."""
    with exit_on_error():
        spec = load_scenario(scenario) if scenario is not None else ScenarioSpec()
        if seed is not None:
            spec = spec.model_copy(update={"seed": seed})
        manifest = generate_dataset(spec, out)
    console.print(f"wrote {manifest}", soft_wrap=True)


def load_options(path: Path | None, overrides: dict[str, Any]) -> SolverOptions:
    """Options from a JSON file, with non-None `overrides` taking precedence."""
    try:
        if path is not None:
            base = SolverOptions.model_validate_json(path.read_text())
            fields = base.model_dump(exclude_unset=True)
        else:
            fields = {}
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return SolverOptions.model_validate(fields)
    except OSError as exc:
        raise InputError(f"cannot read options {path}") from exc
    except ValidationError as exc:
        where = path if path is not None else "options"
        raise InputError(f"{where}: {describe_validation_error(exc)}") from exc


def write_comparison(out_dir: Path, dataset: Dataset, light: LightModel) -> None:
    """Measured and rendered image side by side, one PFM per view."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for view in dataset.views:
        rendered, _ = render_image(dataset.intrinsics, view.pose, light)
        pair = np.hstack([view.image, view.exposure * rendered])
        write_pfm(out_dir / f"view_{view.index:03d}.pfm", pair)
    logger.info("wrote %d comparison images to %s", len(dataset.views), out_dir)


def print_run(title: str, run: RunReport) -> None:
    table = Table(title=title)
    table.add_column("parameter")
    table.add_column("estimate", justify="right")
    table.add_column("std. error", justify="right")
    values = file_values(run)
    for name, error in zip(values, run.standard_errors):
        shown = "-" if error is None else f"{error:.3g}"
        table.add_row(name, f"{values[name]:.6g}", shown)
    console.print(table)
    console.print(
        f"{run.status} after {run.iterations} iterations, cost {run.cost:.6g}, "
        f"{run.n_samples} samples from {run.n_views} views"
    )


def print_spread(title: str, spread: dict[str, ParameterSpread]) -> None:
    table = Table(title=title)
    table.add_column("parameter")
    table.add_column("mean", justify="right")
    table.add_column("std", justify="right")
    for name, item in spread.items():
        table.add_row(name, f"{item.mean:.6g}", f"{item.std:.3g}")
    console.print(table)


@app.command(name="calibrate")
def calibrate_command(
    manifest: Annotated[Path, typer.Argument(help="Dataset manifest JSON.")],
    init: Annotated[Path, typer.Option(help="Initial light pose JSON.")],
    out: Annotated[Path, typer.Option(help="Where to write the result report.")],
    options: Annotated[
        Optional[Path], typer.Option("--options", help="Solver options JSON.")
    ] = None,
    max_iterations: Annotated[Optional[int], typer.Option()] = None,
    cost_tolerance: Annotated[Optional[float], typer.Option()] = None,
    gradient_tolerance: Annotated[Optional[float], typer.Option()] = None,
    pixels_per_image: Annotated[Optional[int], typer.Option()] = None,
    saturation: Annotated[Optional[float], typer.Option()] = None,
    floor: Annotated[Optional[float], typer.Option()] = None,
    seed: Annotated[Optional[int], typer.Option()] = None,
    views: Annotated[
        Optional[list[int]],
        typer.Option(help="Calibrate on the first N views; repeat for subsets."),
    ] = None,
    render_comparison: Annotated[
        Optional[Path], typer.Option(help="Directory for measured|rendered images.")
    ] = None,
) -> None:
    """Estimate the light pose and scale from a dataset."""
    with exit_on_error():
        dataset = load_manifest(manifest)
        init_light = load_light(init, dataset.characteristic)
        solver_options = load_options(
            options,
            {
                "max_iterations": max_iterations,
                "cost_tolerance": cost_tolerance,
                "gradient_tolerance": gradient_tolerance,
                "pixels_per_image": pixels_per_image,
                "saturation_threshold": saturation,
                "floor_threshold": floor,
                "seed": seed,
            },
        )

        sizes = sorted(set(views or [len(dataset.views)]))
        results = calibrate_subsets(dataset, init_light, sizes, solver_options)
        runs = [run_report(result, n) for n, result in results]
        estimate = runs[-1]
        report = build_report(estimate, runs if len(runs) > 1 else ())
        out.parent.mkdir(parents=True, exist_ok=True)
        save_report(out, report)

        if render_comparison is not None:
            write_comparison(
                render_comparison, dataset.subset(sizes[-1]), results[-1][1].light
            )

    print_run("estimate", estimate)
    if report.consistency:
        print_spread("consistency across view subsets", report.consistency)
    if estimate.status != "converged":
        err_console.print(f"calibration did not converge: {estimate.status}")
        raise typer.Exit(code=1)


@app.command()
def render(
    manifest: Annotated[Path, typer.Argument(help="Dataset manifest JSON.")],
    light: Annotated[Path, typer.Option(help="Light pose JSON.")],
    view: Annotated[int, typer.Option(help="Index of the view to render.")],
    out: Annotated[Path, typer.Option(help="Output PFM image.")],
) -> None:
    """Render one view of a dataset under the given light."""
    with exit_on_error():
        dataset = load_manifest(manifest)
        if not 0 <= view < len(dataset.views):
            raise InputError(
                f"view {view} out of range, the dataset has {len(dataset.views)} views"
            )
        record = dataset.views[view]
        model = load_light(light, dataset.characteristic)
        image, _ = render_image(dataset.intrinsics, record.pose, model)
        write_pfm(out, record.exposure * image)
    console.print(f"wrote {out}", soft_wrap=True)


@app.command()
def report(
    paths: Annotated[list[Path], typer.Argument(help="Result reports to show.")],
) -> None:
    """Show result reports and the spread of estimates across them."""
    with exit_on_error():
        reports: list[ResultReport] = [load_report(path) for path in paths]
    for path, item in zip(paths, reports):
        print_run(str(path), item.estimate)
        if item.consistency:
            print_spread(f"{path}: consistency across view subsets", item.consistency)
    if len(reports) > 1:
        print_spread(
            "spread across reports",
            parameter_spread([item.estimate for item in reports]),
        )
