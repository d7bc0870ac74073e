#!/usr/bin/env python3
"""
CLI Tool for local Fisher information.

Sweeps, composite breakdowns, Monte Carlo runs and the acceptance battery.

Usage:
    python cli.py fisher-sweep --model two_level_single --g 1e-4 --out sweep.csv
    python cli.py composite --model two_level_ent2 --t-points 20 --out blocks.csv
    python cli.py montecarlo --g 1e-3 --shots 100000 --repeats 10 --seed 7 --out runs.csv
    python cli.py validate [--json] [--quick] [--inject-failure <n>]

Exit codes: 0 success, 1 validation failure, 2 configuration error, 3 numeric error.
"""

import csv
import functools
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ERROR = 3

SWEEP_COLUMNS = ["t", "J_single", "j_N", "J_N", "blank_term", "accessible_trace"]


def _fail(code: int, message: str):
    err_console.print(f"[red]✗[/red] {message}")
    sys.exit(code)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _check_finite(rows: List[Dict]):
    for row in rows:
        for key, value in row.items():
            if isinstance(value, float) and not math.isfinite(value):
                _fail(EXIT_NUMERIC_ERROR, f"non-finite value in column {key!r} of row {row}")


def _write_table(rows: List[Dict], columns: List[str], config, extra: Optional[Dict] = None):
    """Write rows as CSV (with a <out>.config.json sidecar) or as one JSON document."""
    out = config.output.path
    if out is None:
        return
    if config.output.format == "csv":
        with open(out, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(row[c]) for c in columns])
        Path(f"{out}.config.json").write_text(json.dumps(config.echo(), indent=2, sort_keys=True) + "\n")
    else:
        document = {"config": config.echo(), "columns": columns, "rows": rows}
        if extra:
            document.update(extra)
        Path(out).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    console.print(f"\n[bold green]Success![/bold green] Output: {out}")


def _model_override(model: Optional[str], gamma_plus: Optional[float], gamma_minus: Optional[float]) -> Dict:
    """--model is a preset name or a model JSON file."""
    override: Dict = {}
    if model is not None:
        path = Path(model)
        if path.is_file():
            try:
                override = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                _fail(EXIT_CONFIG_ERROR, f"cannot parse model file {model}: {e}")
        else:
            override = {"name": model}
    # flags win over the file; absent flags leave the file's rates alone
    if gamma_plus is not None:
        override["gamma_plus"] = gamma_plus
    if gamma_minus is not None:
        override["gamma_minus"] = gamma_minus
    return override


def _load_config(config_path: Optional[str], **overrides):
    from src.config import load_run_config
    from src.errors import ConfigurationError

    try:
        return load_run_config(config_path, **overrides)
    except ConfigurationError as e:
        _fail(EXIT_CONFIG_ERROR, f"invalid configuration:\n{e}")


def _exit_codes(fn):
    """Map configuration errors to exit 2 and numeric errors to exit 3."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from src.errors import ConfigurationError, LocalFisherError

        try:
            return fn(*args, **kwargs)
        except ConfigurationError as e:
            _fail(EXIT_CONFIG_ERROR, str(e))
        except LocalFisherError as e:
            _fail(EXIT_NUMERIC_ERROR, str(e))
    return wrapper


def _run_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON run configuration"),
        click.option("--model", help="Preset name or model JSON file"),
        click.option("--g", type=float, help="Parameter value g"),
        click.option("--gamma-plus", type=float, help="Decay rate of |+> (two-level presets)"),
        click.option("--gamma-minus", type=float, help="Decay rate of |-> (two-level presets)"),
        click.option("--out", "-o", help="Output file path"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), help="Output format"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _grid_options(fn):
    options = [
        click.option("--t-start", type=float, help="First time of the grid"),
        click.option("--t-stop", type=float, help="Last time of the grid"),
        click.option("--t-points", type=int, help="Number of grid points"),
        click.option("--t-scale", type=click.Choice(["lin", "log"]), help="Grid spacing"),
        click.option("--N", "n_subsystems", type=int, help="Number of subsystems"),
        click.option("--initial", type=click.Choice(["iid", "entangled", "file"]), help="Initial composite state"),
        click.option("--initial-file", type=click.Path(exists=True, dir_okay=False), help="JSON file with 'initial_state' on M^N"),
        click.option("--method", type=click.Choice(["channels", "direct"]), help="How descendant blocks are computed"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _grid_overrides(t_start, t_stop, t_points, t_scale, n_subsystems, initial, initial_file, method) -> Dict:
    return {
        "t_grid": {"start": t_start, "stop": t_stop, "points": t_points, "scale": t_scale},
        "composite": {"n_subsystems": n_subsystems, "initial": initial, "initial_file": initial_file, "method": method},
    }


def _build_scenario(config):
    from src.errors import ConfigurationError
    from src.scenarios import build_scenario
    from src.states import decode_matrix

    initial_matrix = None
    if config.composite.initial == "file":
        try:
            initial_matrix = decode_matrix(json.loads(Path(config.composite.initial_file).read_text())["initial_state"])
        except (OSError, KeyError, ValueError, TypeError) as e:
            _fail(EXIT_CONFIG_ERROR, f"cannot read initial state from {config.composite.initial_file}: {e}")
    try:
        return build_scenario(config.model, config.composite, initial_matrix)
    except ConfigurationError as e:
        _fail(EXIT_CONFIG_ERROR, str(e))
    except ValueError as e:
        _fail(EXIT_CONFIG_ERROR, f"invalid composite scenario: {e}")


def _evaluate_grid(config, evaluate, description: str) -> List[Dict]:
    """Evaluate one row per grid time on a worker pool; rows come back in grid order."""
    from src.config import worker_count
    from src.errors import LocalFisherError

    times = [float(t) for t in config.t_grid.values()]

    def guarded(t: float):
        try:
            return evaluate(t), None
        except LocalFisherError as e:
            return None, e

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
    ) as progress:
        progress.add_task(f"{description} ({len(times)} points)...", total=None)
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(guarded, times))

    rows = []
    for t, (row, error) in zip(times, results):
        if error is not None:
            _fail(EXIT_NUMERIC_ERROR, f"numeric failure at g={config.g!r}, t={t!r}: {error}")
        rows.append(row)
    _check_finite(rows)
    return rows


@click.group()
@click.option("--verbose", "-v", count=True, help="-v for progress, -vv for numerical diagnostics")
def cli(verbose: int):
    """Local Fisher information - estimation with observables restricted to a subspace."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


@cli.command("fisher-sweep")
@_run_options
@_grid_options
@_exit_codes
def fisher_sweep(config_path, model, g, gamma_plus, gamma_minus, out, fmt, **grid):
    """Sweep t: single-system J, j_N, J_N, blank term and accessible trace."""
    from src.composite import composite_fisher
    from src.fisher import local_fisher
    from src.scenarios import initial_single_state

    config = _load_config(
        config_path,
        command="fisher-sweep",
        model=_model_override(model, gamma_plus, gamma_minus),
        g=g,
        output={"path": out, "format": fmt},
        **_grid_overrides(**grid),
    )
    scenario = _build_scenario(config)
    single = initial_single_state(config.model, scenario.dim_m)
    method = config.composite.method

    def evaluate(t: float) -> Dict:
        rho, drho = scenario.dynamics.accessible_family(single, t).at(config.g)
        single_report = local_fisher(rho, drho)
        both = composite_fisher(scenario, config.g, t, method=method)
        return {
            "t": t,
            "J_single": single_report.value,
            "j_N": both.j.value,
            "J_N": both.J.value,
            "blank_term": both.j.blank_term,
            "accessible_trace": both.j.accessible_trace,
        }

    console.print(f"\n[bold]Fisher sweep:[/bold] {config.model.name}, N={scenario.n_subsystems}, g={config.g}\n")
    rows = _evaluate_grid(config, evaluate, "Evaluating Fisher information")

    table = Table(title=f"Fisher information ({len(rows)} points)")
    for column in SWEEP_COLUMNS:
        table.add_column(column, style="cyan" if column == "t" else None, justify="right")
    for row in rows:
        table.add_row(*(f"{row[c]:.6g}" for c in SWEEP_COLUMNS))
    if config.output.path is None:
        console.print(table)
    best = max(rows, key=lambda r: r["J_single"])
    console.print(f"Peak J_single = {best['J_single']:.6g} at t = {best['t']:.6g}")
    _write_table(rows, SWEEP_COLUMNS, config)


@cli.command()
@_run_options
@_grid_options
@_exit_codes
def composite(config_path, model, g, gamma_plus, gamma_minus, out, fmt, **grid):
    """Per-block breakdown of J_N next to j_N over the time grid."""
    from src.composite import composite_fisher
    from src.states import subsequence_key, subsequences

    config = _load_config(
        config_path,
        command="composite",
        model=_model_override(model, gamma_plus, gamma_minus),
        g=g,
        output={"path": out, "format": fmt},
        **_grid_overrides(**grid),
    )
    scenario = _build_scenario(config)
    keys = [f"J[{subsequence_key(s)}]" for s in subsequences(scenario.n_subsystems)]
    columns = ["t", "j_N", "J_N"] + keys

    def evaluate(t: float) -> Dict:
        both = composite_fisher(scenario, config.g, t, method=config.composite.method)
        row = {"t": t, "j_N": both.j.value, "J_N": both.J.value}
        for s, key in zip(subsequences(scenario.n_subsystems), keys):
            row[key] = both.J.block_values[s]
        return row

    console.print(f"\n[bold]Composite breakdown:[/bold] {config.model.name}, N={scenario.n_subsystems}\n")
    rows = _evaluate_grid(config, evaluate, "Evaluating descendant blocks")

    if config.output.path is None:
        table = Table(title="J_N per block")
        for column in columns:
            table.add_column(column, style="cyan" if column == "t" else None, justify="right")
        for row in rows:
            table.add_row(*(f"{row[c]:.6g}" for c in columns))
        console.print(table)
    _write_table(rows, columns, config)


@cli.command()
@_run_options
@click.option("--shots", type=int, help="Shots per repeat")
@click.option("--repeats", type=int, help="Independent repeats")
@click.option("--seed", type=int, help="Master seed")
@click.option("--estimator", type=click.Choice(["optimal", "alternative", "sigma_y", "sigma_x"]), help="Estimator to measure")
@click.option("--t", "t", type=float, help="Measurement time (default: optimal time of a two-level preset)")
@click.option("--n-average", type=int, help="Measure the mean of this many i.i.d. copies per shot")
@_exit_codes
def montecarlo(config_path, model, g, gamma_plus, gamma_minus, out, fmt, shots, repeats, seed, estimator, t, n_average):
    """Simulated measurements: empirical delta g^2 against the bound 1/J."""
    from src.errors import LocalFisherError
    from src.fisher import local_fisher
    from src.montecarlo import CSV_COLUMNS, RNG_ALGORITHM, empirical_cr_check
    from src.scenarios import build_local_dynamics, estimator_for, initial_single_state, optimal_time, two_level_model

    config = _load_config(
        config_path,
        command="montecarlo",
        model=_model_override(model, gamma_plus, gamma_minus),
        g=g,
        output={"path": out, "format": fmt},
        montecarlo={
            "shots": shots,
            "repeats": repeats,
            "seed": seed,
            "estimator": estimator,
            "t": t,
            "n_average": n_average,
        },
    )
    mc = config.montecarlo
    if mc.t is None:
        if not (config.model.is_preset and config.model.name.startswith("two_level")):
            _fail(EXIT_CONFIG_ERROR, "--t is required for models without a closed-form optimal time")
        config.montecarlo.t = optimal_time(two_level_model(config.model)).t_star

    try:
        dynamics = build_local_dynamics(config.model)
        family = dynamics.accessible_family(initial_single_state(config.model, dynamics.dim_m), mc.t)
        rho, drho = family.at(config.g)
        report = local_fisher(rho, drho)
        chosen = estimator_for(mc.estimator, report)
        console.print(
            f"\n[bold]Monte Carlo:[/bold] {mc.estimator} estimator, g={config.g}, t={mc.t:.6g}, "
            f"{mc.shots} shots x {mc.repeats} repeats ({RNG_ALGORITHM}, seed {mc.seed})\n"
        )
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
        ) as progress:
            progress.add_task("Sampling outcomes...", total=None)
            check = empirical_cr_check(
                family, chosen, config.g, mc.shots, mc.repeats,
                seed=mc.seed, n_average=mc.n_average,
                fisher_information=report.value, batch_size=mc.batch_size,
            )
    except LocalFisherError as e:
        _fail(EXIT_NUMERIC_ERROR, f"numeric failure at g={config.g!r}, t={mc.t!r}: {e}")

    rows = check.csv_rows()
    _check_finite(rows)

    table = Table(title="Cramer-Rao check")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="green", justify="right")
    table.add_row("J", f"{check.fisher_information:.6g}")
    table.add_row("1/J", f"{check.bound:.6g}")
    table.add_row("mean dg^2", f"{check.mean_delta_g_sq:.6g} ± {check.standard_error:.2g}")
    table.add_row("dg^2 / (1/J)", f"{check.ratio:.4f} ± {check.ratio_se:.4f}")
    table.add_row("n Var(g_hat)", f"{check.spread_delta_g_sq:.6g}")
    table.add_row("Bound respected", "Yes ✓" if check.respects_bound() else "No ✗")
    console.print(table)

    summary = {k: v for k, v in check.to_dict().items() if k != "runs"}
    _write_table(rows, CSV_COLUMNS, config, extra={"summary": summary})


@cli.command()
@click.option("--json", "as_json", is_flag=True, help="Emit a machine-readable report")
@click.option("--schema", is_flag=True, help="Print the JSON schema of the report and exit")
@click.option("--quick", is_flag=True, help="Reduced sample counts")
@click.option("--seed", type=int, default=None, help="Master seed")
@click.option("--criterion", "criteria", type=int, multiple=True, help="Run only these criteria")
@click.option("--inject-failure", type=int, default=None, help="Perturb the tolerances of one criterion (self-test)")
def validate(as_json: bool, schema: bool, quick: bool, seed: Optional[int], criteria, inject_failure: Optional[int]):
    """Run the acceptance battery; exit 0 iff every criterion passes."""
    from src.validator import DEFAULT_SEED, acceptance_schema, format_acceptance_report, run_acceptance

    if schema:
        click.echo(json.dumps(acceptance_schema(), indent=2, sort_keys=True))
        return

    kwargs = dict(
        criteria=list(criteria) or None,
        seed=DEFAULT_SEED if seed is None else seed,
        quick=quick,
        inject_failure=inject_failure,
    )
    try:
        if as_json:
            report = run_acceptance(**kwargs)
        else:
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                console=console,
            ) as progress:
                task = progress.add_task("Running acceptance battery...", total=None)
                report = run_acceptance(
                    **kwargs,
                    progress=lambda n, name: progress.update(task, description=f"Criterion {n}: {name}..."),
                )
    except ValueError as e:
        _fail(EXIT_CONFIG_ERROR, str(e))

    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        console.print(format_acceptance_report(report))
        for c in report.criteria:
            mark = "[green]✓[/green]" if c.passed else "[red]✗[/red]"
            console.print(f"  {mark} {c.id}. {c.name}")
    if not report.all_passed:
        failed = ", ".join(f"{c.id} ({c.name})" for c in report.failed)
        err_console.print(f"[red]Failed criteria:[/red] {failed}")
        sys.exit(EXIT_VALIDATION_FAILED)


if __name__ == "__main__":
    cli()
