"""Command-line interface.

Every subcommand writes CSV (or JSON for summaries) with 17-significant-
digit floats.  Output goes to ``--output`` when given; otherwise to a
default file name inside $HAARWEAK_OUTPUT_DIR when that is set, and to
stdout when it is not.  Relative ``--output`` paths are resolved against
$HAARWEAK_OUTPUT_DIR too.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure or a
failed verification suite.

Heavy modules are imported inside the commands so ``--threads`` can cap
the BLAS/OpenMP pools before numpy loads.
"""

from __future__ import annotations

import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click

from .errors import NumericalError, ParameterError

OUTPUT_ENV = "HAARWEAK_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
SUITES = ("identities", "clt1d", "clt4d", "wlln", "overlap")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class VerificationFailed(Exception):
    """A verification suite ran but at least one statistic failed."""


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one subcommand run."""

    command: str
    params: object = None           # ModelParams
    sim: object = None              # SimConfig
    grid: object = None             # GridSpec
    output_path: Path | None = None
    seed: int | None = None
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# formatting and output
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    try:
        import numpy as np

        if isinstance(v, np.bool_):
            return "true" if v else "false"
        if isinstance(v, np.floating):
            return format(float(v), ".17g")
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def json_text(obj: dict) -> str:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
            return v
        return float(fmt(v)) if fmt(v) not in ("nan", "inf", "-inf") else fmt(v)
    return json.dumps(conv(obj), indent=2, sort_keys=True) + "\n"


def resolve_output(path: str | None, default_name: str) -> Path | None:
    """Output file, or None for stdout."""
    base = os.environ.get(OUTPUT_ENV)
    if path is None:
        return Path(base) / default_name if base else None
    p = Path(path)
    if not p.is_absolute() and base:
        p = Path(base) / p
    return p


def emit(text: str, target: Path | None) -> None:
    if target is None:
        click.echo(text, nl=False)
        return
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    except OSError as exc:
        raise ParameterError(f"cannot write {target}: {exc}") from exc
    click.echo(f"wrote {target}", err=True)


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------

def read_config(path: str) -> dict:
    """Plain key=value lines; '#' starts a comment; keys use flag spelling."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _default_map(values: dict) -> dict:
    known = {}
    for name, cmd in main.commands.items():
        params = {p.name for p in cmd.params}
        known[name] = {k: v for k, v in values.items() if k in params}
    all_params = set().union(*({p.name for p in c.params} for c in main.commands.values()))
    unknown = sorted(set(values) - all_params)
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(unknown)}")
    return known


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _measure(sigma: float, empirical: str | None):
    from .y_model import YMeasure

    if empirical is None:
        return None
    if not sigma > 0:
        raise ParameterError("an empirical measure needs sigma > 0")
    return YMeasure.from_csv(empirical, sigma)


@dataclass(frozen=True)
class RunResult:
    text: str                   # the artifact (CSV or JSON)
    summary: str = ""           # short human-facing summary, if any
    ok: bool = True             # False when a verification statistic failed


def run(cfg: RunConfig) -> RunResult:
    """Execute one validated configuration."""
    handler = _HANDLERS.get(cfg.command)
    if handler is None:
        raise ParameterError(f"unknown command {cfg.command!r}")
    return handler(cfg)


def _run_xi1(cfg: RunConfig) -> RunResult:
    from .free_energy import population_measure
    from .variational import solve_xi1

    sigma = cfg.params.sigma
    if not sigma > 0:
        raise ParameterError("xi1 needs sigma > 0")
    measure = _measure(sigma, cfg.options.get("empirical")) or population_measure(sigma)
    sol = solve_xi1(measure)
    return RunResult(csv_text(["sigma", "xi1", "lambda1"], [[float(sigma), sol.value, sol.lam]]))


def _run_xi2(cfg: RunConfig) -> RunResult:
    from .free_energy import population_measure
    from .variational import solve_xi2, xi2_second_derivative

    sigma, q = cfg.params.sigma, cfg.options["q"]
    if not sigma > 0:
        raise ParameterError("xi2 needs sigma > 0; use zero-noise for sigma = 0")
    measure = _measure(sigma, cfg.options.get("empirical")) or population_measure(sigma)
    sol = solve_xi2(q, measure)
    d2 = xi2_second_derivative(q, measure, sol)
    return RunResult(csv_text(["sigma", "q", "xi2", "lambda2", "phi", "d2xi2_dq2"],
                              [[float(sigma), float(q), sol.value, sol.lam, sol.phi, d2]]))


def _run_free_energy(cfg: RunConfig) -> RunResult:
    from .free_energy import check_condition

    p = cfg.params
    measure = _measure(p.sigma, cfg.options.get("empirical"))
    curve = check_condition(p, cfg.grid, measure, cfg.options.get("gaussian", False))
    text = curve.to_csv_text()
    summary = csv_text(["variant", "sigma", "delta", "Delta", "verdict", "curvature_at_zero",
                        "min_interior", "tail_certified", "reason"],
                       [[curve.variant, float(p.sigma), float(p.delta), float(p.Delta), curve.verdict,
                         curve.curvature_at_zero, curve.min_interior, curve.tail_certified,
                         curve.reason or "-"]])
    return RunResult(text, summary)


def _run_threshold(cfg: RunConfig) -> RunResult:
    from .free_energy import threshold_scan

    res = threshold_scan(cfg.params.Delta, cfg.params.sigma, tol=cfg.options["tol"],
                         gaussian=cfg.options["gaussian"], grid=cfg.grid)
    return RunResult(json_text(res.as_dict()))


def _run_zero_noise(cfg: RunConfig) -> RunResult:
    from .free_energy import zero_noise_xi2

    rows = []
    for q in cfg.options["q_grid"]:
        xi2, phi = zero_noise_xi2(q)
        rows.append([q, xi2, phi])
    return RunResult(csv_text(["q", "xi2", "phi2"], rows))


def _run_simulate(cfg: RunConfig) -> RunResult:
    from .simulator import simulate

    out = simulate(cfg.sim)
    return RunResult(csv_text(["y"], [[float(v)] for v in out.y]))


def _run_verify(cfg: RunConfig) -> RunResult:
    from . import verify

    rows = verify.run_suite(cfg.options["suite"], seed=cfg.seed, trials=cfg.options.get("trials"))
    text = csv_text(verify.REPORT_FIELDS, [[r[k] for k in verify.REPORT_FIELDS] for r in rows])
    return RunResult(text, ok=all(bool(r["passed"]) for r in rows))


_HANDLERS = {
    "xi1": _run_xi1,
    "xi2": _run_xi2,
    "free-energy": _run_free_energy,
    "threshold": _run_threshold,
    "zero-noise": _run_zero_noise,
    "simulate": _run_simulate,
    "verify": _run_verify,
}


# ---------------------------------------------------------------------------
# click surface
# ---------------------------------------------------------------------------

def _parse_q_grid(text: str) -> list[float]:
    """'a,b,c' or 'start:stop:count' (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            a, b, n = float(a), float(b), int(n)
            if n < 1:
                raise ValueError
            return [a + (b - a) * k / (n - 1) for k in range(n)] if n > 1 else [a]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"cannot parse q grid {text!r}") from exc


_output_opt = click.option("--output", "-o", type=click.Path(dir_okay=False),
                           help=f"Output file (default: stdout, or a file in ${OUTPUT_ENV}).")
_sigma_opt = click.option("--sigma", type=float, required=True,
                          help="Noise standard deviation sigma (units of y; 0 = noiseless).")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="key=value file supplying flag values; explicit flags win.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Cap on BLAS/OpenMP worker threads (count).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, threads: int | None) -> None:
    """Free-energy curves, weak-recovery thresholds and verification suites."""
    if threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)
    if config_path is not None:
        ctx.default_map = _default_map(read_config(config_path))


@main.command("xi1")
@_sigma_opt
@click.option("--empirical", type=click.Path(exists=True, dir_okay=False),
              help="CSV with header 'y' to use instead of the population law.")
@_output_opt
def xi1_cmd(sigma, empirical, output):
    """Xi1 and its maximizer lambda1 (CSV: sigma,xi1,lambda1)."""
    from .free_energy import ModelParams

    cfg = RunConfig("xi1", ModelParams(sigma, 1.0), output_path=resolve_output(output, "xi1.csv"),
                    options={"empirical": empirical})
    emit(run(cfg).text, cfg.output_path)


@main.command("xi2")
@_sigma_opt
@click.option("--q", type=float, required=True, help="Overlap q in [0, 1) (dimensionless).")
@click.option("--empirical", type=click.Path(exists=True, dir_okay=False),
              help="CSV with header 'y' to use instead of the population law.")
@_output_opt
def xi2_cmd(sigma, q, empirical, output):
    """Xi2(q), its maximizer (lambda2, phi) and d^2 Xi2/dq^2."""
    from .free_energy import ModelParams

    cfg = RunConfig("xi2", ModelParams(sigma, 1.0), output_path=resolve_output(output, "xi2.csv"),
                    options={"q": q, "empirical": empirical})
    emit(run(cfg).text, cfg.output_path)


@main.command("free-energy")
@_sigma_opt
@click.option("--delta", type=float, required=True, help="Sampling ratio m/n (dimensionless).")
@click.option("--Delta", "Delta", type=float, default=0.0, show_default=True,
              help="Side-information rate Delta (nats per unit n).")
@click.option("--empirical", type=click.Path(exists=True, dir_okay=False),
              help="CSV with header 'y' to use instead of the population law.")
@click.option("--gaussian", is_flag=True, help="Use the i.i.d. Gaussian sensing baseline.")
@click.option("--grid-n", type=click.IntRange(min=3), default=200, show_default=True,
              help="Number of overlap grid points (count).")
@click.option("--q-max", type=float, default=0.99, show_default=True,
              help="Largest overlap on the grid (dimensionless, >= 0.99).")
@_output_opt
def free_energy_cmd(sigma, delta, Delta, empirical, gaussian, grid_n, q_max, output):
    """Curve CSV of F(q) on the grid; verdict summary on stderr (stdout if the curve goes to a file)."""
    from .free_energy import GridSpec, ModelParams

    if gaussian and empirical:
        raise click.UsageError("--gaussian cannot be combined with --empirical")
    cfg = RunConfig("free-energy", ModelParams(sigma, delta, Delta), grid=GridSpec(grid_n, q_max),
                    output_path=resolve_output(output, "free_energy.csv"),
                    options={"empirical": empirical, "gaussian": gaussian})
    res = run(cfg)
    emit(res.text, cfg.output_path)
    click.echo(res.summary, nl=False, err=cfg.output_path is None)


@main.command("threshold")
@_sigma_opt
@click.option("--Delta", "Delta", type=float, default=0.0, show_default=True,
              help="Side-information rate Delta (nats per unit n).")
@click.option("--gaussian", is_flag=True, help="Scan the i.i.d. Gaussian sensing baseline.")
@click.option("--tol", type=float, default=1e-3, show_default=True,
              help="Bisection tolerance on delta (dimensionless).")
@click.option("--grid-n", type=click.IntRange(min=3), default=200, show_default=True,
              help="Number of overlap grid points (count).")
@_output_opt
def threshold_cmd(sigma, Delta, gaussian, tol, grid_n, output):
    """Largest delta at which the weak-recovery condition holds (JSON summary)."""
    from .free_energy import GridSpec, ModelParams

    cfg = RunConfig("threshold", ModelParams(sigma, 1.0, Delta), grid=GridSpec(grid_n, 0.99),
                    output_path=resolve_output(output, "threshold.json"),
                    options={"tol": tol, "gaussian": gaussian})
    emit(run(cfg).text, cfg.output_path)


@main.command("zero-noise")
@click.option("--q-grid", required=True,
              help="Overlaps in [0, 1): 'a,b,c' or 'start:stop:count' (dimensionless).")
@_output_opt
def zero_noise_cmd(q_grid, output):
    """Xi2(q; 0) and phi2(q; 0) on a grid (CSV: q,xi2,phi2)."""
    qs = _parse_q_grid(q_grid)
    if not qs or not all(0.0 <= q < 1.0 for q in qs):
        raise click.BadParameter("overlaps must lie in [0, 1)", param_hint="--q-grid")
    cfg = RunConfig("zero-noise", output_path=resolve_output(output, "zero_noise.csv"),
                    options={"q_grid": qs})
    emit(run(cfg).text, cfg.output_path)


@main.command("simulate")
@click.option("--n", type=int, required=True, help="Signal dimension n (count).")
@click.option("--delta", type=float, required=True, help="Sampling ratio m/n; m = ceil(delta n).")
@_sigma_opt
@click.option("--ensemble", type=click.Choice(["haar", "cdp", "gaussian"]), default="haar",
              show_default=True, help="Sensing ensemble.")
@click.option("--masks", type=int, default=None,
              help="CDP mask count L (count; default round(delta)).")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True,
              help="Random seed (integer).")
@_output_opt
def simulate_cmd(n, delta, sigma, ensemble, masks, seed, output):
    """Measurement vector y as a one-column CSV (header 'y')."""
    from .simulator import SimConfig

    sim = SimConfig(n, delta, sigma, ensemble, seed, masks)
    cfg = RunConfig("simulate", sim=sim, seed=seed,
                    output_path=resolve_output(output, "measurements.csv"))
    emit(run(cfg).text, cfg.output_path)


@main.command("verify")
@click.option("--suite", type=click.Choice(SUITES), required=True, help="Verification suite.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True,
              help="Random seed (integer).")
@click.option("--trials", type=click.IntRange(min=1), default=None,
              help="Monte Carlo trials (count; default depends on the suite).")
@_output_opt
def verify_cmd(suite, seed, trials, output):
    """Run a suite; report CSV (experiment,m,trials,statistic,value,tolerance,passed)."""
    cfg = RunConfig("verify", seed=seed, output_path=resolve_output(output, f"verify_{suite}.csv"),
                    options={"suite": suite, "trials": trials})
    res = run(cfg)
    emit(res.text, cfg.output_path)
    if not res.ok:
        raise VerificationFailed(f"suite {suite} has failing statistics")


def entry(argv=None) -> int:
    """Run the CLI and map outcomes to exit codes."""
    try:
        main.main(args=argv, prog_name="haarweak", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        return EXIT_INVALID
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INVALID
    except ParameterError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except VerificationFailed as exc:
        click.echo(f"verification failed: {exc}", err=True)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        click.echo(f"numerical error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_NUMERICAL
    return EXIT_OK


def console_main() -> None:
    sys.exit(entry())
