"""Command-line front end: ``mixedvi run CONFIG`` and per-task subcommands."""

from __future__ import annotations

import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, io
from .assembly import assemble_operators
from .config import ConfigError, ConvergeTask, OptimizeTask, RunConfig, load_config, parse_config, read_toml
from .mesh import build_rect_mesh
from .solver import (
    InfSupError,
    SolverError,
    complementarity_gap,
    oracle_minimize,
    random_state,
    uzawa_solve,
)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("mixedvi")

# tolerances of the asserted checks
FEASIBILITY_TOL = 1e-10
COMPLEMENTARITY_TOL = 1e-6
ORACLE_TOL = 1e-4


class RunFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


class Context:
    def __init__(self, cfg: RunConfig, out: Path, seed: int | None, quiet: bool):
        self.cfg = cfg
        self.out = out
        self.seed = 0 if seed is None else seed
        self.seeded = seed is not None
        self.quiet = quiet
        self.mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.width, cfg.mesh.height, dict(cfg.mesh.partition))
        self.spec = cfg.problem.spec()
        self.solver = cfg.solver.config(self.seed)
        self.formats = set(cfg.output.formats)

    def say(self, msg: str) -> None:
        if not self.quiet:
            click.echo(msg)

    def csv(self, name: str, writer, *args) -> None:
        if "csv" in self.formats:
            writer(self.out / name, *args)

    def json(self, name: str, payload: dict) -> None:
        if "json" in self.formats:
            io.write_json(self.out / name, {"schema_version": io.OUTPUT_SCHEMA_VERSION, **payload})


def _spec_json(spec) -> dict:
    return {
        "mu_star": spec.mu_star,
        "r": spec.r,
        "theta": spec.theta,
        "g": spec.g,
        "f_coeffs": list(spec.f_coeffs),
        "j_kind": spec.j_kind,
    }


def _solve(ctx: Context, spec=None, ops=None):
    spec = spec or ctx.spec
    initial = None
    random_start = getattr(ctx.cfg.task, "random_start", False)
    if random_start or ctx.seeded:
        initial = random_state(ctx.mesh, spec, ctx.seed)
    state, diag = uzawa_solve(ctx.mesh, spec, ctx.solver, initial=initial, ops=ops)
    return state, diag


def _write_state(ctx: Context, state, diag) -> None:
    ctx.csv("u.csv", io.write_u, ctx.mesh, state.u)
    ctx.csv("lambda.csv", io.write_lambda, ctx.mesh, state.lam)
    ctx.csv("trace.csv", io.write_residual_trace, diag)
    ctx.json("diagnostics.json", {"solver": diag.to_json()})


def _state_checks(ops, state) -> dict:
    theta = ops.spec.theta
    gap, l1 = complementarity_gap(ops, state)
    feasible = bool(np.all(np.abs(state.lam) <= theta + FEASIBILITY_TOL))
    return {
        "x_norm": ops.x_norm(state.u),
        "y_norm": ops.y_norm(state.lam),
        "max_abs_lambda": float(np.abs(state.lam).max()) if len(state.lam) else 0.0,
        "feasible": feasible,
        "complementarity_gap": gap,
        "trace_l1": l1,
        "complementarity_ok": gap >= -COMPLEMENTARITY_TOL * max(1.0, l1),
    }


def _require_converged(diag, what: str = "solve") -> None:
    if not diag.converged:
        raise RunFailure(EXIT_NONCONVERGENCE, f"{what} did not converge: {diag.message}")


# --- tasks -------------------------------------------------------------------------


def task_solve(ctx: Context) -> int:
    ops = assemble_operators(ctx.mesh, ctx.spec)
    state, diag = _solve(ctx, ops=ops)
    _write_state(ctx, state, diag)
    checks = _state_checks(ops, state)
    ctx.json("summary.json", {"task": "solve", "problem": _spec_json(ctx.spec), "checks": checks, "solver": diag.to_json()})
    _require_converged(diag)
    ctx.say(f"solve: converged in {diag.uzawa_iters} Uzawa iterations, |u|_X = {checks['x_norm']:.6g}")
    if not (checks["feasible"] and checks["complementarity_ok"]):
        raise RunFailure(EXIT_CHECK, "multiplier feasibility or complementarity check failed")
    return EXIT_OK


def task_oracle(ctx: Context) -> int:
    ops = assemble_operators(ctx.mesh, ctx.spec)
    try:
        oracle = oracle_minimize(ctx.mesh, ctx.spec, ctx.solver, ops=ops)
    except InfSupError as exc:
        raise RunFailure(EXIT_CHECK, str(exc)) from exc
    except SolverError as exc:
        raise RunFailure(EXIT_NONCONVERGENCE, str(exc)) from exc
    ctx.csv("u.csv", io.write_u, ctx.mesh, oracle.u)
    ctx.csv("lambda.csv", io.write_lambda, ctx.mesh, oracle.lam)
    payload = {"task": "oracle", "problem": _spec_json(ctx.spec), "checks": _state_checks(ops, oracle)}
    ok = True
    if getattr(ctx.cfg.task, "compare", True):
        state, diag = _solve(ctx, ops=ops)
        x_gap = ops.x_norm(state.u - oracle.u)
        scale = max(1.0, ops.x_norm(state.u))
        ok = x_gap <= ORACLE_TOL * scale
        payload["comparison"] = {
            "x_gap": x_gap,
            "y_gap": ops.y_norm(state.lam - oracle.lam),
            "tolerance": ORACLE_TOL * scale,
            "passed": ok,
            "solver": diag.to_json(),
        }
        ctx.json("summary.json", payload)
        _require_converged(diag, "Uzawa solve")
        ctx.say(f"oracle: |u_uzawa - u_oracle|_X = {x_gap:.3e}")
    else:
        ctx.json("summary.json", payload)
    if not ok:
        raise RunFailure(EXIT_CHECK, "Uzawa and energy-minimization solutions disagree")
    return EXIT_OK


def task_verify(ctx: Context) -> int:
    task = ctx.cfg.task
    ops = assemble_operators(ctx.mesh, ctx.spec)
    state, diag = _solve(ctx, ops=ops)
    _write_state(ctx, state, diag)
    n_starts = getattr(task, "n_starts", 20)
    n_pairs = getattr(task, "n_pairs", 200)
    report = analysis.compute_constants(ctx.mesh, ctx.spec, n_starts, n_pairs, ctx.seed)
    bounds = analysis.verify_bounds(ctx.mesh, ctx.spec, state, report)
    checks = _state_checks(ops, state)
    passed = bounds.passed and report.inf_sup_ok and checks["feasible"] and checks["complementarity_ok"]
    ctx.json(
        "summary.json",
        {
            "task": "verify",
            "problem": _spec_json(ctx.spec),
            "constants": report.to_json(),
            "bounds": bounds.to_json(),
            "checks": checks,
            "passed": passed,
            "solver": diag.to_json(),
        },
    )
    _require_converged(diag)
    ctx.say(
        f"verify: |u|_X = {bounds.x_norm:.6g} <= M1_h = {report.M1_h:.6g} ({'ok' if bounds.primal_ok else 'FAILED'}), "
        f"|lambda|_Y = {bounds.y_norm:.6g} vs {report.lambda_bound_h:.6g} "
        f"({'ok' if bounds.dual_ok else 'FAILED'}{'' if bounds.dual_asserted else ', informational'})"
    )
    if not report.inf_sup_ok:
        raise RunFailure(EXIT_CHECK, f"discrete inf-sup constant {report.alpha_h:.3e} is not positive")
    if not passed:
        raise RunFailure(EXIT_CHECK, "a bound, feasibility or complementarity check failed")
    return EXIT_OK


def _schedule(ctx: Context, task: ConvergeTask):
    levels = list(range(1, task.levels + 1)) if isinstance(task.levels, int) else list(task.levels)
    formula = analysis.one_over_n(ctx.spec, task.f_shift, task.theta_shift, task.g_shift, task.power)
    if task.theta_values is None:
        return formula, levels
    # explicit values hold from their level on, so the tail repeats the last one
    pairs = sorted(zip(levels, task.theta_values))

    def schedule(n):
        theta = next((t for k, t in reversed(pairs) if k <= n), pairs[0][1])
        return formula(n).replace(theta=theta)

    return schedule, levels


def task_converge(ctx: Context) -> int:
    task = ctx.cfg.task
    schedule, levels = _schedule(ctx, task)
    try:
        table = analysis.convergence_study(ctx.mesh, ctx.spec, schedule, levels, ctx.solver)
    except analysis.ScheduleError as exc:
        raise RunFailure(EXIT_CONFIG, str(exc)) from exc
    n_probes = len(table.rows[0].weak_gaps) if table.rows else 0
    header = ["n", "f_c0", "f_c1", "theta", "g", "x_gap", "y_gap"]
    header += [f"weak_{i + 1}" for i in range(n_probes)] + ["uzawa_iters", "converged"]
    rows = [
        [r.n, *r.spec.f_coeffs, r.spec.theta, r.spec.g, r.x_gap, r.y_gap, *r.weak_gaps, r.diagnostics.uzawa_iters, r.converged]
        for r in table.rows
    ]
    ctx.csv("table.csv", io.write_csv, header, rows)
    x = [r.x_gap for r in table.rows]
    last = table.rows[-1]
    quarter = _row_at(table, levels[-1] // 4)
    trend_ok = quarter is None or (
        last.x_gap <= quarter.x_gap and all(a <= b for a, b in zip(last.weak_gaps, quarter.weak_gaps))
    )
    summary = {
        "task": "converge",
        "problem": _spec_json(ctx.spec),
        "levels": levels,
        "x_gap_strictly_decreasing": all(b < a for a, b in zip(x, x[1:])),
        "trend_ok": trend_ok,
        "all_converged": table.all_converged,
        "limit_solver": table.limit_diagnostics.to_json(),
    }
    ctx.json("summary.json", summary)
    if not table.all_converged:
        raise RunFailure(EXIT_NONCONVERGENCE, "at least one solve of the study did not converge")
    ctx.say(f"converge: {len(rows)} rows, x gap {x[0]:.3e} -> {x[-1]:.3e}")
    if not trend_ok:
        raise RunFailure(EXIT_CHECK, "gaps at the last level exceed the gaps at a quarter of it")
    return EXIT_OK


def _row_at(table, n):
    for r in table.rows:
        if r.n == n:
            return r
    return None


def _problem(ctx: Context, task: OptimizeTask):
    base = ctx.spec
    if task.target == "zero":
        u_d = np.zeros(ctx.mesh.n_nodes)
        lam_d = np.zeros(sum(1 for t in ctx.mesh.edge_tags if t == "G3"))
    else:
        changes = {}
        if task.target_g is not None:
            changes["g"] = task.target_g
        if task.target_theta is not None:
            changes["theta"] = task.target_theta
        if task.target_f_coeffs is not None:
            changes["f_coeffs"] = task.target_f_coeffs
        state, diag = uzawa_solve(ctx.mesh, base.replace(**changes), ctx.solver)
        _require_converged(diag, "target solve")
        u_d, lam_d = state.u, state.lam
    if task.cost == "g_target":
        return analysis.GTarget(base, task.bounds[0][1], u_d)
    if task.cost == "full_data":
        return analysis.FullDataCost(base, task.alpha, task.beta, task.delta, u_d, lam_d, list(task.bounds))
    return analysis.TractionCost(base, task.alpha, task.delta, u_d, list(task.bounds))


def task_optimize(ctx: Context) -> int:
    task = ctx.cfg.task
    problem = _problem(ctx, task)
    result = analysis.optimize(ctx.mesh, problem, ctx.solver, task.budget, task.restarts, ctx.seed)
    dim = len(problem.bounds)
    rows = [[i, *p, c] for i, (p, c) in enumerate(result.trace)]
    ctx.csv("trace.csv", io.write_csv, ["evaluation", *[f"p_{k + 1}" for k in range(dim)], "cost"], rows)
    if result.brackets:
        ctx.csv("brackets.csv", io.write_csv, ["step", "lower", "upper"], [[i, a, b] for i, (a, b) in enumerate(result.brackets)])
    ctx.json("summary.json", {"task": "optimize", "cost": task.cost, "problem": _spec_json(ctx.spec), "result": result.to_json()})
    if not math.isfinite(result.cost_star):
        raise RunFailure(EXIT_NONCONVERGENCE, "every forward solve failed")
    ctx.say(f"optimize: p* = {list(result.p_star)}, cost {result.cost_star:.6g} after {result.evaluations} solves")
    return EXIT_OK


TASKS = {
    "solve": task_solve,
    "oracle": task_oracle,
    "verify": task_verify,
    "converge": task_converge,
    "optimize": task_optimize,
}
# tasks without required parameters may be run on any config
DEFAULT_TASKS = {"solve", "oracle", "verify"}


def execute(config: str | Path, out: str | Path | None = None, seed: int | None = None, quiet: bool = False, kind: str | None = None) -> int:
    """Run one config end to end and return the process exit status."""
    try:
        cfg = load_config(config)
    except ConfigError as exc:
        for p in exc.problems:
            click.echo(f"config error: {p}", err=True)
        return EXIT_CONFIG
    if kind is not None and cfg.task.kind != kind:
        if kind not in DEFAULT_TASKS:
            click.echo(f"config error: task.kind is {cfg.task.kind!r} but the {kind!r} command was requested", err=True)
            return EXIT_CONFIG
        cfg = cfg.model_copy(update={"task": parse_config({**_dump(cfg), "task": {"kind": kind}})[0].task})
    out_dir = Path(out if out is not None else cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out_dir, seed, quiet)
    try:
        return TASKS[cfg.task.kind](ctx)
    except RunFailure as exc:
        click.echo(f"{cfg.task.kind}: {exc}", err=True)
        return exc.code


def _dump(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(level=logging.ERROR if quiet else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main():
    """Solver and verification harness for a mixed frictional contact problem."""


def _common(fn):
    fn = click.option("--quiet", is_flag=True, help="Suppress progress output.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Seed for random starts and sampled estimates.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    return fn


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@_common
def run(config, out, seed, quiet):
    """Run the task named in CONFIG."""
    _setup_logging(quiet)
    sys.exit(execute(config, out, seed, quiet))


def _task_command(kind: str):
    @click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="TOML run configuration.")
    @_common
    def command(config, out, seed, quiet):
        _setup_logging(quiet)
        sys.exit(execute(config, out, seed, quiet, kind=kind))

    command.__doc__ = f"Run the {kind} task."
    return main.command(name=kind)(command)


for _kind in TASKS:
    _task_command(_kind)


@main.command()
@click.argument("path", required=False, type=click.Path(dir_okay=False))
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="TOML run configuration.")
@click.option("--quiet", is_flag=True)
def validate(path, config, quiet):
    """List every violated constraint in a config; exit 0 iff it is valid."""
    target = config or path
    if target is None:
        click.echo("validate: a config path is required", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        data = read_toml(target)
    except ConfigError as exc:
        for p in exc.problems:
            click.echo(p, err=True)
        sys.exit(EXIT_CONFIG)
    _, problems = parse_config(data)
    for p in problems:
        click.echo(p)
    if not problems and not quiet:
        click.echo(f"{target}: valid")
    sys.exit(EXIT_CONFIG if problems else EXIT_OK)


if __name__ == "__main__":
    main()
