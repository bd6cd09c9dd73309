"""TOML run configuration with a strict schema."""

from __future__ import annotations

import sys
from pathlib import Path
from types import SimpleNamespace
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .assembly import ProblemSpec
from .mesh import DEFAULT_PARTITION, check_partition
from .solver import SolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MeshBlock(_Strict):
    nx: int = 16
    ny: int = 16
    width: float = 1.0
    height: float = 1.0
    partition: dict[str, str] = Field(default_factory=lambda: dict(DEFAULT_PARTITION))


class ProblemBlock(_Strict):
    mu_star: float = 1.0
    r: float = 2.0
    theta: float = 0.0
    g: float = 0.0
    f_coeffs: tuple[float, float] = (0.0, 0.0)
    j_kind: str = "smooth_sign"

    def spec(self) -> ProblemSpec:
        return ProblemSpec(**self.model_dump())


class SolverBlock(_Strict):
    eps: float = 1e-8
    rho: Optional[float] = None
    newton_tol: float = 1e-12
    uzawa_tol: float = 1e-11
    max_newton: int = 60
    max_uzawa: int = 20000
    accelerate: bool = True

    def config(self, seed: int = 0) -> SolverConfig:
        return SolverConfig(seed=seed, **self.model_dump())


class SolveTask(_Strict):
    kind: Literal["solve"]
    random_start: bool = False


class OracleTask(_Strict):
    kind: Literal["oracle"]
    compare: bool = True


class VerifyTask(_Strict):
    kind: Literal["verify"]
    n_starts: int = 20
    n_pairs: int = 200


class ConvergeTask(_Strict):
    kind: Literal["converge"]
    levels: Union[int, list[int]] = 16
    f_shift: tuple[float, float] = (0.0, 0.0)
    theta_shift: float = 0.0
    g_shift: float = 0.0
    power: float = 1.0
    # explicit per-level data override the 1/n formula (used to test the schedule contract)
    theta_values: Optional[list[float]] = None


class OptimizeTask(_Strict):
    kind: Literal["optimize"]
    cost: Literal["g_target", "full_data", "traction"]
    bounds: list[tuple[float, float]]
    alpha: float = 1.0
    beta: float = 0.0
    delta: float = 0.0
    # target fields: "zero" or the solution of the base problem with these overrides
    target: Literal["zero", "self"] = "self"
    target_g: Optional[float] = None
    target_f_coeffs: Optional[tuple[float, float]] = None
    target_theta: Optional[float] = None
    budget: Optional[int] = None
    restarts: int = 3


class OutputBlock(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


Task = Union[SolveTask, OracleTask, VerifyTask, ConvergeTask, OptimizeTask]


class RunConfig(_Strict):
    schema_version: int = CONFIG_SCHEMA_VERSION
    mesh: MeshBlock = Field(default_factory=MeshBlock)
    problem: ProblemBlock
    solver: SolverBlock = Field(default_factory=SolverBlock)
    task: Task = Field(discriminator="kind")
    output: OutputBlock = Field(default_factory=OutputBlock)


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def _semantic_problems(cfg: RunConfig) -> list[str]:
    out = []
    if cfg.schema_version != CONFIG_SCHEMA_VERSION:
        out.append(f"schema_version = {cfg.schema_version}: only version {CONFIG_SCHEMA_VERSION} is supported")
    m = cfg.mesh
    if m.nx < 1 or m.ny < 1:
        out.append(f"mesh.nx, mesh.ny = {m.nx}, {m.ny}: at least one cell per direction required")
    if not (m.width > 0 and m.height > 0):
        out.append(f"mesh.width, mesh.height = {m.width}, {m.height}: positive side lengths required")
    out += [f"mesh.partition: {p}" for p in check_partition(m.partition)]
    out += [f"problem: {p}" for p in _problem_violations(cfg.problem)]
    out += [f"solver: {p}" for p in _solver_violations(cfg.solver)]
    out += [f"task: {p}" for p in _task_violations(cfg.task)]
    return out


# the dataclass checks only read attributes, so they run on a plain namespace
def _problem_violations(block: ProblemBlock) -> list[str]:
    return ProblemSpec.violations(SimpleNamespace(**block.model_dump()))


def _solver_violations(block: SolverBlock) -> list[str]:
    return SolverConfig.violations(SimpleNamespace(**block.model_dump()))


def _task_violations(task) -> list[str]:
    out = []
    if isinstance(task, ConvergeTask):
        n = task.levels if isinstance(task.levels, int) else len(task.levels)
        if n < 3:
            out.append(f"levels: at least 3 perturbation levels required, got {n}")
        if task.power <= 0:
            out.append(f"power = {task.power}: perturbations must vanish as n grows (power > 0)")
        if task.theta_values is not None and not isinstance(task.levels, int) and len(task.theta_values) != len(task.levels):
            out.append("theta_values must give one value per level")
    if isinstance(task, OptimizeTask):
        dim = {"g_target": 1, "full_data": 4, "traction": 2}[task.cost]
        if len(task.bounds) != dim:
            out.append(f"bounds: cost {task.cost!r} needs {dim} intervals, got {len(task.bounds)}")
        for lo, hi in task.bounds:
            if not lo <= hi:
                out.append(f"bounds: empty interval [{lo}, {hi}]; U must be nonempty")
        if task.cost == "g_target" and task.bounds and not task.bounds[0][1] > 0:
            out.append("bounds: g_max > 0 required for the g identification problem")
        if task.cost == "g_target" and task.bounds and task.bounds[0][0] != 0:
            out.append("bounds: the g identification problem uses U = [0, g_max]")
        if task.cost == "full_data" and len(task.bounds) == 4 and (task.bounds[2][0] < 0 or task.bounds[3][0] < 0):
            out.append("bounds: theta and g intervals must be nonnegative (ϑ ≥ 0, g ≥ 0)")
        for name in ("alpha", "beta", "delta"):
            if getattr(task, name) < 0:
                out.append(f"{name} = {getattr(task, name)}: cost weights must be nonnegative")
        if task.budget is not None and task.budget < 1:
            out.append(f"budget = {task.budget}: at least one forward solve required")
        if task.restarts < 1:
            out.append(f"restarts = {task.restarts}: at least one start required")
    return out


def parse_config(data: dict) -> tuple[RunConfig | None, list[str]]:
    """Validate raw TOML data; returns the config (or None) and every violation found."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            if err["type"] == "extra_forbidden":
                problems.append(f"{_loc(err)}: unknown key (strict schema)")
            else:
                problems.append(f"{_loc(err)}: {err['msg']}")
        return None, problems + _block_problems(data)
    return cfg, _semantic_problems(cfg)


def _known(model, block) -> dict:
    return {k: v for k, v in block.items() if k in model.model_fields}


def _block_problems(data) -> list[str]:
    """Range checks on the blocks that parse on their own, so one report lists everything."""
    if not isinstance(data, dict):
        return []
    out = []
    checks = [
        ("mesh", MeshBlock, lambda b: [f"mesh.partition: {p}" for p in check_partition(b.partition)]),
        ("problem", ProblemBlock, lambda b: [f"problem: {p}" for p in _problem_violations(b)]),
        ("solver", SolverBlock, lambda b: [f"solver: {p}" for p in _solver_violations(b)]),
    ]
    for name, model, check in checks:
        block = data.get(name)
        if not isinstance(block, dict):
            continue
        try:
            parsed = model.model_validate(_known(model, block))
        except ValidationError:
            continue
        out += check(parsed)
    return out


def read_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror or exc}"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: invalid TOML: {exc}"]) from exc


def load_config(path: str | Path) -> RunConfig:
    cfg, problems = parse_config(read_toml(path))
    if problems:
        raise ConfigError(problems)
    return cfg
