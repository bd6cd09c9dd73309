"""Verification harness: discrete constants, a-priori bounds, data convergence, optimization."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .assembly import (
    DiscreteOperatorSet,
    ProblemSpec,
    apply_A,
    assemble_operators,
    boundary_mass,
    edge_set,
    f_dual_norm,
    stiffness,
    trace_lp_norm,
    x_norm,
)
from .mesh import Mesh
from .solver import DiscreteState, SolveDiagnostics, SolverConfig, SolverError, uzawa_solve

log = logging.getLogger(__name__)


def thread_count() -> int:
    """Parallel forward solves allowed by ``MIXEDVI_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MIXEDVI_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn, items):
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def standard_instance(r: float = 2.0, theta: float = 0.5, g: float = 1.0) -> ProblemSpec:
    return ProblemSpec(mu_star=1.0, r=r, theta=theta, g=g, f_coeffs=(1.0, 0.5))


# six frictional cases spanning r in {2, 3}, theta in {0.1, 10}, g in {0, 1}
STANDARD_SUITE = tuple(
    standard_instance(r, theta, g)
    for r, theta, g in [(2, 0.1, 0), (2, 0.1, 1), (2, 10, 1), (3, 0.1, 0), (3, 10, 0), (3, 10, 1)]
)


# --- constants -------------------------------------------------------------------


@dataclass
class ConstantsReport:
    M: float
    q: float
    m: float
    c_h: float
    c0_h: float
    alpha_h: float
    alpha_exact: bool
    M1_h: float
    L_K1_h: float
    lambda_bound_h: float
    f_norm: float
    A0_norm: float = 0.0

    @property
    def inf_sup_ok(self) -> bool:
        return self.alpha_h > 1e-12

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "q": self.q,
            "m": self.m,
            "c_h": self.c_h,
            "c0_h": self.c0_h,
            "alpha_h": self.alpha_h,
            "alpha_exact": self.alpha_exact,
            "inf_sup_ok": self.inf_sup_ok,
            "M1_h": self.M1_h,
            "L_K1_h": self.L_K1_h,
            "lambda_bound_h": self.lambda_bound_h,
            "f_norm": self.f_norm,
            "A0_norm": self.A0_norm,
        }


def monotonicity_constant(mu_star: float, r: float) -> float:
    """Strong monotonicity constant of the r-Laplacian, ``mu* / (2^(r-2) r)``."""
    return mu_star / (2.0 ** (r - 2.0) * r)


def primal_bound(M: float, q: float, c0: float, f_norm: float, c: float, A0_norm: float = 0.0) -> float:
    return M ** (1.0 / (1.0 - q)) * (c0 * f_norm + A0_norm + c) ** (1.0 / (q - 1.0))


def _free_stiffness(mesh: Mesh) -> np.ndarray:
    free = mesh.free_dofs
    return stiffness(mesh)[free][:, free].toarray()


def random_fields(mesh: Mesh, rng: np.random.Generator, count: int) -> np.ndarray:
    """Smooth random nodal fields vanishing on G1, one per row."""
    x = mesh.nodes[:, 0] / mesh.width
    y = mesh.nodes[:, 1] / mesh.height
    basis = np.array([np.cos(k * np.pi * x) * np.cos(l * np.pi * y) for k in range(4) for l in range(4)])
    out = rng.standard_normal((count, len(basis))) @ basis
    out += 0.05 * rng.standard_normal((count, mesh.n_nodes))
    out[:, mesh.dirichlet_nodes] = 0.0
    return out


_GL_T, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_T = 0.5 * (_GL_T + 1.0)
_GL_W = 0.5 * _GL_W


def _trace_power(mesh: Mesh, es, v, p: float):
    """Gauss-Legendre value and gradient of ``int |gamma v|^p`` (smooth enough for ascent)."""
    a, b = es.nodes[:, 0], es.nodes[:, 1]
    w = v[a][:, None] * (1 - _GL_T) + v[b][:, None] * _GL_T
    hw = es.lengths[:, None] * _GL_W
    val = float((hw * np.abs(w) ** p).sum())
    d = hw * p * np.abs(w) ** (p - 1) * np.sign(w)
    grad = np.bincount(a, (d * (1 - _GL_T)).sum(1), mesh.n_nodes) + np.bincount(b, (d * _GL_T).sum(1), mesh.n_nodes)
    return val, grad


def max_trace_ratio(
    mesh: Mesh,
    tag: str,
    p: float,
    r: float,
    starts: Sequence[np.ndarray],
) -> float:
    """Best found ``sup ||gamma v||_{L^p(tag)} / ||v||_X`` by L-BFGS ascent on the log ratio.

    The returned value is evaluated exactly at the best iterate, so it is a
    certified lower bound of the supremum.
    """
    es = edge_set(mesh, tag)
    free = mesh.free_dofs

    def objective(vf):
        v = np.zeros(mesh.n_nodes)
        v[free] = vf
        num, gnum = _trace_power(mesh, es, v, p)
        den = float((mesh.areas * np.einsum("td,td->t", *(2 * [_grad(mesh, v)])) ** (r / 2)).sum())
        if num <= 0 or den <= 0:
            return 0.0, np.zeros_like(vf)
        gden = r * apply_A(mesh, v, 1.0, r)
        f = -math.log(num) / p + math.log(den) / r
        g = -gnum / (p * num) + gden / (r * den)
        return f, g[free]

    best = 0.0
    for v0 in starts:
        v0 = np.asarray(v0, dtype=float)
        nrm = x_norm(mesh, v0, r)
        if nrm == 0:
            continue
        res = sopt.minimize(objective, v0[free] / nrm, jac=True, method="L-BFGS-B", options={"maxiter": 500})
        for cand in (res.x, v0[free]):
            v = np.zeros(mesh.n_nodes)
            v[free] = cand
            nv = x_norm(mesh, v, r)
            if nv > 0:
                best = max(best, trace_lp_norm(mesh, v, tag, p, es) / nv)
    return best


def _grad(mesh, v):
    return np.einsum("tk,tkd->td", v[mesh.triangles], mesh.shape_gradients)


def _trace_functional(mesh: Mesh, tag: str) -> np.ndarray:
    """Nodal vector ``int_tag phi_i``."""
    es = edge_set(mesh, tag)
    half = 0.5 * es.lengths
    return np.bincount(es.nodes[:, 0], half, mesh.n_nodes) + np.bincount(es.nodes[:, 1], half, mesh.n_nodes)


def trace_constant(mesh: Mesh, tag: str, r: float, n_starts: int = 20, seed: int = 0) -> float:
    """``sup ||gamma v||_{L^r(tag)} / ||v||_X``; exact generalized eigenvalue at r = 2."""
    free = mesh.free_dofs
    K = _free_stiffness(mesh)
    Mb = boundary_mass(mesh, tag)[free][:, free].toarray()
    vals, vecs = sla.eigh(Mb, K)
    if r == 2:
        return float(math.sqrt(max(vals[-1], 0.0)))
    lead = np.zeros(mesh.n_nodes)
    lead[free] = vecs[:, -1]
    rng = np.random.default_rng(seed)
    starts = [lead, *random_fields(mesh, rng, n_starts - 1)]
    return max_trace_ratio(mesh, tag, r, r, starts)


def l1_trace_constant(mesh: Mesh, tag: str, r: float, n_starts: int = 20, seed: int = 0) -> float:
    """``sup int_tag |gamma v| / ||v||_X``.

    At r = 2 with an entrywise nonnegative inverse stiffness (true for these
    right-triangle meshes, checked) the supremum is the dual norm of
    ``v -> int_tag gamma v`` and is returned exactly.
    """
    free = mesh.free_dofs
    K = _free_stiffness(mesh)
    ell = _trace_functional(mesh, tag)[free]
    rep = np.linalg.solve(K, ell)
    if r == 2:
        Kinv = np.linalg.inv(K)
        if Kinv.min() >= -1e-12 * Kinv.max():
            return float(math.sqrt(ell @ rep))
    lead = np.zeros(mesh.n_nodes)
    lead[free] = rep
    rng = np.random.default_rng(seed)
    starts = [lead, *random_fields(mesh, rng, n_starts - 1)]
    return max_trace_ratio(mesh, tag, 1.0, r, starts)


def inf_sup_constant(mesh: Mesh, r: float, n_samples: int = 50, seed: int = 0) -> tuple[float, bool]:
    """Discrete inf-sup constant of the G3 coupling.

    Exact at r = 2 (smallest generalized eigenvalue of the Schur complement
    against the edge-length mass); otherwise the minimum over sampled
    multipliers of a lower estimate of the inner supremum. Returns
    ``(alpha, exact)``.
    """
    ops = assemble_operators(mesh, ProblemSpec(r=r))
    free = mesh.free_dofs
    K = _free_stiffness(mesh)
    B = ops.coupling_matrix[:, free].toarray()
    D = np.diag(ops.g3.lengths)
    S = B @ np.linalg.solve(K, B.T)
    vals, vecs = sla.eigh(S, D)
    if r == 2:
        return float(math.sqrt(max(vals[0], 0.0))), True
    rng = np.random.default_rng(seed)
    samples = [vecs[:, i] for i in range(min(5, len(vals)))]
    samples += list(rng.standard_normal((n_samples, len(vals))))
    best = math.inf
    for mu in samples:
        mu_norm = ops.y_norm(mu)
        v = np.zeros(mesh.n_nodes)
        v[free] = np.linalg.solve(K, B.T @ mu)
        ratio = float(mu @ (ops.coupling_matrix @ v)) / (x_norm(mesh, v, r) * mu_norm)
        best = min(best, ratio)
    return best, False


def dual_norm_estimate(mesh: Mesh, residual: np.ndarray, r: float, extra: np.ndarray | None = None) -> float:
    """``||R||_{X'}``: exact at r = 2, else a lower estimate from test directions."""
    free = mesh.free_dofs
    K = _free_stiffness(mesh)
    R = residual[free]
    w = np.linalg.solve(K, R)
    if r == 2:
        return float(math.sqrt(max(R @ w, 0.0)))
    best = 0.0
    for cand in (w, None if extra is None else extra[free]):
        if cand is None:
            continue
        v = np.zeros(mesh.n_nodes)
        v[free] = cand
        nv = x_norm(mesh, v, r)
        if nv > 0:
            best = max(best, abs(float(R @ cand)) / nv)
    return best


def lipschitz_estimate(mesh: Mesh, spec: ProblemSpec, radius: float, n_pairs: int = 200, seed: int = 0) -> float:
    """Largest sampled ``||A u - A v||_{X'} / ||u - v||_X`` over pairs in the X-ball of given radius."""
    if radius <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    fields = random_fields(mesh, rng, 2 * n_pairs)
    best = 0.0
    for i in range(n_pairs):
        u, v = fields[2 * i], fields[2 * i + 1]
        u = u * radius * rng.uniform() / x_norm(mesh, u, spec.r)
        v = v * radius * rng.uniform() / x_norm(mesh, v, spec.r)
        d = x_norm(mesh, u - v, spec.r)
        if d == 0:
            continue
        R = apply_A(mesh, u, spec.mu_star, spec.r) - apply_A(mesh, v, spec.mu_star, spec.r)
        best = max(best, dual_norm_estimate(mesh, R, spec.r, extra=u - v) / d)
    return best


def compute_constants(
    mesh: Mesh,
    spec: ProblemSpec,
    n_starts: int = 20,
    n_pairs: int = 200,
    seed: int = 0,
) -> ConstantsReport:
    r = spec.r
    M = monotonicity_constant(spec.mu_star, r)
    c0 = trace_constant(mesh, "G2", r, n_starts, seed)
    c = 0.0 if spec.g == 0 else spec.g * spec.law.bound * l1_trace_constant(mesh, "G4", r, n_starts, seed)
    f_norm = f_dual_norm(mesh, spec)
    M1 = primal_bound(M, r, c0, f_norm, c)
    alpha, exact = inf_sup_constant(mesh, r, seed=seed)
    L = lipschitz_estimate(mesh, spec, M1, n_pairs, seed)
    if alpha <= 1e-12:
        log.warning("discrete inf-sup constant %.3e: inf-sup condition fails", alpha)
        lam_bound = math.inf
    else:
        lam_bound = (c0 * f_norm + L * M1 + c) / alpha
    return ConstantsReport(
        M=M, q=r, m=0.0, c_h=c, c0_h=c0, alpha_h=alpha, alpha_exact=exact,
        M1_h=M1, L_K1_h=L, lambda_bound_h=lam_bound, f_norm=f_norm,
    )


# --- bounds ------------------------------------------------------------------------


@dataclass
class BoundCheck:
    x_norm: float
    y_norm: float
    M1_h: float
    lambda_bound_h: float
    primal_ok: bool
    dual_ok: bool
    dual_asserted: bool

    @property
    def passed(self) -> bool:
        return self.primal_ok and (self.dual_ok or not self.dual_asserted)

    @property
    def primal_margin(self) -> float:
        return math.inf if self.x_norm == 0 else self.M1_h / self.x_norm

    @property
    def dual_margin(self) -> float:
        return math.inf if self.y_norm == 0 else self.lambda_bound_h / self.y_norm

    def to_json(self) -> dict:
        return {
            "x_norm": self.x_norm,
            "y_norm": self.y_norm,
            "M1_h": self.M1_h,
            "lambda_bound_h": self.lambda_bound_h,
            "primal_ok": self.primal_ok,
            "primal_margin": _finite(self.primal_margin),
            "dual_ok": self.dual_ok,
            "dual_asserted": self.dual_asserted,
            "dual_margin": _finite(self.dual_margin),
            "passed": self.passed,
        }


def _finite(x: float):
    return x if math.isfinite(x) else None


def verify_bounds(mesh: Mesh, spec: ProblemSpec, state: DiscreteState, report: ConstantsReport) -> BoundCheck:
    """Check the primal bound always and the dual bound when the inf-sup constant is exact."""
    ops = assemble_operators(mesh, spec)
    xn = ops.x_norm(state.u)
    yn = ops.y_norm(state.lam)
    return BoundCheck(
        x_norm=xn,
        y_norm=yn,
        M1_h=report.M1_h,
        lambda_bound_h=report.lambda_bound_h,
        primal_ok=xn <= report.M1_h * (1 + 1e-8),
        dual_ok=yn <= report.lambda_bound_h * (1 + 1e-8),
        dual_asserted=report.alpha_exact,
    )


# --- data convergence ---------------------------------------------------------------

Schedule = Callable[[int], ProblemSpec]


class ScheduleError(ValueError):
    """A perturbation schedule does not converge to the limit data."""


def one_over_n(
    base: ProblemSpec,
    f_shift: tuple[float, float] = (0.0, 0.0),
    theta_shift: float = 0.0,
    g_shift: float = 0.0,
    power: float = 1.0,
) -> Schedule:
    """``(f + w / n^p, theta + a / n^p, g + b / n^p)``."""

    def schedule(n: int) -> ProblemSpec:
        s = float(n) ** -power
        return base.replace(
            f_coeffs=(base.f_coeffs[0] + f_shift[0] * s, base.f_coeffs[1] + f_shift[1] * s),
            theta=base.theta + theta_shift * s,
            g=base.g + g_shift * s,
        )

    return schedule


def data_distance(a: ProblemSpec, b: ProblemSpec) -> float:
    return float(
        abs(a.f_coeffs[0] - b.f_coeffs[0]) + abs(a.f_coeffs[1] - b.f_coeffs[1])
        + abs(a.theta - b.theta) + abs(a.g - b.g)
    )


def check_schedule(base: ProblemSpec, schedule: Schedule, ns: Sequence[int]) -> None:
    """Reject schedules whose data do not approach the limit data."""
    if len(ns) < 3:
        raise ScheduleError(f"need at least 3 perturbation levels, got {len(ns)}")
    if list(ns) != sorted(set(ns)) or ns[0] < 1:
        raise ScheduleError("perturbation levels must be strictly increasing positive integers")
    for n in ns:
        s = schedule(n)
        if (s.mu_star, s.r, s.j_kind) != (base.mu_star, base.r, base.j_kind):
            raise ScheduleError("schedules may only perturb f, theta and g")
    dist = [data_distance(schedule(n), base) for n in ns]
    if any(b > a * (1 + 1e-12) + 1e-15 for a, b in zip(dist, dist[1:])):
        raise ScheduleError(f"data distance to the limit increases along the schedule: {dist}")
    far = data_distance(schedule(10**9), base)
    scale = 1.0 + abs(base.f_coeffs[0]) + abs(base.f_coeffs[1]) + base.theta + base.g
    if far > 1e-6 * scale:
        raise ScheduleError(
            f"schedule does not converge to the limit data (distance {far:.3e} at n = 1e9); "
            "f_n -> f, theta_n -> theta, g_n -> g required"
        )


def weak_probes(mesh: Mesh, count: int = 5) -> np.ndarray:
    """Fixed probe fields ``cos(k pi s / L)`` on the G3 trace (s = arc length), zero elsewhere."""
    es = edge_set(mesh, "G3")
    L = es.measure
    out = np.zeros((count, mesh.n_nodes))
    for k in range(count):
        for (a, b), s0, h in zip(es.nodes, es.arc_start, es.lengths):
            out[k, a] = math.cos(k * math.pi * s0 / L)
            out[k, b] = math.cos(k * math.pi * (s0 + h) / L)
    out[:, mesh.dirichlet_nodes] = 0.0
    return out


@dataclass
class ConvergenceRow:
    n: int
    spec: ProblemSpec
    x_gap: float
    y_gap: float
    weak_gaps: list[float]
    diagnostics: SolveDiagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


@dataclass
class ConvergenceTable:
    limit: ProblemSpec
    limit_diagnostics: SolveDiagnostics
    rows: list[ConvergenceRow] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return self.limit_diagnostics.converged and all(r.converged for r in self.rows)


def convergence_study(
    mesh: Mesh,
    base: ProblemSpec,
    schedule: Schedule,
    ns: Sequence[int] | int,
    cfg: SolverConfig = SolverConfig(),
    n_probes: int = 5,
) -> ConvergenceTable:
    """Solve the limit problem and each perturbed problem; tabulate strong and weak gaps.

    ``ns`` is either the list of levels or a count N meaning ``1..N``.
    """
    ns = list(range(1, ns + 1)) if isinstance(ns, int) else list(ns)
    check_schedule(base, schedule, ns)
    ops = assemble_operators(mesh, base)
    limit, limit_diag = uzawa_solve(mesh, base, cfg, ops=ops)
    if not limit_diag.converged:
        log.warning("limit problem did not converge: %s", limit_diag.message)
    probes = weak_probes(mesh, n_probes)
    Bp = probes @ ops.coupling_matrix.T.toarray()  # (n_probes, n_edges)

    def row(n):
        spec_n = schedule(n)
        state, diag = uzawa_solve(mesh, spec_n, cfg, ops=ops.with_spec(spec_n))
        if not diag.converged:
            log.warning("n = %d did not converge: %s", n, diag.message)
        dl = state.lam - limit.lam
        return ConvergenceRow(
            n=n,
            spec=spec_n,
            x_gap=ops.x_norm(state.u - limit.u),
            y_gap=ops.y_norm(dl),
            weak_gaps=[abs(float(v)) for v in Bp @ dl],
            diagnostics=diag,
        )

    return ConvergenceTable(limit=base, limit_diagnostics=limit_diag, rows=_ordered_map(row, ns))


# --- optimization -------------------------------------------------------------------


@dataclass
class OptimizationResult:
    p_star: tuple[float, ...]
    cost_star: float
    evaluations: int
    trace: list[tuple[tuple[float, ...], float]]
    brackets: list[tuple[float, float]] = field(default_factory=list)
    failures: int = 0

    def to_json(self) -> dict:
        return {
            "p_star": list(self.p_star),
            "cost_star": _finite(self.cost_star),
            "evaluations": self.evaluations,
            "failures": self.failures,
        }


class _ZeroCost(Exception):
    """Raised once a trial point attains cost 0, the global minimum of every nonnegative cost."""


class ForwardModel:
    """Memoized parameter -> cost map with a forward-solve counter."""

    def __init__(self, mesh: Mesh, base: ProblemSpec, to_spec, cost, cfg: SolverConfig):
        self.mesh = mesh
        self.ops = assemble_operators(mesh, base)
        self.to_spec = to_spec
        self.cost_fn = cost
        self.cfg = cfg
        self.solves = 0
        self.failures = 0
        self.trace: list[tuple[tuple[float, ...], float]] = []
        self._cache: dict[tuple[float, ...], float] = {}
        self._states: list[tuple[np.ndarray, DiscreteState]] = []

    def __call__(self, p) -> float:
        key = tuple(float(x) for x in np.atleast_1d(p))
        if key in self._cache:
            return self._cache[key]
        spec = self.to_spec(key)
        self.solves += 1
        try:
            state, diag = uzawa_solve(self.mesh, spec, self.cfg, initial=self._nearest(key), ops=self.ops.with_spec(spec))
            if not diag.converged:
                raise SolverError(diag.message)
            self._states.append((np.array(key), state))
            value = float(self.cost_fn(self.ops.with_spec(spec), state, key))
        except (SolverError, ValueError) as exc:
            log.warning("forward solve failed at p = %s: %s", key, exc)
            self.failures += 1
            value = math.inf
        self._cache[key] = value
        self.trace.append((key, value))
        if value <= 0.0:
            raise _ZeroCost
        return value

    def _nearest(self, key) -> DiscreteState | None:
        # warm start from the closest solved parameter; the solution is unique, only the path changes
        if not self._states:
            return None
        p = np.array(key)
        return min(self._states, key=lambda item: float(np.abs(item[0] - p).sum()))[1]

    def result(self, brackets=()) -> OptimizationResult:
        p, c = min(self.trace, key=lambda t: t[1])
        return OptimizationResult(
            p_star=p, cost_star=c, evaluations=self.solves, trace=list(self.trace),
            brackets=list(brackets), failures=self.failures,
        )


@dataclass
class GTarget:
    """Identify the G4 friction bound: cost ``||gamma u|_G3 - u_d||_{L^r'(G3)}`` on ``U = [0, g_max]``."""

    base: ProblemSpec
    g_max: float
    u_target: np.ndarray

    def __post_init__(self):
        if not self.g_max > 0:
            raise ValueError("g_max > 0 required")

    bounds = property(lambda self: [(0.0, self.g_max)])

    def to_spec(self, p) -> ProblemSpec:
        return self.base.replace(g=p[0])

    def cost(self, ops: DiscreteOperatorSet, state: DiscreteState, p) -> float:
        return trace_lp_norm(ops.mesh, state.u - self.u_target, "G3", ops.spec.r_conj, ops.g3)


@dataclass
class FullDataCost:
    """``alpha ||u - u_d||_X^r + beta ||lam - lam_d||_Y^r' + delta |p|^2`` over ``p = (c0, c1, theta, g)``.

    ``|p|`` is the Euclidean norm of the coefficient vector.
    """

    base: ProblemSpec
    alpha: float
    beta: float
    delta: float
    u_target: np.ndarray
    lam_target: np.ndarray
    bounds: list[tuple[float, float]]

    def __post_init__(self):
        _check_box(self.bounds, 4)
        if self.bounds[2][0] < 0 or self.bounds[3][0] < 0:
            raise ValueError("theta and g bounds must be nonnegative")

    def to_spec(self, p) -> ProblemSpec:
        return self.base.replace(f_coeffs=(p[0], p[1]), theta=p[2], g=p[3])

    def cost(self, ops, state, p) -> float:
        r = ops.spec.r
        out = self.delta * float(np.dot(p, p))
        if self.alpha:
            out += self.alpha * ops.x_norm(state.u - self.u_target) ** r
        if self.beta:
            out += self.beta * ops.y_norm(state.lam - self.lam_target) ** ops.spec.r_conj
        return out


@dataclass
class TractionCost:
    """``alpha ||gamma u|_G2 - u_d||_{L^r(G2)}^2 + delta ||f||_{Z'}^2`` over ``p = (c0, c1)``."""

    base: ProblemSpec
    alpha: float
    delta: float
    u_target: np.ndarray
    bounds: list[tuple[float, float]]

    def __post_init__(self):
        _check_box(self.bounds, 2)

    def to_spec(self, p) -> ProblemSpec:
        return self.base.replace(f_coeffs=(p[0], p[1]))

    def cost(self, ops, state, p) -> float:
        miss = trace_lp_norm(ops.mesh, state.u - self.u_target, "G2", ops.spec.r, ops.g2)
        return self.alpha * miss**2 + self.delta * f_dual_norm(ops.mesh, ops.spec, ops.g2) ** 2


def _check_box(bounds, dim):
    if len(bounds) != dim or any(not lo <= hi for lo, hi in bounds):
        raise ValueError(f"admissible set must be a nonempty box of dimension {dim}, got {bounds}")


PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(fn, lo: float, hi: float, budget: int = 60, xtol: float = 1e-9, brackets=None):
    """Golden-section search including the interval ends; returns the bracket history."""
    brackets = [] if brackets is None else brackets
    brackets.append((lo, hi))
    fn(lo)
    fn(hi)
    x1, x2 = hi - PHI * (hi - lo), lo + PHI * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    used = 4
    while used < budget and hi - lo > xtol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - PHI * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + PHI * (hi - lo)
            f2 = fn(x2)
        used += 1
        brackets.append((lo, hi))
    return brackets


def optimize(
    mesh: Mesh,
    problem,
    cfg: SolverConfig = SolverConfig(),
    budget: int | None = None,
    restarts: int = 3,
    seed: int = 0,
    xtol: float = 1e-9,
) -> OptimizationResult:
    """Minimize a cost over the admissible box.

    Scalar parameters use golden-section search (default budget 60 forward
    solves); vector parameters use Nelder-Mead with bound clipping from
    ``restarts`` starting points, the first being the smallest-norm
    admissible point (default budget 300).
    """
    model = ForwardModel(mesh, problem.base, problem.to_spec, problem.cost, cfg)
    bounds = problem.bounds
    if len(bounds) == 1:
        lo, hi = bounds[0]
        brackets = []
        try:
            golden_section(model, lo, hi, budget or 60, xtol * max(1.0, hi - lo), brackets)
        except _ZeroCost:
            pass
        return model.result(brackets)

    budget = budget or 300
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    rng = np.random.default_rng(seed)
    starts = [np.clip(np.zeros(len(bounds)), lo, hi)]
    starts += [lo + (hi - lo) * rng.uniform(size=len(bounds)) for _ in range(restarts - 1)]
    per_start = budget // restarts
    for x0 in starts:
        remaining = budget - model.solves
        if remaining <= 0:
            break
        cap = min(per_start, remaining)
        counted = model.solves

        def capped(p):
            if model.solves - counted >= cap and tuple(float(x) for x in p) not in model._cache:
                return math.inf
            return model(p)

        try:
            sopt.minimize(
                capped, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                options={"maxfev": 4 * cap, "xatol": 1e-10, "fatol": 1e-14},
            )
        except _ZeroCost:
            break
    return model.result()
