"""Uzawa saddle-point solver with inner Newton, and an energy-minimization oracle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    DiscreteOperatorSet,
    ProblemSpec,
    assemble_operators,
    gradients,
    oracle_energy,
    stiffness,
    trace_lp_norm,
)
from .mesh import Mesh

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A solve could not reach its tolerance."""


class InfSupError(SolverError):
    """The discrete coupling matrix is rank deficient on the free dofs."""


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1e-8
    rho: float | None = None
    newton_tol: float = 1e-12
    uzawa_tol: float = 1e-11
    max_newton: int = 60
    max_uzawa: int = 20000
    seed: int = 0
    accelerate: bool = True

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.eps > 0:
            out.append(f"eps = {self.eps} must be > 0")
        if self.rho is not None and not self.rho > 0:
            out.append(f"rho = {self.rho} must be > 0")
        for name in ("newton_tol", "uzawa_tol"):
            if not getattr(self, name) > 0:
                out.append(f"{name} = {getattr(self, name)} must be > 0")
        for name in ("max_newton", "max_uzawa"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                out.append(f"{name} = {getattr(self, name)} must be an integer >= 1")
        return out

    def step(self, spec: ProblemSpec) -> float:
        if self.rho is not None:
            return self.rho
        return (0.5 if spec.r == 2 else 0.1) * spec.mu_star


@dataclass
class DiscreteState:
    u: np.ndarray
    lam: np.ndarray


@dataclass
class SolveDiagnostics:
    uzawa_iters: int = 0
    newton_iters_total: int = 0
    residual_history: list[float] = field(default_factory=list)
    inner_lengths: list[int] = field(default_factory=list)
    multiplier_updates: list[float] = field(default_factory=list)
    restarts: int = 0
    final_residual: float = math.inf
    converged: bool = False
    message: str = ""

    def to_json(self) -> dict:
        return {
            "uzawa_iters": self.uzawa_iters,
            "newton_iters_total": self.newton_iters_total,
            "restarts": self.restarts,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "message": self.message,
            "last_multiplier_update": self.multiplier_updates[-1] if self.multiplier_updates else None,
        }


def project_Lambda(lam, theta: float) -> np.ndarray:
    """Clamp every edge value into ``[-theta, theta]``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    return np.clip(np.asarray(lam, dtype=float), -theta, theta)


def _ops(mesh: Mesh, spec: ProblemSpec, ops: DiscreteOperatorSet | None) -> DiscreteOperatorSet:
    if ops is None:
        return assemble_operators(mesh, spec)
    if ops.spec != spec:
        return ops.with_spec(spec)
    return ops


def _cold_start(ops: DiscreteOperatorSet, lam: np.ndarray) -> np.ndarray:
    """Laplace solution rescaled so that it satisfies the energy balance of the r-Laplacian."""
    mesh, spec = ops.mesh, ops.spec
    free = ops.free_dofs
    rhs = ops.load - ops.friction(np.zeros(mesh.n_nodes)) - ops.coupling_matrix.T @ lam
    u = np.zeros(mesh.n_nodes)
    if not np.any(rhs[free]):
        return u
    K = stiffness(mesh)[free][:, free].tocsc()
    u[free] = spla.spsolve(K, rhs[free])
    if spec.r != 2:
        work = float(ops.bulk(u) @ u)
        power = float(rhs @ u)
        if work > 0 and power > 0:
            u *= (power / work) ** (1.0 / (spec.r - 1.0))
    return u


def newton_inner(
    mesh: Mesh,
    spec: ProblemSpec,
    lam,
    cfg: SolverConfig,
    u0=None,
    ops: DiscreteOperatorSet | None = None,
    history: list | None = None,
) -> tuple[np.ndarray, int]:
    """Solve ``A(u) + G(u) + B^T lam = F`` on the free dofs.

    Returns ``(u, steps)``. Each step halves its length until the residual
    norm decreases; raises :class:`SolverError` if that fails or the step
    budget runs out.
    """
    ops = _ops(mesh, spec, ops)
    lam = np.asarray(lam, dtype=float)
    free = ops.free_dofs
    if spec.r > 2 and not cfg.eps > 0:
        raise ValueError("eps > 0 required when r > 2")
    u = _cold_start(ops, lam) if u0 is None else np.array(u0, dtype=float)
    u[mesh.dirichlet_nodes] = 0.0

    def res(w):
        return ops.residual(w, lam, cfg.eps)[free]

    R = res(u)
    rn = float(np.linalg.norm(R))
    if history is not None:
        history.append(rn)
    steps = 0
    while rn > cfg.newton_tol:
        if steps >= cfg.max_newton:
            raise SolverError(f"Newton: {steps} steps, residual {rn:.3e} > {cfg.newton_tol:.1e}")
        du = np.zeros_like(u)
        du[free] = -_jacobian_solver(ops, u, cfg.eps)(R)
        t = 1.0
        for _ in range(60):
            trial = u + t * du
            Rt = res(trial)
            rt = float(np.linalg.norm(Rt))
            if rt < rn:
                break
            t *= 0.5
        else:
            raise SolverError(f"Newton: line search exhausted at residual {rn:.3e}")
        u, R, rn = trial, Rt, rt
        steps += 1
        if history is not None:
            history.append(rn)
    return u, steps


def _jacobian_solver(ops: DiscreteOperatorSet, u, eps: float):
    """Factorized Jacobian on the free dofs; cached when the problem is linear."""
    free = ops.free_dofs
    linear = ops.spec.r == 2 and ops.spec.g == 0
    key = ("lu", ops.spec.mu_star)
    if linear and key in ops.extras:
        return ops.extras[key]
    solve = spla.splu(ops.jacobian(u, eps)[free][:, free].tocsc()).solve
    if linear:
        ops.extras[key] = solve
    return solve


def random_state(mesh: Mesh, spec: ProblemSpec, seed: int, scale: float = 1.0) -> DiscreteState:
    """Random start: Gaussian nodal field vanishing on G1, multiplier uniform in the box."""
    rng = np.random.default_rng(seed)
    u = scale * rng.standard_normal(mesh.n_nodes)
    u[mesh.dirichlet_nodes] = 0.0
    n_edges = sum(1 for t in mesh.edge_tags if t == "G3")
    lam = rng.uniform(-spec.theta, spec.theta, n_edges)
    return DiscreteState(u=u, lam=lam)


def uzawa_solve(
    mesh: Mesh,
    spec: ProblemSpec,
    cfg: SolverConfig = SolverConfig(),
    initial: DiscreteState | None = None,
    ops: DiscreteOperatorSet | None = None,
) -> tuple[DiscreteState, SolveDiagnostics]:
    """Projected Uzawa iteration for the discrete mixed problem.

    The multiplier step uses edge means of the trace (``B u`` divided by
    edge length), i.e. the L2 Riesz map of the piecewise-constant space.
    Never raises on non-convergence: ``diag.converged`` is False instead.
    """
    ops = _ops(mesh, spec, ops)
    diag = SolveDiagnostics()
    B = ops.coupling_matrix
    h3 = ops.g3.lengths
    rho = cfg.step(spec)

    if initial is None:
        lam = np.zeros(len(ops.g3))
        u = None
    else:
        lam = project_Lambda(initial.lam, spec.theta)
        u = np.array(initial.u, dtype=float)

    best = DiscreteState(u=np.zeros(mesh.n_nodes) if u is None else u.copy(), lam=lam.copy())
    y, prev, momentum = lam, lam, 1.0
    for k in range(cfg.max_uzawa):
        hist: list[float] = []
        try:
            u, steps = newton_inner(mesh, spec, y, cfg, u0=u, ops=ops, history=hist)
        except SolverError as exc:
            diag.residual_history.extend(hist)
            diag.inner_lengths.append(len(hist))
            diag.uzawa_iters = k
            diag.message = f"inner Newton failed at Uzawa iteration {k}: {exc}"
            log.warning(diag.message)
            break
        diag.residual_history.extend(hist)
        diag.inner_lengths.append(len(hist))
        diag.newton_iters_total += steps
        best = DiscreteState(u=u.copy(), lam=y.copy())

        new = project_Lambda(y + rho * (B @ u) / h3, spec.theta)
        change = ops.y_norm(new - y)
        diag.multiplier_updates.append(change)
        diag.uzawa_iters = k + 1
        if change <= cfg.uzawa_tol * max(1.0, ops.y_norm(y)):
            diag.converged = True
            diag.message = "converged"
            break
        if not cfg.accelerate:
            y = new
            continue
        # Nesterov extrapolation, restarted whenever the step turns against the momentum
        if float(h3 @ ((y - new) * (new - prev))) > 0:
            momentum = 1.0
            diag.restarts += 1
            y = new
        else:
            nxt = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
            y = project_Lambda(new + (momentum - 1.0) / nxt * (new - prev), spec.theta)
            momentum = nxt
        prev = new
    else:
        diag.message = f"Uzawa: iteration cap {cfg.max_uzawa} reached"

    # the returned pair is the last one solved together: u = u(lam)
    state = best
    diag.final_residual = float(np.linalg.norm(ops.residual(state.u, state.lam, 0.0)[ops.free_dofs]))
    return state, diag


# --- oracle ---------------------------------------------------------------------

SMOOTHING_SCHEDULE = tuple(10.0**-k for k in range(2, 9))


def _smoothed_energy(ops: DiscreteOperatorSet, u, delta: float, eps: float) -> float:
    spec, mesh = ops.spec, ops.mesh
    e = oracle_energy(mesh, u, spec, ops)
    gu = gradients(mesh, u)
    s = np.einsum("td,td->t", gu, gu)
    bulk = spec.mu_star / spec.r * float((mesh.areas * ((s + eps * eps) ** (spec.r / 2) - eps**spec.r)).sum())
    mean = (ops.coupling_matrix @ u) / ops.g3.lengths
    gamma3 = spec.theta * float((ops.g3.lengths * np.sqrt(mean * mean + delta * delta)).sum())
    return bulk + gamma3 + e.gamma4 + e.load


def oracle_minimize(
    mesh: Mesh,
    spec: ProblemSpec,
    cfg: SolverConfig = SolverConfig(),
    ops: DiscreteOperatorSet | None = None,
    schedule=SMOOTHING_SCHEDULE,
) -> DiscreteState:
    """Minimize the convex energy directly, smoothing ``|m|`` to ``sqrt(m^2 + delta^2)``.

    Each smoothed problem is solved by Newton with an Armijo line search on
    the energy; the multiplier is recovered afterwards by least squares.
    """
    ops = _ops(mesh, spec, ops)
    u = _cold_start(ops, np.zeros(len(ops.g3)))

    for delta in schedule:
        u = _minimize_smoothed(ops, u, delta, cfg)

    lam = recover_multiplier(mesh, spec, u, ops=ops, eps=cfg.eps)
    return DiscreteState(u=u, lam=lam)


def _minimize_smoothed(ops: DiscreteOperatorSet, u, delta: float, cfg: SolverConfig) -> np.ndarray:
    spec = ops.spec
    free = ops.free_dofs
    B = ops.coupling_matrix
    h3 = ops.g3.lengths
    theta = spec.theta

    def gradient(w):
        mean = (B @ w) / h3
        root = np.sqrt(mean * mean + delta * delta)
        return (ops.bulk(w, cfg.eps) + ops.friction(w) - ops.load + B.T @ (theta * mean / root))[free]

    g = gradient(u)
    for it in range(cfg.max_newton * 4):
        mean = (B @ u) / h3
        root = np.sqrt(mean * mean + delta * delta)
        H = ops.jacobian(u, cfg.eps)
        if theta > 0:
            H = H + B.T @ sp.diags(theta * delta * delta / root**3 / h3) @ B
        H = H.tocsr()[free][:, free].tocsc()
        d = -spla.spsolve(H, g)
        decrement = float(-g @ d)
        E0 = _smoothed_energy(ops, u, delta, cfg.eps)
        scale = max(1.0, abs(E0))
        log.debug("oracle delta=%g it=%d decrement=%.3e", delta, it, decrement)
        if decrement <= 1e-20 * scale:
            return u
        step = np.zeros_like(u)
        step[free] = d
        gn = np.linalg.norm(g)
        # energy differences below ~1e-10 relative are not resolvable in double
        # precision; there the gradient norm serves as the merit function
        by_energy = decrement > 1e-10 * scale
        t = 1.0
        for _ in range(60):
            trial = u + t * step
            if by_energy:
                ok = _smoothed_energy(ops, trial, delta, cfg.eps) <= E0 - 1e-4 * t * decrement
            else:
                g_trial = gradient(trial)
                ok = np.linalg.norm(g_trial) < gn
            if ok:
                break
            t *= 0.5
        else:
            if decrement <= 1e-14 * scale:
                return u  # round-off floor
            raise SolverError(f"oracle: line search failed (delta={delta:.0e}, decrement {decrement:.2e})")
        u = trial
        g = gradient(u) if by_energy else g_trial
    raise SolverError(f"oracle: Newton cap reached at delta={delta:.0e}")


def recover_multiplier(
    mesh: Mesh,
    spec: ProblemSpec,
    u,
    ops: DiscreteOperatorSet | None = None,
    eps: float = 0.0,
) -> np.ndarray:
    """Least-squares multiplier from ``B^T lam = F - A(u) - G(u)`` on the free dofs, clamped into the box."""
    ops = _ops(mesh, spec, ops)
    free = ops.free_dofs
    u = np.asarray(u, dtype=float)
    rhs = (ops.load - ops.bulk(u, eps) - ops.friction(u))[free]
    Bt = ops.coupling_matrix[:, free].T.toarray()
    if Bt.shape[1] == 0:
        return np.zeros(0)
    lam, _, rank, sv = sla.lstsq(Bt, rhs)
    if rank < Bt.shape[1] or sv.min() <= 1e-12 * sv.max():
        raise InfSupError("coupling matrix is rank deficient on the free dofs (discrete inf-sup fails)")
    return project_Lambda(lam, spec.theta)


# --- checks used by tests and the verification harness ----------------------------


def trace_edge_integrals(ops: DiscreteOperatorSet, u) -> np.ndarray:
    return ops.coupling_matrix @ np.asarray(u, dtype=float)


def complementarity_gap(ops: DiscreteOperatorSet, state: DiscreteState) -> tuple[float, float]:
    """``(<lam, gamma u> - theta * ||gamma u||_{L1(G3)}, ||gamma u||_{L1(G3)})``.

    The L1 norm is exact for the piecewise-linear trace. It dominates the sum of
    absolute edge integrals, so the gap is <= 0 for any feasible ``lam``; at the
    solution it vanishes up to sign changes of the trace inside single edges.
    """
    bu = trace_edge_integrals(ops, state.u)
    l1 = trace_lp_norm(ops.mesh, state.u, "G3", 1.0, ops.g3)
    return float(state.lam @ bu) - ops.spec.theta * l1, l1


def variational_gap(ops: DiscreteOperatorSet, state: DiscreteState, v) -> float:
    """Left side minus right side of the primal inequality tested with ``v``."""
    d = np.asarray(v, dtype=float) - state.u
    return float(
        ops.bulk(state.u) @ d
        + state.lam @ (ops.coupling_matrix @ d)
        + ops.friction(state.u) @ d
        - ops.load @ d
    )
