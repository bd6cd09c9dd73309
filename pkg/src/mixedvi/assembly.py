"""Discrete operators of the antiplane frictional contact problem.

All bulk integrals are exact for P1 fields (gradients are constant per
triangle). Boundary integrals of nonlinear terms use 2-point Gauss per edge;
norms of piecewise-linear traces use closed-form edge integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, trace_dofs

GAUSS2_T = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
GAUSS2_W = np.array([0.5, 0.5])


# --- friction potentials -----------------------------------------------------


@dataclass(frozen=True)
class FrictionLaw:
    """Nondecreasing, bounded, Lipschitz j with its derivative and primitive."""

    name: str
    j: object
    dj: object
    primitive: object
    bound: float  # M_j
    lipschitz: float  # L_j


def _smooth_sign():
    return FrictionLaw(
        name="smooth_sign",
        j=lambda s: s / np.sqrt(s * s + 1.0),
        dj=lambda s: (s * s + 1.0) ** -1.5,
        primitive=lambda s: np.sqrt(s * s + 1.0) - 1.0,
        bound=1.0,
        lipschitz=1.0,
    )


def _arctan():
    c = 2.0 / math.pi
    return FrictionLaw(
        name="arctan",
        j=lambda s: c * np.arctan(s),
        dj=lambda s: c / (1.0 + s * s),
        primitive=lambda s: c * (s * np.arctan(s) - 0.5 * np.log1p(s * s)),
        bound=1.0,
        lipschitz=c,
    )


FRICTION_LAWS = {"smooth_sign": _smooth_sign(), "arctan": _arctan()}


def friction_law(kind: str) -> FrictionLaw:
    try:
        return FRICTION_LAWS[kind]
    except KeyError:
        raise ValueError(f"unknown j_kind {kind!r}; choose from {sorted(FRICTION_LAWS)}") from None


# --- problem data ------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Physical data of one instance.

    ``f_coeffs = (c0, c1)`` gives the traction ``f(s) = c0 + c1 * s`` on the
    Neumann part, ``s`` being arc length accumulated along the G2 edges in
    trace order.
    """

    mu_star: float = 1.0
    r: float = 2.0
    theta: float = 0.0
    g: float = 0.0
    f_coeffs: tuple[float, float] = (0.0, 0.0)
    j_kind: str = "smooth_sign"

    def __post_init__(self):
        object.__setattr__(self, "f_coeffs", tuple(float(c) for c in self.f_coeffs))
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.mu_star > 0:
            out.append(f"mu_star = {self.mu_star}: μ* > 0 required (bulk stiffness)")
        if not self.r >= 2 or not math.isfinite(self.r):
            out.append(f"r = {self.r}: r ≥ 2 required (operator exponent, 2 ≤ r < ∞)")
        if not self.theta >= 0:
            out.append(f"theta = {self.theta} violates ϑ ≥ 0 (bound on the G3 friction traction)")
        if not self.g >= 0:
            out.append(f"g = {self.g} violates g ≥ 0 (G4 friction coefficient)")
        if len(self.f_coeffs) != 2 or not all(math.isfinite(c) for c in self.f_coeffs):
            out.append(f"f_coeffs must be two finite numbers, got {self.f_coeffs}")
        if self.j_kind not in FRICTION_LAWS:
            out.append(f"unknown j_kind {self.j_kind!r}; choose from {sorted(FRICTION_LAWS)}")
        return out

    @property
    def r_conj(self) -> float:
        return self.r / (self.r - 1.0)

    @property
    def law(self) -> FrictionLaw:
        return friction_law(self.j_kind)

    def replace(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


# --- edge helpers -------------------------------------------------------------


@dataclass(frozen=True)
class EdgeSet:
    """Edges of one boundary tag in trace order, endpoints sorted lexicographically."""

    index: np.ndarray
    nodes: np.ndarray  # (E, 2)
    lengths: np.ndarray
    arc_start: np.ndarray  # arc length at the first endpoint

    @property
    def measure(self) -> float:
        return float(self.lengths.sum())

    def __len__(self):
        return len(self.index)


def edge_set(mesh: Mesh, tag: str) -> EdgeSet:
    rows = trace_dofs(mesh, tag)
    lengths = np.array([h for _, _, h in rows], dtype=float)
    return EdgeSet(
        index=np.array([i for i, _, _ in rows], dtype=np.int64),
        nodes=np.array([ab for _, ab, _ in rows], dtype=np.int64).reshape(-1, 2),
        lengths=lengths,
        arc_start=np.concatenate([[0.0], np.cumsum(lengths)[:-1]]),
    )


def linear_power_integral(a, b, h, p: float) -> np.ndarray:
    """Exact ``int_0^h |a + (b - a) t/h|^p dt`` for arrays of endpoint values."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.asarray(h, dtype=float)
    aa, bb = np.abs(a), np.abs(b)
    diff = np.abs(b - a)
    same = a * b >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.where(same, np.abs(bb ** (p + 1) - aa ** (p + 1)), aa ** (p + 1) + bb ** (p + 1))
        val = num / ((p + 1.0) * diff)
    # nearly constant edge: fall back to the midpoint expansion
    small = diff <= 1e-9 * np.maximum(aa + bb, 1e-300)
    mid = 0.5 * (aa + bb)
    return h * np.where(small, mid**p, val)


def trace_lp_norm(mesh: Mesh, u, tag: str, p: float, edges: EdgeSet | None = None) -> float:
    """``||gamma u||_{L^p(G_tag)}`` for a P1 field, computed exactly."""
    es = edges if edges is not None else edge_set(mesh, tag)
    u = np.asarray(u, dtype=float)
    total = linear_power_integral(u[es.nodes[:, 0]], u[es.nodes[:, 1]], es.lengths, p).sum()
    return float(total ** (1.0 / p))


def f_endpoint_values(spec: ProblemSpec, g2: EdgeSet) -> tuple[np.ndarray, np.ndarray]:
    c0, c1 = spec.f_coeffs
    return c0 + c1 * g2.arc_start, c0 + c1 * (g2.arc_start + g2.lengths)


def f_dual_norm(mesh: Mesh, spec: ProblemSpec, g2: EdgeSet | None = None) -> float:
    """``||f||_{Z'} = ||f||_{L^{r'}(G2)}``, exact for the linear traction."""
    es = g2 if g2 is not None else edge_set(mesh, "G2")
    fa, fb = f_endpoint_values(spec, es)
    p = spec.r_conj
    return float(linear_power_integral(fa, fb, es.lengths, p).sum() ** (1.0 / p))


# --- bulk operator -----------------------------------------------------------


def _check_nodal(mesh: Mesh, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"nodal array must have shape ({mesh.n_nodes},), got {u.shape}")
    return u


def gradients(mesh: Mesh, u) -> np.ndarray:
    u = _check_nodal(mesh, u)
    return np.einsum("tk,tkd->td", u[mesh.triangles], mesh.shape_gradients)


def _scatter(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def apply_A(mesh: Mesh, u, mu_star: float, r: float, eps: float = 0.0) -> np.ndarray:
    """Nodal vector of ``mu* int (|grad u|^2 + eps^2)^((r-2)/2) grad u . grad phi_i``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    gu = gradients(mesh, u)
    s = np.einsum("td,td->t", gu, gu)
    coef = mu_star * (s + eps * eps) ** (0.5 * (r - 2.0)) if r != 2 else np.full(len(s), float(mu_star))
    local = (mesh.areas * coef)[:, None] * np.einsum("tkd,td->tk", mesh.shape_gradients, gu)
    return _scatter(mesh, local)


def _assemble_local(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def tangent_A(mesh: Mesh, u, mu_star: float, r: float, eps: float) -> sp.csr_matrix:
    """Exact Jacobian of :func:`apply_A` at ``u`` (same ``eps``)."""
    if r > 2 and not eps > 0:
        raise ValueError("tangent of the r-Laplacian with r > 2 needs eps > 0")
    gu = gradients(mesh, u)
    s = np.einsum("td,td->t", gu, gu) + eps * eps
    if r == 2:
        a = np.full(len(s), float(mu_star))
        c = np.zeros(len(s))
    else:
        a = mu_star * s ** (0.5 * (r - 2.0))
        c = mu_star * (r - 2.0) * s ** (0.5 * (r - 4.0))
    D = a[:, None, None] * np.eye(2) + c[:, None, None] * np.einsum("ti,tj->tij", gu, gu)
    G = mesh.shape_gradients
    local = mesh.areas[:, None, None] * np.einsum("tkd,tde,tle->tkl", G, D, G)
    return _assemble_local(mesh, local)


def stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Laplacian stiffness matrix (unit coefficient)."""
    G = mesh.shape_gradients
    local = mesh.areas[:, None, None] * np.einsum("tkd,tld->tkl", G, G)
    return _assemble_local(mesh, local)


def boundary_mass(mesh: Mesh, tag: str) -> sp.csr_matrix:
    """P1 mass matrix of the trace on ``tag``: ``int phi_i phi_j``."""
    es = edge_set(mesh, tag)
    h = es.lengths
    a, b = es.nodes[:, 0], es.nodes[:, 1]
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    vals = np.concatenate([h / 3, h / 6, h / 6, h / 3])
    n = mesh.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


# --- boundary terms ------------------------------------------------------------


def _edge_quadrature(u, es: EdgeSet):
    """Trace values at the two Gauss points of each edge, shape (E, 2)."""
    ua, ub = u[es.nodes[:, 0]], u[es.nodes[:, 1]]
    return ua[:, None] * (1.0 - GAUSS2_T) + ub[:, None] * GAUSS2_T


def friction_residual_g4(mesh: Mesh, u, g: float, j_kind: str = "smooth_sign", edges: EdgeSet | None = None) -> np.ndarray:
    """Nodal vector of ``g int_{G4} j(gamma u) phi_i`` (2-point Gauss per edge)."""
    u = _check_nodal(mesh, u)
    law = friction_law(j_kind)
    es = edges if edges is not None else edge_set(mesh, "G4")
    out = np.zeros(mesh.n_nodes)
    if g == 0 or len(es) == 0:
        return out
    jq = law.j(_edge_quadrature(u, es)) * (es.lengths[:, None] * GAUSS2_W)
    out += np.bincount(es.nodes[:, 0], weights=g * (jq * (1.0 - GAUSS2_T)).sum(axis=1), minlength=mesh.n_nodes)
    out += np.bincount(es.nodes[:, 1], weights=g * (jq * GAUSS2_T).sum(axis=1), minlength=mesh.n_nodes)
    return out


def friction_tangent_g4(mesh: Mesh, u, g: float, j_kind: str = "smooth_sign", edges: EdgeSet | None = None) -> sp.csr_matrix:
    """Jacobian of :func:`friction_residual_g4`, supported on the G4 trace nodes."""
    u = _check_nodal(mesh, u)
    law = friction_law(j_kind)
    es = edges if edges is not None else edge_set(mesh, "G4")
    n = mesh.n_nodes
    if g == 0 or len(es) == 0:
        return sp.csr_matrix((n, n))
    w = g * law.dj(_edge_quadrature(u, es)) * (es.lengths[:, None] * GAUSS2_W)
    pa, pb = 1.0 - GAUSS2_T, GAUSS2_T
    kaa = (w * pa * pa).sum(axis=1)
    kab = (w * pa * pb).sum(axis=1)
    kbb = (w * pb * pb).sum(axis=1)
    a, b = es.nodes[:, 0], es.nodes[:, 1]
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    return sp.coo_matrix((np.concatenate([kaa, kab, kab, kbb]), (rows, cols)), shape=(n, n)).tocsr()


def load_vector(mesh: Mesh, f_coeffs, edges: EdgeSet | None = None) -> np.ndarray:
    """Nodal vector ``F_i = int_{G2} f phi_i``; exact for the linear traction."""
    c0, c1 = (float(c) for c in f_coeffs)
    es = edges if edges is not None else edge_set(mesh, "G2")
    s = es.arc_start[:, None] + es.lengths[:, None] * GAUSS2_T
    fq = (c0 + c1 * s) * (es.lengths[:, None] * GAUSS2_W)
    out = np.bincount(es.nodes[:, 0], weights=(fq * (1.0 - GAUSS2_T)).sum(axis=1), minlength=mesh.n_nodes)
    out += np.bincount(es.nodes[:, 1], weights=(fq * GAUSS2_T).sum(axis=1), minlength=mesh.n_nodes)
    return out


def coupling_matrix(mesh: Mesh, edges: EdgeSet | None = None) -> sp.csr_matrix:
    """``B[e, i] = int_e phi_i`` over the G3 edges, so ``b(v, mu) = mu @ B @ v``."""
    es = edges if edges is not None else edge_set(mesh, "G3")
    m = len(es)
    rows = np.repeat(np.arange(m), 2)
    cols = es.nodes.ravel()
    vals = np.repeat(0.5 * es.lengths, 2)
    return sp.coo_matrix((vals, (rows, cols)), shape=(m, mesh.n_nodes)).tocsr()


# --- norms -------------------------------------------------------------------


def x_norm(mesh: Mesh, u, r: float) -> float:
    """``||grad u||_{L^r}``."""
    gu = gradients(mesh, u)
    mag = np.sqrt(np.einsum("td,td->t", gu, gu))
    return float((mesh.areas * mag**r).sum() ** (1.0 / r))


def y_norm(lam, mesh: Mesh, r: float, edges: EdgeSet | None = None) -> float:
    """``||lam||_{L^{r'}(G3)}`` for a multiplier constant on each G3 edge."""
    es = edges if edges is not None else edge_set(mesh, "G3")
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(es),):
        raise ValueError(f"multiplier must have one value per G3 edge ({len(es)}), got {lam.shape}")
    rc = r / (r - 1.0)
    return float((es.lengths * np.abs(lam) ** rc).sum() ** (1.0 / rc))


# --- assembled operator set ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteOperatorSet:
    mesh: Mesh
    spec: ProblemSpec
    coupling_matrix: sp.csr_matrix
    load: np.ndarray
    g2: EdgeSet
    g3: EdgeSet
    g4: EdgeSet
    free_dofs: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def gamma4_quadrature(self) -> dict:
        return {
            "nodes": self.g4.nodes,
            "points": GAUSS2_T,
            "weights": self.g4.lengths[:, None] * GAUSS2_W,
        }

    def bulk(self, u, eps: float = 0.0) -> np.ndarray:
        return apply_A(self.mesh, u, self.spec.mu_star, self.spec.r, eps)

    def friction(self, u) -> np.ndarray:
        return friction_residual_g4(self.mesh, u, self.spec.g, self.spec.j_kind, self.g4)

    def residual(self, u, lam, eps: float = 0.0) -> np.ndarray:
        """Full nodal residual ``A(u) + G(u) + B^T lam - F``."""
        return self.bulk(u, eps) + self.friction(u) + self.coupling_matrix.T @ lam - self.load

    def jacobian(self, u, eps: float) -> sp.csr_matrix:
        m, s = self.mesh, self.spec
        return (tangent_A(m, u, s.mu_star, s.r, eps) + friction_tangent_g4(m, u, s.g, s.j_kind, self.g4)).tocsr()

    def x_norm(self, u) -> float:
        return x_norm(self.mesh, u, self.spec.r)

    def y_norm(self, lam) -> float:
        return y_norm(lam, self.mesh, self.spec.r, self.g3)

    def with_spec(self, spec: ProblemSpec) -> "DiscreteOperatorSet":
        """Same mesh data with new physical data (reuses the edge sets)."""
        return replace(self, spec=spec, load=load_vector(self.mesh, spec.f_coeffs, self.g2), extras={})


def assemble_operators(mesh: Mesh, spec: ProblemSpec) -> DiscreteOperatorSet:
    g2, g3, g4 = edge_set(mesh, "G2"), edge_set(mesh, "G3"), edge_set(mesh, "G4")
    return DiscreteOperatorSet(
        mesh=mesh,
        spec=spec,
        coupling_matrix=coupling_matrix(mesh, g3),
        load=load_vector(mesh, spec.f_coeffs, g2),
        g2=g2,
        g3=g3,
        g4=g4,
        free_dofs=mesh.free_dofs,
    )


# --- oracle energy ---------------------------------------------------------------


@dataclass(frozen=True)
class EnergyValue:
    total: float
    bulk: float
    gamma3: float
    gamma4: float
    load: float

    @property
    def parts(self) -> dict[str, float]:
        return {"bulk": self.bulk, "gamma3": self.gamma3, "gamma4": self.gamma4, "load": self.load}


def oracle_energy(mesh: Mesh, u, spec: ProblemSpec, ops: DiscreteOperatorSet | None = None) -> EnergyValue:
    """Convex energy whose minimizer solves the discrete mixed problem.

    ``(mu*/r) int |grad u|^r + theta sum_e |int_e gamma u| + g int_{G4} Jhat(gamma u) - int_{G2} f gamma u``
    with ``Jhat' = j``. The contact term measures the trace through its edge
    means, which is exactly the support function of the multiplier box.
    """
    ops = ops if ops is not None else assemble_operators(mesh, spec)
    u = _check_nodal(mesh, u)
    gu = gradients(mesh, u)
    mag = np.sqrt(np.einsum("td,td->t", gu, gu))
    bulk = float(spec.mu_star / spec.r * (mesh.areas * mag**spec.r).sum())
    gamma3 = float(spec.theta * np.abs(ops.coupling_matrix @ u).sum())
    if spec.g > 0 and len(ops.g4):
        q = _edge_quadrature(u, ops.g4)
        gamma4 = float(spec.g * (spec.law.primitive(q) * (ops.g4.lengths[:, None] * GAUSS2_W)).sum())
    else:
        gamma4 = 0.0
    load = -float(ops.load @ u)
    return EnergyValue(total=bulk + gamma3 + gamma4 + load, bulk=bulk, gamma3=gamma3, gamma4=gamma4, load=load)
