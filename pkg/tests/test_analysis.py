import math

import numpy as np
import pytest

from mixedvi import analysis as an
from mixedvi.assembly import ProblemSpec, assemble_operators, f_dual_norm
from mixedvi.mesh import build_rect_mesh
from mixedvi.solver import DiscreteState, SolverConfig, uzawa_solve


@pytest.mark.parametrize("r, mu, expected", [(2.0, 1.0, 0.5), (3.0, 1.0, 1 / 6), (4.0, 2.0, 1 / 8)])
def test_monotonicity_constant(r, mu, expected):
    assert an.monotonicity_constant(mu, r) == pytest.approx(expected)


def test_trace_constant_unit_square_r2(mesh8):
    # v = x attains the supremum on the unit square and is in the P1 space
    assert an.trace_constant(mesh8, "G2", 2.0) == pytest.approx(1.0, abs=1e-10)


def test_trace_ascent_agrees_with_eigenvalue(mesh4):
    exact = an.trace_constant(mesh4, "G2", 2.0)
    rng = np.random.default_rng(0)
    found = an.max_trace_ratio(mesh4, "G2", 2.0, 2.0, an.random_fields(mesh4, rng, 5))
    assert found <= exact * (1 + 1e-9)
    assert found == pytest.approx(exact, rel=1e-4)


def test_trace_constant_r3_is_certified_lower_bound(mesh4):
    c = an.trace_constant(mesh4, "G2", 3.0, n_starts=5)
    assert c >= 1.0 - 1e-12  # v = x gives ratio 1


def test_l1_constant_exact_beats_ascent(mesh4):
    exact = an.l1_trace_constant(mesh4, "G4", 2.0)
    rng = np.random.default_rng(1)
    found = an.max_trace_ratio(mesh4, "G4", 1.0, 2.0, an.random_fields(mesh4, rng, 5))
    assert found <= exact * (1 + 1e-9)
    assert found >= 0.9 * exact


def test_inf_sup_r2_is_the_infimum(mesh4):
    alpha, exact = an.inf_sup_constant(mesh4, 2.0)
    assert exact and alpha > 0
    ops = assemble_operators(mesh4, ProblemSpec())
    free = mesh4.free_dofs
    K = an._free_stiffness(mesh4)
    B = ops.coupling_matrix[:, free].toarray()
    rng = np.random.default_rng(2)
    for _ in range(50):
        mu = rng.standard_normal(4)
        # sup_v b(v, mu) / |v|_X is attained at v = K^-1 B^T mu
        sup = math.sqrt(mu @ B @ np.linalg.solve(K, B.T @ mu)) / ops.y_norm(mu)
        assert sup >= alpha * (1 - 1e-10)


def test_inf_sup_degrades_under_refinement():
    alphas = [an.inf_sup_constant(build_rect_mesh(n, n), 2.0)[0] for n in (4, 8, 16)]
    assert all(a > 0 for a in alphas)
    assert alphas[0] > alphas[1] > alphas[2]


def test_inf_sup_sampled_for_r3(mesh4):
    alpha, exact = an.inf_sup_constant(mesh4, 3.0, n_samples=10)
    assert not exact and alpha > 0


def test_dual_norm_exact_at_r2(mesh4):
    rng = np.random.default_rng(3)
    R = rng.standard_normal(mesh4.n_nodes)
    norm = an.dual_norm_estimate(mesh4, R, 2.0)
    ops = assemble_operators(mesh4, ProblemSpec())
    for v in an.random_fields(mesh4, rng, 20):
        assert abs(R @ v) <= norm * ops.x_norm(v) * (1 + 1e-10)


def test_constants_without_g4_friction(mesh8):
    spec = ProblemSpec(r=2.0, theta=1.0, g=0.0, f_coeffs=(1.0, 0.0))
    rep = an.compute_constants(mesh8, spec, n_starts=3, n_pairs=10)
    assert rep.c_h == 0.0
    assert rep.M == 0.5 and rep.q == 2.0 and rep.m == 0.0
    assert rep.M1_h == pytest.approx((rep.c0_h * rep.f_norm / rep.M) ** (1 / (rep.q - 1)))
    assert rep.inf_sup_ok and rep.alpha_exact
    assert rep.L_K1_h == pytest.approx(1.0)  # A is linear with unit stiffness at r = 2
    js = rep.to_json()
    assert set(js) >= {"M", "q", "m", "c_h", "c0_h", "alpha_h", "M1_h", "L_K1_h", "lambda_bound_h"}


def test_constants_with_friction_r3(mesh4):
    spec = ProblemSpec(r=3.0, theta=1.0, g=2.0, f_coeffs=(1.0, 0.5))
    rep = an.compute_constants(mesh4, spec, n_starts=3, n_pairs=20)
    assert rep.c_h > 0 and not rep.alpha_exact
    assert rep.M1_h == pytest.approx(an.primal_bound(rep.M, 3.0, rep.c0_h, rep.f_norm, rep.c_h))
    assert rep.lambda_bound_h == pytest.approx(
        (rep.c0_h * rep.f_norm + rep.L_K1_h * rep.M1_h + rep.c_h) / rep.alpha_h
    )


def test_bounds_zero_load(mesh8):
    spec = ProblemSpec(theta=1.0, g=1.0)
    state, _ = uzawa_solve(mesh8, spec)
    rep = an.compute_constants(mesh8, spec, n_starts=2, n_pairs=5)
    check = an.verify_bounds(mesh8, spec, state, rep)
    assert check.x_norm == 0 and check.passed
    assert check.primal_margin == math.inf


def test_bounds_manufactured_r2(mesh8):
    spec = ProblemSpec(r=2.0, f_coeffs=(1.0, 0.0))
    state, _ = uzawa_solve(mesh8, spec)
    rep = an.compute_constants(mesh8, spec, n_starts=2, n_pairs=5)
    check = an.verify_bounds(mesh8, spec, state, rep)
    assert check.x_norm == pytest.approx(1.0)
    assert rep.M1_h == pytest.approx(2.0 * rep.c0_h * f_dual_norm(mesh8, spec))
    assert check.primal_ok and check.passed


def test_failed_bound_is_a_result(mesh4):
    spec = ProblemSpec(r=2.0, f_coeffs=(1.0, 0.0))
    rep = an.compute_constants(mesh4, spec, n_starts=2, n_pairs=5)
    huge = DiscreteState(u=1e3 * mesh4.nodes[:, 0], lam=np.zeros(4))
    check = an.verify_bounds(mesh4, spec, huge, rep)
    assert not check.primal_ok and not check.passed


# --- convergence study ---------------------------------------------------------


def test_schedule_contract():
    base = ProblemSpec(theta=0.5, g=1.0, f_coeffs=(1.0, 0.0))
    good = an.one_over_n(base, (1.0, 0.0), 1.0, 1.0)
    an.check_schedule(base, good, [1, 2, 3])
    with pytest.raises(an.ScheduleError, match="at least 3"):
        an.check_schedule(base, good, [1, 2])
    with pytest.raises(an.ScheduleError, match="converge"):
        an.check_schedule(base, lambda n: base.replace(theta=0.0), [1, 2, 3])
    with pytest.raises(an.ScheduleError, match="increases"):
        an.check_schedule(base, lambda n: base.replace(g=1.0 + 1e-12 * n), [1, 2, 3])
    with pytest.raises(an.ScheduleError, match="only perturb"):
        an.check_schedule(base, lambda n: base.replace(r=2.0 + 1 / n), [1, 2, 3])


def test_identity_schedule_gives_zero_gaps(mesh8):
    base = ProblemSpec(theta=0.3, g=1.0, f_coeffs=(1.0, 0.5))
    table = an.convergence_study(mesh8, base, lambda n: base, 3)
    assert [r.n for r in table.rows] == [1, 2, 3]
    for row in table.rows:
        assert row.x_gap < 1e-9
        assert max(row.weak_gaps) < 1e-9


def test_study_rejects_vanishing_theta(mesh4):
    base = ProblemSpec(theta=0.3, f_coeffs=(1.0, 0.0))
    with pytest.raises(an.ScheduleError):
        an.convergence_study(mesh4, base, lambda n: base.replace(theta=0.0), [1, 2, 4])


def test_study_trend_and_probes(mesh8):
    base = ProblemSpec(theta=0.3, g=1.0, f_coeffs=(1.0, 0.5))
    table = an.convergence_study(mesh8, base, an.one_over_n(base, (0.1, 0.1), 0.1, 0.1), [1, 2, 4, 8])
    assert table.all_converged
    x = [r.x_gap for r in table.rows]
    assert all(b < a for a, b in zip(x, x[1:]))
    assert all(len(r.weak_gaps) == 5 for r in table.rows)
    last, quarter = table.rows[-1], table.rows[1]
    assert all(a <= b for a, b in zip(last.weak_gaps, quarter.weak_gaps))


def test_probes_are_fixed_cosines(mesh8):
    p = an.weak_probes(mesh8)
    assert p.shape == (5, mesh8.n_nodes)
    assert np.array_equal(p, an.weak_probes(mesh8))
    bottom = mesh8.tag_nodes("G3")
    assert np.allclose(p[0, bottom[1:]], 1.0)
    assert not p[:, mesh8.dirichlet_nodes].any()


def test_thread_count_does_not_change_table(mesh4, monkeypatch):
    base = ProblemSpec(theta=0.3, g=1.0, f_coeffs=(1.0, 0.5))
    sched = an.one_over_n(base, (0.2, 0.0), 0.2, 0.0)
    monkeypatch.setenv("MIXEDVI_THREADS", "1")
    serial = an.convergence_study(mesh4, base, sched, 4)
    monkeypatch.setenv("MIXEDVI_THREADS", "3")
    assert an.thread_count() == 3
    parallel = an.convergence_study(mesh4, base, sched, 4)
    assert [r.x_gap for r in serial.rows] == [r.x_gap for r in parallel.rows]


def test_thread_count_parsing(monkeypatch):
    monkeypatch.setenv("MIXEDVI_THREADS", "junk")
    assert an.thread_count() == 1
    monkeypatch.setenv("MIXEDVI_THREADS", "0")
    assert an.thread_count() == 1


# --- optimization ----------------------------------------------------------------


def test_golden_section_brackets_shrink_by_phi():
    calls = []

    def f(x):
        calls.append(x)
        return (x - 0.3) ** 2

    brackets = an.golden_section(f, 0.0, 1.0, budget=30)
    assert len(calls) <= 30
    widths = [b - a for a, b in brackets]
    ratios = [b / a for a, b in zip(widths, widths[1:])]
    assert np.allclose(ratios, an.PHI, atol=1e-9)
    lo, hi = brackets[-1]
    assert lo <= 0.3 <= hi


def test_golden_section_self_target(mesh8):
    base = ProblemSpec(theta=0.3, g=0.0, f_coeffs=(1.0, 0.5))
    target, _ = uzawa_solve(mesh8, base.replace(g=0.7))
    res = an.optimize(mesh8, an.GTarget(base, 2.0, target.u))
    assert abs(res.p_star[0] - 0.7) <= 1e-3 * 2.0
    assert res.cost_star <= 1e-6
    assert res.evaluations <= 60
    assert res.cost_star == min(c for _, c in res.trace)


def test_g_target_needs_positive_bound():
    with pytest.raises(ValueError):
        an.GTarget(ProblemSpec(), 0.0, np.zeros(3))


def test_full_data_degenerate_returns_smallest_norm_point(mesh4):
    base = ProblemSpec()
    zero = np.zeros(mesh4.n_nodes)
    res = an.optimize(mesh4, an.FullDataCost(base, 0.0, 0.0, 1.0, zero, np.zeros(4), [(0, 2), (-1, 1), (0, 1), (0, 1)]))
    assert res.p_star == (0.0, 0.0, 0.0, 0.0)
    assert res.cost_star == 0.0


def test_traction_degenerate(mesh4):
    res = an.optimize(mesh4, an.TractionCost(ProblemSpec(), 1.0, 0.5, np.zeros(mesh4.n_nodes), [(-1, 2), (-1, 1)]))
    assert res.p_star == (0.0, 0.0)
    assert res.cost_star == 0.0


def test_nelder_mead_respects_box_and_budget(mesh4):
    base = ProblemSpec(theta=0.2, f_coeffs=(1.0, 0.0))
    target, _ = uzawa_solve(mesh4, base.replace(f_coeffs=(0.6, 0.3)))
    bounds = [(0.5, 2.0), (0.0, 1.0)]
    res = an.optimize(mesh4, an.TractionCost(base, 1.0, 0.0, target.u, bounds), budget=60)
    assert res.evaluations <= 60
    for p, _ in res.trace:
        assert all(lo <= x <= hi for x, (lo, hi) in zip(p, bounds))
    assert res.cost_star == min(c for _, c in res.trace)
    assert res.cost_star < 1e-3


def test_failed_forward_solves_cost_infinity(mesh4):
    base = ProblemSpec(theta=5.0, f_coeffs=(1.0, 0.5))
    target = np.ones(mesh4.n_nodes)
    res = an.optimize(mesh4, an.GTarget(base, 1.0, target), SolverConfig(max_uzawa=1), budget=6)
    assert res.failures == res.evaluations
    assert res.cost_star == math.inf
    assert res.to_json()["cost_star"] is None


def test_cost_continuity_along_parameter_sequence(mesh8):
    base = ProblemSpec(theta=0.3, f_coeffs=(1.0, 0.5))
    target, _ = uzawa_solve(mesh8, base.replace(g=0.4))
    cost = an.GTarget(base, 1.0, target.u)
    model = an.ForwardModel(mesh8, base, cost.to_spec, cost.cost, SolverConfig())
    limit = model((0.5,))
    diffs = [abs(model((0.5 + 0.2 / n,)) - limit) for n in (1, 2, 4, 8, 16)]
    assert all(b < a for a, b in zip(diffs[-3:], diffs[-2:]))
    assert diffs[-1] < 0.1 * diffs[0]


def test_box_validation():
    with pytest.raises(ValueError):
        an.TractionCost(ProblemSpec(), 1.0, 0.0, np.zeros(2), [(1.0, 0.0), (0, 1)])
    with pytest.raises(ValueError):
        an.FullDataCost(ProblemSpec(), 1, 0, 0, np.zeros(2), np.zeros(1), [(0, 1), (0, 1), (-1, 1), (0, 1)])
