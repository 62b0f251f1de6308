"""Structural invariants of the building blocks (mostly property-based)."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pardyn.benchmarks import BENCHMARK_IDS, build
from pardyn.discretization import Mesh, apply_nonlinear, assemble
from pardyn.estimator import comparison_bound, greedy_indicator, log_lipschitz
from pardyn.fom import TimeGrid, solve, solve_linear, solve_semi_implicit
from pardyn.offline import OfflineConfig, run_offline, zeta_step
from pardyn.online import evaluate_error_metric
from pardyn.problem import evaluate_coefficients, evaluate_initial_field, problem_from_config, sample_parameters
from pardyn.vs import run_vs

from conftest import small

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = st.lists(finite, min_size=9, max_size=9).map(np.array)


# --------------------------------------------------------------------------
# problem
# --------------------------------------------------------------------------
@pytest.mark.parametrize("bid", BENCHMARK_IDS)
def test_coefficients_equal_direct_evaluation(bid):
    p, _ = build(bid)
    xis = sample_parameters(p, 100, 11)
    co = evaluate_coefficients(p, xis)
    for i, xi in enumerate(xis):
        assert np.array_equal(co.kC[i], [t.coef(xi) for t in p.constant_terms])
        assert np.array_equal(co.kA[i], [t.coef(xi) for t in p.linear_terms])
        assert np.array_equal(co.kH[i], [t.coef(xi) for t in p.nonlinear_terms])
        assert np.array_equal(co.p[i], [t.coef(xi) for t in p.initial_terms])


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(-10, 10, allow_nan=False), xi=st.floats(1.0, 3.0))
def test_initial_field_is_linear_in_p_coefficients(lam, xi):
    p, _ = build("burgers")
    cfg = p.to_config()
    for t in cfg["initial_terms"]:
        t["coef"]["scale"] *= lam
    q = problem_from_config(cfg)
    x = np.linspace(0, 1, 17)[:, None]
    base = evaluate_initial_field(p, [2.0, xi])(x)
    np.testing.assert_allclose(evaluate_initial_field(q, [2.0, xi])(x), lam * base, rtol=1e-14, atol=1e-15)


# --------------------------------------------------------------------------
# discretization
# --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def space2d():
    p, _ = build("heat2d")
    return assemble(p, Mesh.for_problem(p, 4)).space   # 3 x 3 = 9 interior nodes


@settings(max_examples=50, deadline=None)
@given(a=vectors, b=vectors, c=vectors, s=finite)
def test_mass_inner_product_axioms(space2d, a, b, c, s):
    V = space2d
    scale = 1 + np.abs(a).sum() * (np.abs(b).sum() + np.abs(c).sum()) + abs(s) * np.abs(a).sum() * np.abs(b).sum()
    assert V.inner(a, b) == pytest.approx(V.inner(b, a), abs=1e-12 * scale)
    assert V.inner(s * a + c, b) == pytest.approx(s * V.inner(a, b) + V.inner(c, b), abs=1e-12 * scale)
    if np.any(a != 0):
        assert V.inner(a, a) > 0


@pytest.mark.parametrize("bid", ["reaction-diffusion", "heat2d"])
def test_laplacian_interior_rows_annihilate_constants(bid):
    p, _ = build(bid)
    mesh = Mesh.for_problem(p, 6)
    V = assemble(p, mesh).space
    K = V.operator("laplace", interior=False)
    r = K @ np.ones(mesh.n_nodes)
    np.testing.assert_allclose(r[mesh.interior], 0.0, atol=1e-12 * abs(K).max())


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_convection_product_rule_gives_boundary_flux(data):
    p, _ = build("burgers")
    mesh = Mesh.for_problem(p, 12)
    V = assemble(p, mesh).space
    n = mesh.n_nodes
    a = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    # sum over all test functions = integral against 1 (partition of unity)
    total = np.sum(apply_nonlinear(V, "convection", a, b) + apply_nonlinear(V, "convection", b, a))
    assert total == pytest.approx(a[-1] * b[-1] - a[0] * b[0], abs=1e-10 * (1 + np.abs(a).max() * np.abs(b).max()))
    a[[0, -1]] = 0.0
    total = np.sum(apply_nonlinear(V, "convection", a, b) + apply_nonlinear(V, "convection", b, a))
    assert total == pytest.approx(0.0, abs=1e-10 * (1 + np.abs(a).max() * np.abs(b).max()))


# --------------------------------------------------------------------------
# full-order solver
# --------------------------------------------------------------------------
def test_halving_tau_converges_first_order(heat):
    xi = heat.test_set(1, seed=3)[0]
    finals = [solve(heat.ops, xi, TimeGrid(tau, 0.2)).values[-1] for tau in (0.02, 0.01, 0.005, 0.0025)]
    d = [heat.ops.space.norm(finals[i] - finals[i + 1]) for i in range(3)]
    orders = np.log2(np.array(d[:-1]) / np.array(d[1:]))
    assert np.all(orders >= 0.9), orders


def test_zero_nonlinear_coefficients_reproduce_linear_solve():
    p, _ = build("burgers")
    cfg = p.to_config()
    for t in cfg["nonlinear_terms"]:
        t["coef"]["scale"] = 0.0
    zeroed = problem_from_config(cfg)
    cfg["nonlinear_terms"] = []
    linear = problem_from_config(cfg)
    grid = TimeGrid(2e-3, 0.1)
    xi = [1.7, 2.3]
    a = solve_semi_implicit(assemble(zeroed, Mesh.for_problem(zeroed, 20)), xi, grid).values
    b = solve_linear(assemble(linear, Mesh.for_problem(linear, 20)), xi, grid).values
    assert np.array_equal(a, b)


# --------------------------------------------------------------------------
# offline / online
# --------------------------------------------------------------------------
@pytest.mark.parametrize("scheme", ["product-rule", "exact-difference"])
def test_stored_scalars_match_mesh_level_projection(heat, scheme):
    """The new term's coefficient annihilates the projected residual at every node.

    The residual is assembled on the mesh with each term's time derivative
    discretized by the chosen scheme.
    """
    model = run_offline(heat.ops, heat.grid, heat.training, OfflineConfig(n_max=3, zeta_scheme=scheme))
    V, tau = heat.ops.space, heat.grid.tau

    def derivative(z, g):
        if scheme == "exact-difference":
            return (z[1:, None] * g[1:] - z[:-1, None] * g[:-1]) / tau
        return ((z[1:] - z[:-1])[:, None] * g[1:] + z[1:, None] * (g[1:] - g[:-1])) / tau

    for s in range(len(heat.training)):
        co = evaluate_coefficients(heat.problem, heat.training[s])
        Z = model.training_zetas[s]
        for k in range(1, model.n_terms + 1):
            G = [t.g for t in model.terms[:k]]
            U = sum(Z[j][:, None] * G[j] for j in range(k))
            R = -(V.M @ sum(derivative(Z[j], G[j]) for j in range(k)).T).T + co.kC @ heat.ops.C
            for kA, A in zip(co.kA, heat.ops.A):
                R += kA * (A @ U[1:].T).T
            g, z = G[-1][1:], Z[k - 1][1:]
            proj = np.einsum("ni,ni->n", R, g)
            scale = np.einsum("ni,ni->n", np.abs(V.M @ g.T).T, np.abs(g)) / tau * (1 + np.abs(z))
            assert np.all(np.abs(proj) <= 1e-12 * scale + 1e-300)


@settings(max_examples=20, deadline=None)
@given(kA=st.floats(-5, 5), kC=st.floats(-5, 5), z=st.floats(-3, 3), factor=st.floats(0.1, 10))
def test_recursion_source_is_linear_in_constant_coefficients(kA, kC, z, factor):
    from test_kernels import _scalar_record
    from pardyn.problem import AffineCoefficients

    rec = _scalar_record(3, 1.0, 1.0, 1.0)

    def step(c):
        co = AffineCoefficients(np.array([c]), np.array([kA]), np.zeros(0), np.zeros(0), np.zeros(0))
        return zeta_step(rec, co, [], [], 0.0, 0, 0.1), zeta_step(rec, co, [], [], z, 0, 0.1)

    s1, full1 = step(kC)
    s2, full2 = step(factor * kC)
    assert s2 == pytest.approx(factor * s1, rel=1e-13, abs=1e-300)
    # the homogeneous part does not depend on the sources
    assert full2 - s2 == pytest.approx(full1 - s1, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("bid", BENCHMARK_IDS)
def test_error_decreases_weakly_over_terms(bid):
    s = small(bid)
    model = run_offline(s.ops, s.grid, s.training, OfflineConfig(n_max=5, zeta_scheme="exact-difference"))
    eps = evaluate_error_metric(model, s.test_set(20, seed=41)).mean
    assert np.all(np.diff(eps) <= 1e-3 * eps[:-1]), eps


def test_vs_and_dvs_share_first_field(heat):
    dvs = run_offline(heat.ops, heat.grid, heat.training, OfflineConfig(n_max=1))
    vs = run_vs(heat.ops, heat.grid, heat.training, n_max=1)
    assert np.array_equal(dvs.terms[0].g, vs.terms[0].g)


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------
@settings(max_examples=50, deadline=None)
@given(alpha=st.lists(st.floats(0, 10), min_size=3, max_size=20), beta=st.floats(-5, 5), lam=st.floats(1, 100))
def test_bound_is_linear_in_residual_norms(alpha, beta, lam):
    a = np.array(alpha)
    b = np.full(a.size, beta)
    np.testing.assert_allclose(comparison_bound(lam * a, b, 0.0, 0.01), lam * comparison_bound(a, b, 0.0, 0.01),
                               rtol=1e-13, atol=1e-300)


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.floats(0, 1e6), min_size=1, max_size=30), c=st.floats(1e-6, 1e6))
def test_argmax_is_invariant_under_positive_rescaling(values, c):
    v = np.array(values)
    cand = range(v.size)
    assert greedy_indicator(v, cand)[0] == greedy_indicator(c * v, cand)[0] or np.isclose(
        v[greedy_indicator(v, cand)[0]], v[greedy_indicator(c * v, cand)[0]], rtol=1e-12)


@pytest.mark.parametrize("bid", ["reaction-diffusion", "heat2d"])
def test_linear_log_lipschitz_ignores_reference_state(bid, rng):
    s = small(bid)
    xi = s.test_set(1, seed=5)[0]
    base = log_lipschitz(s.ops, xi)
    for _ in range(3):
        assert log_lipschitz(s.ops, xi, rng.normal(size=s.ops.n)) == base
