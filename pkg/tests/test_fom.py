import numpy as np
import pytest

from pardyn.discretization import Mesh, assemble
from pardyn.errors import ConfigurationError, DivergenceError
from pardyn.fom import TimeGrid, solve
from pardyn.problem import problem_from_config

from conftest import small


def _heat1d(kappa_box=(0.5, 2.0)):
    return problem_from_config({
        "name": "heat1d", "domain": {"lo": [0.0], "hi": [1.0]}, "T": 0.1,
        "parameter_box": [list(kappa_box)],
        "linear_terms": [{"name": "d", "coef": {"scale": 1.0, "powers": [[0, 1]]}, "operator": "laplace"}],
        "initial_terms": [{"name": "s", "coef": 1.0, "field": {"kind": "sine", "freq": float(np.pi)}}],
    })


@pytest.mark.parametrize("kappa", [0.5, 1.3, 2.0])
def test_linear_solver_matches_discrete_eigen_decay(kappa):
    # nodal sin(pi x) is an eigenvector of the uniform P1 stiffness and mass matrices
    p = _heat1d()
    E = 16
    h = 1.0 / E
    ops = assemble(p, Mesh.for_problem(p, E))
    grid = TimeGrid(0.01, 0.1)
    tr = solve(ops, [kappa], grid)
    lam = (2.0 / h) * (1 - np.cos(np.pi * h)) / ((h / 3.0) * (2 + np.cos(np.pi * h)))
    r = 1.0 / (1.0 + grid.tau * kappa * lam)
    ref = r ** np.arange(grid.n_steps + 1)[:, None] * tr.values[0][None, :]
    np.testing.assert_allclose(tr.values, ref, rtol=1e-12, atol=1e-14)


def test_lifted_solution_satisfies_full_mesh_equation(rd):
    # physical field u = w + lift solves the equation on the full mesh at interior rows
    ops, grid = rd.ops, rd.grid
    xi = rd.training[2]
    tr = solve(ops, xi, grid)
    V = ops.space
    U = np.array([tr.full(ops, n) for n in range(grid.n_steps + 1)])
    x = ops.mesh.nodes[:, 0]
    np.testing.assert_allclose(U[:, 0], 2 * (x[0] + 1) * xi[3])
    np.testing.assert_allclose(U[:, -1], 2 * (x[-1] + 1) * xi[3])
    load = V.load(rd.problem.source_terms[0].field, interior=False) * xi[2]
    for n in range(grid.n_steps):
        r = V.M_full @ (U[n + 1] - U[n]) / grid.tau + xi[0] * (V.M_full @ U[n + 1]) \
            + 2 * xi[1] * (V.K_full @ U[n + 1]) - load
        assert np.abs(r[V.interior]).max() < 1e-9 * max(1.0, np.abs(load).max())


@pytest.mark.parametrize("bid", ["burgers", "allen-cahn"])
def test_semi_implicit_step_equation(bid):
    from pardyn.problem import evaluate_coefficients

    s = small(bid)
    xi = s.training[1]
    co = evaluate_coefficients(s.problem, xi)
    tr = solve(s.ops, xi, s.grid)
    V = s.ops.space
    kind = s.ops.h_kinds[0]
    nl = 1 if kind == "convection" else 2
    for n in (0, 5, s.grid.n_steps - 1):
        u, v = tr.values[n], tr.values[n + 1]
        r = V.M @ (v - u) / s.grid.tau - sum(k * (A @ v) for k, A in zip(co.kA, s.ops.A)) \
            - co.kH[0] * V.form(kind, *((u,) * nl), v)
        assert np.abs(r).max() < 1e-10 * np.abs(V.M @ v / s.grid.tau).max()


def test_fom_is_deterministic(burgers):
    a = solve(burgers.ops, burgers.training[0], burgers.grid).values
    b = solve(burgers.ops, burgers.training[0], burgers.grid).values
    np.testing.assert_array_equal(a, b)


def test_divergence_is_reported():
    p = problem_from_config({
        "name": "blowup", "domain": {"lo": [0.0], "hi": [1.0]}, "T": 1.0, "parameter_box": [[1.0, 2.0]],
        # growth rate 50 with tau = 0.01: amplification 2 per step
        "linear_terms": [{"name": "g", "coef": {"scale": 50.0, "powers": [[0, 1]]}, "operator": "mass"}],
        "initial_terms": [{"name": "b", "coef": 1.0, "field": {"kind": "bubble"}}],
    })
    ops = assemble(p, Mesh.for_problem(p, 10))
    with pytest.raises(DivergenceError) as err:
        solve(ops, [1.0], TimeGrid(0.01, 1.0))
    assert err.value.step is not None


def test_time_grid_validation():
    with pytest.raises(ConfigurationError):
        TimeGrid(0.3, 1.0)
    with pytest.raises(ConfigurationError):
        TimeGrid(-1e-3, 1.0)
    g = TimeGrid(1e-4, 2.0)
    assert g.n_steps == 20000 and g.node(1.0) == 10000
    with pytest.raises(ConfigurationError):
        g.node(0.00005)
