import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pardyn.benchmarks import BENCHMARK_IDS, benchmark_spec, build
from pardyn.errors import ConfigurationError, DomainError
from pardyn.problem import (
    Monomial,
    check_parameters,
    evaluate_coefficients,
    make_field,
    problem_from_config,
    sample_parameters,
)


def test_monomial_evaluates_scaled_product():
    m = Monomial(2.0, ((0, 1), (2, 2), (0, 1)))
    assert m.powers == ((0, 2), (2, 2))
    xi = np.array([[1.5, 9.0, 2.0], [3.0, 0.0, 0.5]])
    np.testing.assert_allclose(m(xi), 2.0 * xi[:, 0] ** 2 * xi[:, 2] ** 2)
    assert (m * Monomial(3.0, ((1, 1),)))(xi[0]) == pytest.approx(6.0 * 1.5 ** 2 * 9.0 * 4.0)


def test_non_affine_coefficient_kind_is_rejected():
    with pytest.raises(ConfigurationError, match="affine"):
        Monomial.from_config({"kind": "exp", "scale": 1.0})


@pytest.mark.parametrize("bid", BENCHMARK_IDS)
def test_config_round_trip(bid):
    p, _ = build(bid)
    cfg = json.loads(json.dumps(p.to_config()))
    q = problem_from_config(cfg)
    assert q == p
    xi = sample_parameters(p, 3, 0)
    a, b = evaluate_coefficients(p, xi), evaluate_coefficients(q, xi)
    for name in ("kC", "kA", "kH", "p", "lam"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.parametrize("bid,counts", [
    ("burgers", (0, 1, 1)),
    ("heat2d", (11, 1, 0)),
    ("allen-cahn", (0, 2, 1)),
    ("reaction-diffusion", (2, 2, 0)),
])
def test_benchmark_affine_counts(bid, counts):
    p, _ = build(bid)
    assert p.n_affine[:3] == counts


def test_benchmark_settings():
    s = benchmark_spec("reaction-diffusion")
    assert (s.h, s.tau, s.n_train, s.n_test) == (pytest.approx(0.02), 1e-3, 11, 1000)
    s = benchmark_spec("heat2d")
    assert (s.h, s.tau, s.n_train) == (pytest.approx(np.pi / 50), 1e-4, 12)
    assert len(s.box) == 11
    s = benchmark_spec("burgers")
    assert (s.h, s.tau, s.n_train, s.T) == (pytest.approx(0.01), 1e-4, 12, 2.0)
    s = benchmark_spec("allen-cahn")
    assert (s.h, s.tau, s.n_train, s.box) == (pytest.approx(0.05), 1e-4, 8, ((0.1, 0.2),))
    assert benchmark_spec("burgers", n_test=7).n_test == 7
    with pytest.raises(ConfigurationError):
        benchmark_spec("wave")
    with pytest.raises(ConfigurationError):
        benchmark_spec("burgers", tier="huge")


def test_reaction_diffusion_lift_reproduces_boundary_data():
    p, _ = build("reaction-diffusion")
    xi = np.array([1.2, 2.0, 1.7, 2.6])
    co = evaluate_coefficients(p, xi)
    x = np.array([[0.0], [0.5], [1.0]])
    lift = sum(c * t.field(x) for c, t in zip(co.lam, p.lift_terms))
    np.testing.assert_allclose(lift, 2 * (x[:, 0] + 1) * xi[3])


def test_parameter_checks():
    p, _ = build("burgers")
    with pytest.raises(DomainError):
        check_parameters(p, [0.5, 2.0])
    with pytest.raises(ConfigurationError):
        check_parameters(p, [1.5, 2.0, 1.0])
    with pytest.raises(DomainError):
        check_parameters(p, [np.nan, 2.0])
    check_parameters(p, [3.0, 1.0])  # closed box


def test_nonlinear_problem_rejects_lifting():
    p, _ = build("burgers")
    cfg = p.to_config()
    cfg["lift_terms"] = [{"name": "l", "coef": 1.0, "field": {"kind": "constant", "value": 1.0}}]
    with pytest.raises(ConfigurationError):
        problem_from_config(cfg)


def test_missing_key_is_a_configuration_error():
    with pytest.raises(ConfigurationError, match="missing"):
        problem_from_config({"T": 1.0})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
def test_sampling_is_reproducible_and_inside_box(seed, count):
    p, _ = build("heat2d")
    a = sample_parameters(p, count, seed)
    np.testing.assert_array_equal(a, sample_parameters(p, count, seed))
    assert a.shape == (count, 11)
    assert np.all((a >= 1.0) & (a <= 4.0))


def test_sampling_prefix_stable():
    p, _ = build("burgers")
    np.testing.assert_array_equal(sample_parameters(p, 10, 3)[:4], sample_parameters(p, 4, 3))


def test_field_sum_and_scaling():
    f = make_field("sine", 2.0, freq=3.0, axis=0) + make_field("constant", value=1.0).scaled(0.5)
    x = np.array([[0.1], [0.7]])
    np.testing.assert_allclose(f(x), 2 * np.sin(3 * x[:, 0]) + 0.5)
