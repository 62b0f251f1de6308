import numpy as np
import pytest

from pardyn.benchmarks import build
from pardyn.discretization import Mesh, assemble
from pardyn.fom import TimeGrid
from pardyn.problem import sample_parameters

# coarse versions of the four benchmarks: (elements, tau, T, n_train)
SMALL = {
    "reaction-diffusion": (12, 1e-2, 0.5, 6),
    "heat2d": (8, 1e-2, 0.2, 6),
    "burgers": (20, 2e-3, 0.2, 6),
    "allen-cahn": (6, 2e-3, 0.1, 5),
}


class Setup:
    def __init__(self, bid, **kw):
        el, tau, T, n_train = SMALL[bid]
        el, tau, T, n_train = kw.get("elements", el), kw.get("tau", tau), kw.get("T", T), kw.get("n_train", n_train)
        self.problem, self.spec = build(bid, "ci", elements=el, tau=tau, T=T, n_train=n_train)
        self.ops = assemble(self.problem, Mesh.for_problem(self.problem, el))
        self.grid = TimeGrid(tau, T)
        self.training = sample_parameters(self.problem, n_train, self.spec.train_seed)

    def test_set(self, m, seed=2):
        return sample_parameters(self.problem, m, seed)


_CACHE = {}


def small(bid, **kw):
    key = (bid, tuple(sorted(kw.items())))
    if key not in _CACHE:
        _CACHE[key] = Setup(bid, **kw)
    return _CACHE[key]


@pytest.fixture(params=list(SMALL))
def any_setup(request):
    return small(request.param)


@pytest.fixture
def rd():
    return small("reaction-diffusion")


@pytest.fixture
def heat():
    return small("heat2d")


@pytest.fixture
def burgers():
    return small("burgers")


@pytest.fixture
def allen_cahn():
    return small("allen-cahn")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=int):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
