"""Full-order reference solver: backward Euler in time.

Linear terms are implicit.  Nonlinear terms are semi-implicit: every factor
but the last is frozen at the previous time node, so each step is a single
linear solve, e.g. ``u_n du_{n+1}/dx`` for Burgers and ``u_n^2 u_{n+1}`` for
the cubic Allen-Cahn term.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .discretization import AffineOperators
from .errors import ConfigurationError, DivergenceError
from .problem import evaluate_coefficients

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    T: float

    def __post_init__(self):
        if not (self.tau > 0 and self.T > 0):
            raise ConfigurationError("time step and horizon must be positive")
        n = round(self.T / self.tau)
        if n < 1 or abs(n * self.tau - self.T) > 1e-9 * self.T:
            raise ConfigurationError(f"T={self.T} is not an integer multiple of tau={self.tau}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def node(self, t: float) -> int:
        """Index of the grid node at time ``t`` (must lie on the grid)."""
        n = round(t / self.tau)
        if not 0 <= n <= self.n_steps or abs(n * self.tau - t) > 1e-9 * max(self.T, 1.0):
            raise ConfigurationError(f"time {t} is not a node of the grid")
        return int(n)


@dataclass
class Trajectory:
    """Interior nodal values at every time node, plus lift coefficients."""

    values: np.ndarray  # (N_t + 1, n)
    grid: TimeGrid
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    elapsed: float = 0.0

    def full(self, ops: AffineOperators, n: int) -> np.ndarray:
        return ops.full_field(self.values[n], self.lam)


def _check(u, thr2, step):
    n2 = float(u @ u)
    if not n2 <= thr2:
        raise DivergenceError("solution diverged or became non-finite", step)


def _threshold(u0):
    return (DIVERGENCE_FACTOR * max(float(np.abs(u0).max(initial=0.0)), 1.0)) ** 2 * max(u0.size, 1)


def solve_linear(ops: AffineOperators, xi, grid: TimeGrid, u0=None) -> Trajectory:
    """Backward Euler with a single banded factorization."""
    t0 = time.perf_counter()
    co = evaluate_coefficients(ops.problem, xi)
    if ops.h_kinds and np.any(co.kH != 0):
        raise ConfigurationError("solve_linear called on a problem with active nonlinear terms")
    V = ops.space
    tau = grid.tau
    S = V.mass_data / tau
    for k, a in zip(co.kA, ops.A_data):
        S = S - k * a
    fac = V.banded.factor(S, step=0)
    c = co.kC @ ops.C if ops.C.shape[0] else np.zeros(V.n)
    Mt = V.M / tau
    u = ops.initial_state(co) if u0 is None else np.asarray(u0, dtype=float)
    out = np.empty((grid.n_steps + 1, V.n))
    out[0] = u
    thr = _threshold(u)
    for n in range(grid.n_steps):
        u = V.banded.solve_factored(fac, Mt @ u + c)
        _check(u, thr, n + 1)
        out[n + 1] = u
    return Trajectory(out, grid, co.lam, time.perf_counter() - t0)


def solve_semi_implicit(ops: AffineOperators, xi, grid: TimeGrid, u0=None) -> Trajectory:
    """Semi-implicit Euler: one linear solve per step, step matrix rebuilt each step."""
    co = evaluate_coefficients(ops.problem, xi)
    active = [(k, kind) for k, kind in zip(co.kH, ops.h_kinds) if k != 0]
    if not active:
        return solve_linear(ops, xi, grid, u0)
    t0 = time.perf_counter()
    V = ops.space
    tau = grid.tau
    S = V.mass_data / tau
    for k, a in zip(co.kA, ops.A_data):
        S = S - k * a
    c = co.kC @ ops.C if ops.C.shape[0] else np.zeros(V.n)
    Mt = V.M / tau
    u = ops.initial_state(co) if u0 is None else np.asarray(u0, dtype=float)
    out = np.empty((grid.n_steps + 1, V.n))
    out[0] = u
    thr = _threshold(u)
    # step matrix stays symmetric unless a convection term is active
    sym = all(kind != "convection" for _, kind in active)
    for n in range(grid.n_steps):
        data = S
        for k, kind in active:
            lag = (u,) * (2 if kind == "cubic" else 1)
            data = data - k * V.lagged_data(kind, *lag)
        u = V.banded.solve(data, Mt @ u + c, step=n + 1, symmetric=sym)
        _check(u, thr, n + 1)
        out[n + 1] = u
    return Trajectory(out, grid, co.lam, time.perf_counter() - t0)


def solve(ops: AffineOperators, xi, grid: TimeGrid, u0=None) -> Trajectory:
    if ops.h_kinds:
        return solve_semi_implicit(ops, xi, grid, u0)
    return solve_linear(ops, xi, grid, u0)
