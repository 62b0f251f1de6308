"""Static-coefficient variable-separation baseline

    u_N(x, t; xi) = sum_k zeta_k(xi) g_k(x, t),

for linear problems.  The spatial fields solve the same error equation as
in the dynamic method, but each parametric coefficient is a single number
obtained from the projected error equation at one time node.  Among
``n_t`` randomly drawn candidate nodes, the one giving the smallest mean
error on a few validation samples is kept.
"""
from __future__ import annotations

import time

import numpy as np

from .discretization import AffineOperators
from .errors import ConfigurationError
from .fom import TimeGrid
from .offline import (
    GreedyStep,
    ReducedModel,
    SeparatedTerm,
    Zeta0,
    ops_norm_l2t,
    projection_record,
    solve_spatial_basis,
)
from .problem import AffineCoefficients, evaluate_coefficients


def vs_zeta(record, co: AffineCoefficients, zprev: np.ndarray, m: int, tau: float) -> np.ndarray:
    """zeta_k(xi) from the projected relation at node m+1, for a batch.

    ``zprev`` (B, k-1) holds the static coefficients of the previous terms.
    Returns ``nan`` where the bilinear-form value vanishes.
    """
    k = record.k
    kA = np.atleast_2d(co.kA)
    B = kA.shape[0]
    kC = co.kC.reshape(B, -1)
    zprev = np.asarray(zprev, dtype=float).reshape(B, k - 1)
    den = np.full(B, (record.g_cross[m, k - 1] - record.g_cross_lag[m, k - 1]) / tau)
    for i in range(record.a_proj.shape[1]):
        den = den - kA[:, i] * record.a_proj[m, i, k - 1]
    num = np.zeros(B)
    for i in range(record.c_proj.shape[1]):
        num = num + kC[:, i] * record.c_proj[m, i]
    for j in range(k - 1):
        w = np.full(B, -(record.g_cross[m, j] - record.g_cross_lag[m, j]) / tau)
        for i in range(record.a_proj.shape[1]):
            w = w + kA[:, i] * record.a_proj[m, i, j]
        num = num + zprev[:, j] * w
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out[~(np.abs(den) > 0)] = np.nan
    return out


def vs_rows(terms: list, co: AffineCoefficients, tau: float, n_terms: int | None = None) -> np.ndarray:
    """Static coefficients for a batch: shape (B, N)."""
    N = len(terms) if n_terms is None else n_terms
    B = np.atleast_2d(co.kA).shape[0]
    Z = np.empty((B, N))
    for k in range(N):
        Z[:, k] = vs_zeta(terms[k].record, co, Z[:, :k], terms[k].vs_step, tau)
    return Z


def run_vs(ops: AffineOperators, grid: TimeGrid, training: np.ndarray, n_max: int = 10, n_t: int = 8,
           n_validation: int = 4, seed: int = 0, reference=None, progress=None) -> ReducedModel:
    """Greedy construction with true-error selection over the training set."""
    from .estimator import ReferenceSet

    if not ops.problem.is_linear:
        raise ConfigurationError("the static-coefficient baseline is defined for linear problems only")
    if n_t < 1 or n_validation < 1:
        raise ConfigurationError("n_t and n_validation must be positive")
    training = np.atleast_2d(np.asarray(training, dtype=float))
    S = training.shape[0]
    if S == 0:
        raise ConfigurationError("training set is empty")
    nt = grid.n_steps
    co_all = evaluate_coefficients(ops.problem, training)
    ref = reference if reference is not None else ReferenceSet.compute(ops, grid, training)
    err = [np.array(ref.values(s), dtype=float, copy=True) for s in range(S)]
    val = list(range(min(n_validation, S)))
    rng = np.random.Generator(np.random.Philox(seed))
    n_max = min(n_max, S)
    Z = np.zeros((S, n_max))
    G, terms = [], []
    first = GreedyStep(1, 0, ref.norm(0), np.full(S, np.nan))
    trace = [first]
    remaining = list(range(1, S))
    anchor = 0
    model = ReducedModel(ops.problem, ops.mesh, grid, terms, trace, "vs",
                         {"n_t": n_t, "n_validation": len(val), "seed": seed}, training)
    k = 0
    while True:
        t0 = time.perf_counter()
        co = evaluate_coefficients(ops.problem, training[anchor])
        g0 = ops.initial_state(co)
        for j in range(k):
            g0 = g0 - Z[anchor, j] * G[j][0]
        Zc = np.repeat(Z[anchor, :k, None], nt + 1, axis=1)
        g = solve_spatial_basis(ops, co, G, Zc, g0, grid)
        rec = projection_record(ops, G + [g])
        cand = tuple(int(m) for m in np.sort(rng.choice(nt, size=min(n_t, nt), replace=False)))
        best, best_val = None, np.inf
        for m in cand:
            zv = vs_zeta(rec, _subset(co_all, val), Z[val, :k], m, grid.tau)
            if not np.all(np.isfinite(zv)):
                continue  # vanishing bilinear form at this node
            d = np.mean([ops_norm_l2t(ops, err[s] - zv[i] * g, grid.tau) for i, s in enumerate(val)])
            if d < best_val:
                best, best_val = m, d
        if best is None:
            raise ConfigurationError(f"no usable time sample for term {k + 1}")
        nrm = ops_norm_l2t(ops, g, grid.tau)
        term = SeparatedTerm(training[anchor].copy(), g, rec, Zeta0(np.zeros(0), np.zeros(0)), nrm, best, cand)
        G.append(g)
        terms.append(term)
        Z[:, k] = vs_zeta(rec, co_all, Z[:, :k], best, grid.tau)
        for s in range(S):
            err[s] -= Z[s, k] * g
        trace[-1].elapsed += time.perf_counter() - t0
        k += 1
        if progress:
            progress(k, trace[-1])
        if not remaining:
            break
        t0 = time.perf_counter()
        deltas = np.full(S, np.nan)
        rel = np.full(S, np.nan)
        for s in remaining:
            deltas[s] = ops_norm_l2t(ops, err[s], grid.tau)
            rel[s] = deltas[s] / ref.norm(s) if ref.norm(s) > 0 else np.inf
        vals = deltas[remaining]
        nxt = remaining[int(np.argmax(vals))]
        step = GreedyStep(k + 1, nxt, float(np.max(vals)), deltas, rel, time.perf_counter() - t0)
        trace.append(step)
        if k >= n_max:
            step.anchor_index = -1
            break
        anchor = nxt
        remaining.remove(nxt)
    model.training_zetas = np.repeat(Z[:, :k, None], nt + 1, axis=2)
    return model


def _subset(co: AffineCoefficients, idx) -> AffineCoefficients:
    return AffineCoefficients(*(np.atleast_2d(a)[idx] for a in (co.kC, co.kA, co.kH, co.p, co.lam)))
