"""Online stage: parametric coefficients from stored scalars, reconstruction
and error metrics.

:func:`online_zetas` touches only the projection records and the affine
coefficient functions, never a spatial field, so its cost does not depend
on the mesh.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StateError
from .estimator import ReferenceSet, physical_node_norms_sq, trapezoid
from .offline import ReducedModel, zeta_rows
from .problem import check_parameters, evaluate_coefficients


@dataclass
class OnlineEvaluation:
    xi: np.ndarray        # (B, d) parameters
    zetas: np.ndarray     # (B, N, N_t + 1)
    elapsed: float        # wall clock of the whole batch

    @property
    def per_sample(self) -> float:
        return self.elapsed / max(len(self.xi), 1)

    def __len__(self):
        return len(self.xi)


def online_zetas(model: ReducedModel, xi, n_terms: int | None = None) -> OnlineEvaluation:
    """Coefficient trajectories for one parameter or a batch (rows of ``xi``)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    check_parameters(model.problem, xi)
    N = model.n_terms if n_terms is None else n_terms
    if not 0 <= N <= model.n_terms:
        raise ConfigurationError(f"model has {model.n_terms} terms, {N} requested")
    t0 = time.perf_counter()
    co = evaluate_coefficients(model.problem, xi)
    if model.method == "vs":
        from .vs import vs_rows

        Zs = vs_rows(model.terms, co, model.grid.tau, N)
        Z = np.repeat(Zs[:, :, None], model.grid.n_steps + 1, axis=2)
    else:
        Z = zeta_rows(model.terms, co, model.grid.tau, N, scheme=model.scheme)
    return OnlineEvaluation(xi, Z, time.perf_counter() - t0)


def reconstruct(model: ReducedModel, zetas: np.ndarray, n: int, physical: bool = False,
                xi=None) -> np.ndarray:
    """``sum_k zeta_k(t_n) g_k(t_n)`` for one parameter (``zetas`` is (N, N_t+1)).

    With ``physical=True`` the Dirichlet lifting at ``xi`` is added and a
    full-mesh nodal vector is returned.
    """
    if not model.has_fields:
        raise StateError("model has no spatial fields (stripped); reconstruction is unavailable")
    nt = model.grid.n_steps
    if not 0 <= n <= nt:
        raise IndexError(f"time index {n} outside 0..{nt}")
    zetas = np.atleast_2d(zetas)
    u = np.zeros(model.terms[0].g.shape[1]) if model.terms else None
    for k in range(zetas.shape[0]):
        u = u + zetas[k, n] * model.terms[k].g[n]
    if not physical:
        return u
    if xi is None:
        raise ConfigurationError("physical reconstruction needs the parameter")
    from .discretization import assemble

    ops = assemble(model.problem, model.mesh)
    lam = evaluate_coefficients(model.problem, np.asarray(xi, float)).lam
    return ops.full_field(u, lam)


def reconstruct_trajectory(model: ReducedModel, zetas: np.ndarray) -> np.ndarray:
    """All nodes at once: (N_t + 1, n) interior values (memory heavy)."""
    if not model.has_fields:
        raise StateError("model has no spatial fields (stripped); reconstruction is unavailable")
    zetas = np.atleast_2d(zetas)
    U = np.zeros_like(model.terms[0].g)
    for k in range(zetas.shape[0]):
        U += zetas[k][:, None] * model.terms[k].g
    return U


# --------------------------------------------------------------------------
# error metric
# --------------------------------------------------------------------------
@dataclass
class ErrorReport:
    """Relative errors of the reduced solution for a set of test parameters.

    ``errors[s, i]`` is the ``L2(0,T;L2)`` relative error of sample ``s``
    with ``n_list[i]`` terms; ``curves[i]`` is the mean over samples of the
    relative error at each time node; ``fixed[i, s, j]`` is the relative
    error at ``fixed_nodes[j]``.
    """

    xis: np.ndarray
    n_list: tuple
    errors: np.ndarray
    curves: np.ndarray
    fixed_nodes: tuple = ()
    fixed: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    online_time: float = 0.0   # total over the batch
    fom_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    excluded: tuple = ()

    @property
    def mean(self) -> np.ndarray:
        return np.nanmean(self.errors, axis=0)

    @property
    def max(self) -> np.ndarray:
        return np.nanmax(self.errors, axis=0)

    def fixed_mean(self) -> np.ndarray:
        """(len(n_list), len(fixed_nodes)) mean relative errors at the fixed nodes."""
        return np.nanmean(self.fixed, axis=1)


def sample_errors(ops, W: np.ndarray, lam: np.ndarray, G: list, Z: np.ndarray, n_list, tau: float,
                  fixed_nodes=()) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Errors of one sample for every truncation in ``n_list``.

    ``W`` is the reference interior trajectory, ``Z`` the (N, N_t+1)
    coefficient rows.  Returns (relative L2(0,T) errors, per-node relative
    errors, fixed-node relative errors, reference norm).
    """
    ref_nodes = physical_node_norms_sq(ops, W, lam)
    ref_norm = np.sqrt(max(trapezoid(ref_nodes, tau), 0.0))
    E = np.array(W, dtype=float, copy=True)
    done = 0
    rel = np.empty(len(n_list))
    curves = np.empty((len(n_list), W.shape[0]))
    fixed = np.empty((len(n_list), len(fixed_nodes)))
    safe = np.where(ref_nodes > 0, ref_nodes, np.inf)
    for i, N in enumerate(n_list):
        for j in range(done, N):
            E -= Z[j][:, None] * G[j]
        done = max(done, N)
        nn = ops.space.node_norms_sq(E)
        rel[i] = np.sqrt(max(trapezoid(nn, tau), 0.0)) / ref_norm if ref_norm > 0 else np.nan
        curves[i] = np.sqrt(nn / safe)
        fixed[i] = curves[i][list(fixed_nodes)]
    return rel, curves, fixed, ref_norm


def evaluate_error_metric(model: ReducedModel, xis, reference: ReferenceSet | None = None, n_list=None,
                          fixed_times=(), ops=None, jobs: int = 1) -> ErrorReport:
    """Average relative error of the reduced model on a test set.

    Reference trajectories are taken from ``reference`` when given,
    otherwise computed one at a time and discarded (streaming), so memory
    stays bounded by one trajectory per worker.
    """
    return evaluate_models([model], xis, reference, [n_list], fixed_times, ops, jobs)[0]


def evaluate_models(models: list, xis, reference: ReferenceSet | None = None, n_lists=None, fixed_times=(),
                    ops=None, jobs: int = 1) -> list[ErrorReport]:
    """Error reports of several models (same problem, mesh and grid) sharing one FOM solve per sample."""
    from .discretization import assemble

    if not models:
        return []
    base = models[0]
    for m in models:
        if not m.has_fields:
            raise StateError("error evaluation needs the spatial fields")
        if m.grid != base.grid or m.mesh != base.mesh:
            raise ConfigurationError("models must share the mesh and the time grid")
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    if len(xis) == 0:
        raise ConfigurationError("test set is empty")
    n_lists = [None] * len(models) if n_lists is None else list(n_lists)
    lists = []
    for m, nl in zip(models, n_lists):
        nl = tuple(range(1, m.n_terms + 1)) if nl is None else tuple(sorted({int(n) for n in nl}))
        if any(not 0 <= n <= m.n_terms for n in nl):
            raise ConfigurationError(f"requested term counts {nl} exceed the model's {m.n_terms} terms")
        lists.append(nl)
    ops = ops if ops is not None else assemble(base.problem, base.mesh)
    grid = base.grid
    fixed_nodes = tuple(grid.node(t) for t in fixed_times)
    evs = [online_zetas(m, xis, max(nl, default=0)) for m, nl in zip(models, lists)]
    S = len(xis)
    chunks = np.array_split(np.arange(S), max(1, min(int(jobs or 1), S)))
    args = [(ops, models, lists, [ev.zetas[c] for ev in evs], xis[c], c, reference, fixed_nodes) for c in chunks]
    if len(chunks) > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=len(chunks))(delayed(_error_chunk)(*a) for a in args)
    else:
        parts = [_error_chunk(*a) for a in args]
    fom_times = np.concatenate([p[0] for p in parts])
    reports = []
    for i, (m, nl, ev) in enumerate(zip(models, lists, evs)):
        errors = np.concatenate([p[1][i][0] for p in parts])
        fixed = np.concatenate([p[1][i][2] for p in parts], axis=1)
        curve_sum = sum(p[1][i][1] for p in parts)
        excluded = tuple(int(s) for s in np.flatnonzero(np.isnan(errors).all(axis=1))) if nl else ()
        curves = curve_sum / max(S - len(excluded), 1)
        reports.append(ErrorReport(xis, nl, errors, curves, fixed_nodes, fixed, ev.elapsed, fom_times, excluded))
    if reports and reports[0].excluded:
        warnings.warn(f"{len(reports[0].excluded)} samples with zero reference norm were excluded", RuntimeWarning)
    return reports


def _error_chunk(ops, models, lists, zetas, xis, idx, reference, fixed_nodes):
    from .fom import solve

    grid = models[0].grid
    n = len(xis)
    fom_times = np.zeros(n)
    out = [[np.full((n, len(nl)), np.nan), np.zeros((len(nl), grid.n_steps + 1)),
            np.full((len(nl), n, len(fixed_nodes)), np.nan)] for nl in lists]
    Gs = [[t.g for t in m.terms] for m in models]
    for a, s in enumerate(idx):
        if reference is not None:
            W, fom_times[a] = reference.values(s), reference.elapsed[s]
            lam = evaluate_coefficients(models[0].problem, xis[a]).lam
        else:
            tr = solve(ops, xis[a], grid)
            W, lam, fom_times[a] = tr.values, tr.lam, tr.elapsed
        for i, nl in enumerate(lists):
            rel, curves, fx, ref_norm = sample_errors(ops, W, lam, Gs[i], zetas[i][a], nl, grid.tau, fixed_nodes)
            if not ref_norm > 0:
                continue
            out[i][0][a] = rel
            out[i][1] += curves
            out[i][2][:, a] = fx
    return fom_times, out
