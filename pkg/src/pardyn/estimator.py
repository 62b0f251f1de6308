"""Error indicators for the greedy stage.

Two indicators are available:

* true error ``||u - u_{k-1}||_{L2(0,T;L2)}`` against full-order reference
  trajectories (:class:`ReferenceSet`);
* a residual bound from the comparison lemma: with ``alpha(t)`` the dual
  norm of the residual and ``beta(t)`` the logarithmic Lipschitz constant
  of the right-hand side along the approximation,

      ||e(t)|| <= int_0^t alpha(s) exp(int_s^t beta) ds + exp(int_0^t beta) ||e(0)||.

On the time grid the bound is advanced as
``delta_n = exp(tau * beta_{n-1}) delta_{n-1} + tau * alpha_n`` (left
rectangle for beta, residuals defined by backward differences at n >= 1).
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import AffineOperators
from .errors import EstimatorError
from .fom import TimeGrid, solve
from .offline import _lag_count, combine, residual_trajectory
from .problem import evaluate_coefficients

N_SAMPLED_DIRECTIONS = 16


# --------------------------------------------------------------------------
# reference trajectories and true error
# --------------------------------------------------------------------------
def physical_node_norms_sq(ops: AffineOperators, W: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Squared L2 norms of ``w + sum_j lam_j l_j`` at every node (full mesh)."""
    nn = ops.space.node_norms_sq(W)
    if lam.size and ops.lift.size:
        cross = W @ (lam @ ops.lift_cross)
        nn = nn + 2.0 * cross + float(lam @ ops.lift_gram @ lam)
    return nn


def trapezoid(values: np.ndarray, tau: float) -> float:
    return float(tau * (values.sum() - 0.5 * (values[0] + values[-1])))


class ReferenceSet:
    """Full-order trajectories for a list of parameters.

    Trajectories are kept in memory or, when ``spill_dir`` is given, in
    memory-mapped ``.npy`` files so large 2D runs do not exhaust RAM.
    """

    def __init__(self, ops, grid, xis, values, norms_hom, norms, node_norms, elapsed):
        self.ops = ops
        self.grid = grid
        self.xis = np.atleast_2d(xis)
        self._values = values
        self.norms_hom = np.asarray(norms_hom)
        self.norms = np.asarray(norms)
        self.node_norms = node_norms  # (S, N_t + 1) physical, squared
        self.elapsed = np.asarray(elapsed)

    def __len__(self):
        return len(self._values)

    def values(self, s: int) -> np.ndarray:
        return self._values[s]

    def norm(self, s: int) -> float:
        """Physical ``||u||_{L2(0,T;L2)}``."""
        return float(self.norms[s])

    @classmethod
    def compute(cls, ops: AffineOperators, grid: TimeGrid, xis, spill_dir=None, jobs: int = 1) -> "ReferenceSet":
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        if jobs and jobs > 1 and len(xis) > 1:
            from joblib import Parallel, delayed

            trajs = Parallel(n_jobs=jobs)(delayed(solve)(ops, xi, grid) for xi in xis)
        else:
            trajs = [solve(ops, xi, grid) for xi in xis]
        values, nh, nphys, nodes, el = [], [], [], [], []
        for s, tr in enumerate(trajs):
            v = tr.values
            if spill_dir is not None:
                os.makedirs(spill_dir, exist_ok=True)
                fd, path = tempfile.mkstemp(suffix=".npy", dir=spill_dir)
                os.close(fd)
                mm = np.lib.format.open_memmap(path, mode="w+", dtype=float, shape=v.shape)
                mm[:] = v
                mm.flush()
                v = np.load(path, mmap_mode="r")
            values.append(v)
            nn_h = ops.space.node_norms_sq(tr.values)
            nn = physical_node_norms_sq(ops, tr.values, tr.lam)
            nh.append(np.sqrt(max(trapezoid(nn_h, grid.tau), 0.0)))
            nphys.append(np.sqrt(max(trapezoid(nn, grid.tau), 0.0)))
            nodes.append(nn)
            el.append(tr.elapsed)
            del tr
        return cls(ops, grid, xis, values, nh, nphys, np.array(nodes), el)


def node_errors_sq(ops: AffineOperators, W: np.ndarray, Z: np.ndarray, G: list) -> np.ndarray:
    """Squared nodal errors of ``sum_j Z_j G_j`` against the trajectory ``W``."""
    E = np.array(W, dtype=float, copy=True)
    for j, g in enumerate(G):
        E -= Z[j][:, None] * g
    return ops.space.node_norms_sq(E)


def true_error(ops: AffineOperators, W: np.ndarray, Z: np.ndarray, G: list, tau: float) -> float:
    """``||u - u_N||_{L2(0,T;L2)}`` for one parameter."""
    return float(np.sqrt(max(trapezoid(node_errors_sq(ops, W, Z, G), tau), 0.0)))


# --------------------------------------------------------------------------
# logarithmic Lipschitz constant
# --------------------------------------------------------------------------
def top_generalized_eigenvalue(S: sp.spmatrix, M: sp.spmatrix, dim: int, tol: float = 1e-13,
                               maxiter: int = 10_000, seed: int = 0, return_vector: bool = False):
    """Largest ``lambda`` with ``S v = lambda M v`` (S symmetric, M SPD).

    Shift-invert power iteration.  The shift is an upper bound obtained from
    Gershgorin discs of the lumped pencil ``(S, D)``, ``D = diag(M 1)``, and
    the spectral equivalence ``M <= D <= 3^dim M`` of P1/Q1 mass matrices,
    so the iteration converges to the top of the spectrum.
    """
    S = sp.csr_matrix(S)
    M = sp.csr_matrix(M)
    d = np.asarray(M.sum(axis=1)).ravel()
    diag = S.diagonal()
    off = np.asarray(abs(S).sum(axis=1)).ravel() - np.abs(diag)
    g = float(np.max((diag + off) / d))
    ub = g * 3.0 ** dim if g > 0 else g
    sigma = ub + 1e-3 * max(1.0, abs(ub))
    lu = spla.splu((S - sigma * M).tocsc())
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.random(S.shape[0]) + 0.5
    rho_old = np.inf
    for it in range(maxiter):
        w = lu.solve(M @ v)
        nrm = np.sqrt(w @ (M @ w))
        if not nrm > 0:
            raise EstimatorError("power iteration collapsed to zero")
        v = w / nrm
        rho = float(v @ (S @ v))  # v is M-normalized
        if abs(rho - rho_old) <= tol * max(abs(rho), 1e-300):
            return (rho, v) if return_vector else rho
        rho_old = rho
    raise EstimatorError(f"eigenvalue iteration did not converge in {maxiter} iterations")


def _rhs_operator(ops, co):
    """Sparse sum of the linear terms at given coefficients."""
    V = ops.space
    data = np.zeros_like(V.mass_data)
    for k, a in zip(co.kA, ops.A_data):
        data = data + k * a
    return data


def full_rhs(ops: AffineOperators, co, u: np.ndarray) -> np.ndarray:
    """``F(u) = sum kA A u + sum kC C + sum kH h(u, .., u)`` (dual vector)."""
    V = ops.space
    r = V.matrix(_rhs_operator(ops, co)) @ u
    for k, c in zip(co.kC, ops.C):
        r = r + k * c
    for k, kind in zip(co.kH, ops.h_kinds):
        r = r + k * V.form(kind, *((u,) * (_lag_count(kind) + 1)))
    return r


def log_lipschitz(ops: AffineOperators, xi, u_ref: np.ndarray | None = None, mode: str = "auto",
                  seed: int = 0) -> float:
    """One-sided Lipschitz constant of the discrete right-hand side in the L2 norm.

    Linear problems: top eigenvalue of the M-symmetrized operator.  Nonlinear
    problems: the same for the Jacobian at ``u_ref`` ("eigen-bound"),
    optionally maximized with a sampled supremum over random finite
    perturbations ("sampled-sup", the default for nonlinear problems).
    """
    co = evaluate_coefficients(ops.problem, xi)
    V = ops.space
    data = _rhs_operator(ops, co)
    nonlinear = any(k != 0 for k in co.kH)
    if nonlinear:
        if u_ref is None:
            raise EstimatorError("a reference state is required for nonlinear problems")
        for k, kind in zip(co.kH, ops.h_kinds):
            data = data + k * V.jacobian_data(kind, u_ref)
    J = V.matrix(data)
    S = 0.5 * (J + J.T)
    lam, v = top_generalized_eigenvalue(S, V.M, V.mesh.dim, return_vector=True, seed=seed)
    if mode == "auto":
        mode = "sampled-sup" if nonlinear else "eigen-bound"
    if mode == "eigen-bound" or not nonlinear:
        return lam
    if mode != "sampled-sup":
        raise EstimatorError(f"unknown lipschitz mode {mode!r}")
    rng = np.random.Generator(np.random.Philox(seed + 1))
    base = full_rhs(ops, co, u_ref)
    scale = max(V.norm(u_ref), 1e-12)
    best = lam
    smooth = V.mass_data + V.stiff_data
    for r in np.logspace(-3, 0, N_SAMPLED_DIRECTIONS):
        # smoothed random direction plus a random multiple of the top mode
        d = V.banded.solve(smooth, V.M @ rng.standard_normal(V.n), symmetric=True) + v * rng.standard_normal()
        d = d / V.norm(d) * r * scale
        q = float(d @ (full_rhs(ops, co, u_ref + d) - base)) / V.inner(d, d)
        best = max(best, q)
    return best


# --------------------------------------------------------------------------
# residual bound
# --------------------------------------------------------------------------
@dataclass
class ErrorBound:
    delta: np.ndarray   # bound at every node
    alpha: np.ndarray   # residual dual norms (alpha[0] unused)
    beta: np.ndarray    # log-Lipschitz values per node
    Delta: float        # sqrt(int delta^2)
    mode: str


def comparison_bound(alpha: np.ndarray, beta: np.ndarray, e0: float, tau: float) -> np.ndarray:
    """Discrete comparison-lemma bound; values that overflow become ``inf``."""
    n = alpha.size
    delta = np.empty(n)
    delta[0] = e0
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.exp(tau * beta)
        for i in range(1, n):
            delta[i] = growth[i - 1] * delta[i - 1] + tau * alpha[i]
    delta[~np.isfinite(delta)] = np.inf
    return delta


def residual_bound(ops: AffineOperators, grid: TimeGrid, G: list, Z: np.ndarray, xi, mode: str = "auto",
                   beta_stride: int = 0) -> ErrorBound:
    """Bound for the approximation ``sum_j Z_j G_j`` at one parameter."""
    co = evaluate_coefficients(ops.problem, xi)
    V = ops.space
    nt = grid.n_steps
    U = combine(Z, G) if G else np.zeros((nt + 1, V.n))
    R = residual_trajectory(ops, co, U, grid.tau)
    alpha = np.zeros(nt + 1)
    alpha[1:] = np.sqrt(np.maximum(V.dual_norms_sq(R), 0.0))
    e0 = V.norm(ops.initial_state(co) - U[0])
    if ops.problem.is_linear:
        beta = np.full(nt + 1, log_lipschitz(ops, xi, mode=mode))
        used = "eigen-bound"
    else:
        stride = beta_stride if beta_stride > 0 else max(1, nt // 50)
        beta = np.empty(nt + 1)
        for s in range(0, nt + 1, stride):
            beta[s:s + stride] = log_lipschitz(ops, xi, U[s], mode=mode)
        used = "sampled-sup" if mode == "auto" else mode
    delta = comparison_bound(alpha, beta, e0, grid.tau)
    Delta = float(np.sqrt(max(trapezoid(delta ** 2, grid.tau), 0.0))) if np.all(np.isfinite(delta)) else np.inf
    return ErrorBound(delta, alpha, beta, Delta, used)


class ResidualGram:
    """Mesh-free residual dual norms for linear problems.

    At node n the residual of ``sum_j zeta_j g_j`` is a combination of fixed
    dual vectors: the sources ``C_i``, and per term ``A_i g_{j,n}``,
    ``M g_{j,n}`` and ``M g_{j,n-1}``, with weights ``kC_i``,
    ``kA_i zeta_{j,n}``, ``-zeta_{j,n} / tau`` and ``zeta_{j,n-1} / tau``.
    The Gram matrix of their Riesz representatives is built once per term,
    after which ``alpha_n^2`` is a quadratic form in the weights.

    The quadratic form loses relative accuracy once ``alpha`` falls below
    about ``1e-8`` of the component sizes; negative round-off is clipped.
    """

    def __init__(self, ops: AffineOperators, grid: TimeGrid):
        if not ops.problem.is_linear:
            raise EstimatorError("the Gram residual path needs a linear problem")
        self.ops = ops
        self.grid = grid
        self.G: list = []
        V = ops.space
        nC = ops.C.shape[0]
        self.n_a = len(ops.A)
        nt = grid.n_steps
        gc = ops.C @ V.mass_solve(np.ascontiguousarray(ops.C.T)) if nC else np.zeros((0, 0))
        self.gram = np.broadcast_to(gc, (nt, nC, nC)).copy()
        self._beta: dict = {}

    @property
    def n_terms(self) -> int:
        return len(self.G)

    def _duals(self, g: np.ndarray) -> list:
        """Dual vectors (N_t, n) of one term's components, in weight order."""
        V = self.ops.space
        out = [(A @ g[1:].T).T for A in self.ops.A]
        out.append((V.M @ g[1:].T).T)
        out.append((V.M @ g[:-1].T).T)
        return out

    def add_term(self, g: np.ndarray) -> None:
        V = self.ops.space
        nt = self.grid.n_steps
        new = self._duals(g)
        riesz = [V.mass_solve(np.ascontiguousarray(d.T)).T for d in new[: self.n_a]] + [g[1:], g[:-1]]
        old = [np.broadcast_to(c, (nt, c.size)) for c in self.ops.C]
        for h in self.G:
            old.extend(self._duals(h))
        P0, q = len(old), len(new)
        gram = np.zeros((nt, P0 + q, P0 + q))
        gram[:, :P0, :P0] = self.gram
        for a, r in enumerate(riesz):
            for b, d in enumerate(old):
                v = np.einsum("ni,ni->n", r, d)
                gram[:, P0 + a, b] = v
                gram[:, b, P0 + a] = v
            for b, d in enumerate(new):
                gram[:, P0 + a, P0 + b] = np.einsum("ni,ni->n", r, d)
        # symmetrize the new block against round-off
        blk = gram[:, P0:, P0:]
        gram[:, P0:, P0:] = 0.5 * (blk + blk.transpose(0, 2, 1))
        self.gram = gram
        self.G.append(g)

    def weights(self, co, Z: np.ndarray) -> np.ndarray:
        """(B, N_t, P) component weights for coefficient rows ``Z`` (B, k, N_t+1)."""
        tau = self.grid.tau
        kC = np.atleast_2d(co.kC)
        kA = np.atleast_2d(co.kA)
        B = kA.shape[0]
        Z = np.asarray(Z).reshape(B, -1, self.grid.n_steps + 1)
        nt = self.grid.n_steps
        cols = [np.broadcast_to(kC[:, i, None], (B, nt)) for i in range(kC.shape[1])]
        for j in range(self.n_terms):
            zn, zl = Z[:, j, 1:], Z[:, j, :-1]
            cols.extend(kA[:, i, None] * zn for i in range(self.n_a))
            cols.append(-zn / tau)
            cols.append(zl / tau)
        return np.stack(cols, axis=-1)

    def beta(self, xi, mode: str = "auto") -> float:
        """Log-Lipschitz constant at ``xi`` (state independent here), cached."""
        key = (tuple(np.asarray(xi, float).ravel()), mode)
        if key not in self._beta:
            self._beta[key] = log_lipschitz(self.ops, xi, mode=mode)
        return self._beta[key]

    def alpha(self, co, Z: np.ndarray) -> np.ndarray:
        """(B, N_t + 1) residual dual norms; column 0 is unused and zero."""
        w = self.weights(co, Z)
        a2 = np.einsum("bnp,npq,bnq->bn", w, self.gram, w)
        out = np.zeros((w.shape[0], self.grid.n_steps + 1))
        out[:, 1:] = np.sqrt(np.maximum(a2, 0.0))
        return out


def bound_from_alpha(ops: AffineOperators, grid: TimeGrid, G: list, Z: np.ndarray, xi, alpha: np.ndarray,
                     beta: float) -> ErrorBound:
    """Comparison bound for a linear problem given residual norms and beta."""
    co = evaluate_coefficients(ops.problem, xi)
    V = ops.space
    u0 = sum(Z[j, 0] * G[j][0] for j in range(len(G))) if G else 0.0
    e0 = V.norm(ops.initial_state(co) - u0)
    beta = np.full(grid.n_steps + 1, beta)
    delta = comparison_bound(alpha, beta, e0, grid.tau)
    Delta = float(np.sqrt(max(trapezoid(delta ** 2, grid.tau), 0.0))) if np.all(np.isfinite(delta)) else np.inf
    return ErrorBound(delta, alpha, beta, Delta, "eigen-bound")


def estimator_indicator(ops, grid, terms, G, xis, Zs, config, gram: ResidualGram | None = None) -> np.ndarray:
    """Residual-bound indicator for each parameter in ``xis`` (rows of ``Zs``).

    With ``gram`` (linear problems) residual norms come from the Gram
    quadratic form instead of mesh-level residuals.
    """
    out = np.empty(len(xis))
    if gram is not None:
        A = gram.alpha(evaluate_coefficients(ops.problem, xis), Zs)
        for s, xi in enumerate(xis):
            out[s] = bound_from_alpha(ops, grid, G, Zs[s], xi, A[s], gram.beta(xi, config.lipschitz_mode)).Delta
        return out
    for s, xi in enumerate(xis):
        out[s] = residual_bound(ops, grid, G, Zs[s], xi, config.lipschitz_mode, config.beta_stride).Delta
    return out


def greedy_indicator(values: np.ndarray, candidates) -> tuple[int, float]:
    """Argmax over candidate indices; ties resolve to the lowest index."""
    candidates = list(candidates)
    vals = np.asarray(values)[candidates]
    i = int(np.argmax(vals))
    return candidates[i], float(vals[i])
