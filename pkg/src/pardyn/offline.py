"""Greedy offline construction of the separated representation

    u_N(x, t; xi) = sum_k zeta_k(t; xi) g_k(x, t).

At step k the spatial field g_k is the discrete solution of the error
equation at the anchor parameter xi_k, driven by the residual of the
current rank-(k-1) approximation.  The parametric coefficient zeta_k then
obeys a scalar recursion whose coefficients are inner products of basis
fields and operator images; these scalars are stored per time node in a
:class:`ProjectionRecord`, after which no mesh access is needed to evaluate
zeta_k for new parameters.

The time derivative of ``zeta_k g_k`` is discretized either by the product
rule with backward differences of each factor (the default) or by the
backward difference of the product; see :func:`zeta_step`.  Nonlinear terms
use the same lagging as the full-order solver: all factors but the last are
taken at the previous node.
"""
from __future__ import annotations

import itertools
import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .discretization import AffineOperators, Mesh
from .errors import ConfigurationError
from .fom import TimeGrid, _check, _threshold
from .problem import AffineCoefficients, ParametricProblem, evaluate_coefficients

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
# zeta_k(0) for a term whose initial field vanishes; it multiplies a zero
# field, so the value only fixes the start of the recursion
DEGENERATE_ZETA0 = 1.0
CHUNK_ELEMENTS = 2_000_000  # batch * time-node budget for online work arrays


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------
@dataclass
class ProjectionRecord:
    """Scalars closing the zeta recursion of one term (index k, 1-based).

    Arrays are indexed by step ``m`` (node m -> m+1) and, where present, by
    basis index j = 0..k-1 (the last entry is the term itself).
    """

    g_cross: np.ndarray      # <g_j(m+1), g_k(m+1)>                 (N_t, k)
    g_cross_lag: np.ndarray  # <g_j(m),   g_k(m+1)>                 (N_t, k)
    a_proj: np.ndarray       # <A_i g_j(m+1), g_k(m+1)>             (N_t, N_A, k)
    c_proj: np.ndarray       # <C_i, g_k(m+1)>                      (N_t, N_C)
    h_proj: list = field(default_factory=list)  # <h(g_a(m), .., g_b(m+1)), g_k(m+1)>  (N_t, k, .., k)

    @property
    def k(self) -> int:
        return self.g_cross.shape[1]

    @property
    def n_steps(self) -> int:
        return self.g_cross.shape[0]

    def arrays(self) -> dict:
        out = {"g_cross": self.g_cross, "g_cross_lag": self.g_cross_lag, "a_proj": self.a_proj, "c_proj": self.c_proj}
        for i, t in enumerate(self.h_proj):
            out[f"h_proj{i}"] = t
        return out

    @classmethod
    def from_arrays(cls, d: dict) -> "ProjectionRecord":
        h = [d[f"h_proj{i}"] for i in range(sum(key.startswith("h_proj") for key in d))]
        return cls(d["g_cross"], d["g_cross_lag"], d["a_proj"], d["c_proj"], h)


@dataclass
class Zeta0:
    """Affine representation of zeta_k at t = 0.

    ``zeta_k0(xi) = constant + sum_i p_weights[i] p_i(xi) + sum_j z_weights[j] zeta_j0(xi)``.
    """

    p_weights: np.ndarray
    z_weights: np.ndarray
    degenerate: bool = False
    constant: float = 0.0

    def arrays(self) -> dict:
        return {"p_weights": self.p_weights, "z_weights": self.z_weights,
                "flags": np.array([float(self.degenerate), self.constant])}


@dataclass
class SeparatedTerm:
    anchor: np.ndarray
    g: np.ndarray | None  # (N_t + 1, n) interior values, None once stripped
    record: ProjectionRecord
    zeta0: Zeta0
    norm: float = 0.0     # L2(0,T; L2) norm of g
    # static-coefficient baseline only: step index whose projected relation
    # defines zeta_k(xi), and the candidate steps that were compared
    vs_step: int = -1
    vs_candidates: tuple = ()


@dataclass
class GreedyStep:
    k: int                # index of the term this selection produced
    anchor_index: int
    delta_max: float
    deltas: np.ndarray    # indicator over the training set (nan = not evaluated)
    relative: np.ndarray | None = None
    elapsed: float = 0.0


@dataclass
class ReducedModel:
    problem: ParametricProblem
    mesh: Mesh
    grid: TimeGrid
    terms: list
    trace: list = field(default_factory=list)
    method: str = "dvs"
    config: dict = field(default_factory=dict)
    training: np.ndarray | None = None
    scheme: str = "product-rule"
    # coefficient rows cached during training, (S, N, N_t+1); not persisted
    training_zetas: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def truncated(self, n: int) -> "ReducedModel":
        if not 0 <= n <= self.n_terms:
            raise ConfigurationError(f"cannot truncate a {self.n_terms}-term model to {n} terms")
        tz = None if self.training_zetas is None else self.training_zetas[:, :n]
        return replace(self, terms=self.terms[:n], training_zetas=tz)

    def stripped(self) -> "ReducedModel":
        """Copy without spatial fields (online coefficient evaluation only)."""
        return replace(self, terms=[replace(t, g=None) for t in self.terms])

    @property
    def has_fields(self) -> bool:
        return all(t.g is not None for t in self.terms)


@dataclass
class OfflineConfig:
    n_max: int = 10
    eps: float = 0.0
    strategy: str = "true-error"   # or "estimator"
    degenerate_tol: float = 1e-10
    lipschitz_mode: str = "auto"
    beta_stride: int = 0           # 0 = automatic
    final_sweep: bool = True
    zeta_scheme: str = "product-rule"  # or "exact-difference"
    alpha_path: str = "auto"           # "direct", "gram" (linear only) or "auto"

    def __post_init__(self):
        _check_scheme(self.zeta_scheme)
        if self.alpha_path not in ("auto", "direct", "gram"):
            raise ConfigurationError(f"unknown alpha path {self.alpha_path!r}")
        if self.n_max < 1:
            raise ConfigurationError("n_max must be at least 1")
        if self.eps < 0:
            raise ConfigurationError("eps must be non-negative")
        if self.strategy not in ("true-error", "estimator"):
            raise ConfigurationError(f"unknown greedy strategy {self.strategy!r}")


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------
def combine(Z: np.ndarray, G: list) -> np.ndarray:
    """``sum_j Z[j, :, None] * G[j]`` for one parameter; zeros if no terms."""
    if not G:
        raise ValueError("combine needs at least one term")
    U = Z[0][:, None] * G[0]
    for j in range(1, len(G)):
        U += Z[j][:, None] * G[j]
    return U


def _lag_count(kind: str) -> int:
    return 2 if kind == "cubic" else 1


def residual_rhs(ops: AffineOperators, co: AffineCoefficients, u_prev: np.ndarray, u_next: np.ndarray, tau: float):
    """Dual residual at one node of a candidate trajectory (backward difference)."""
    V = ops.space
    r = -(V.M @ (u_next - u_prev)) / tau
    for k, A in zip(co.kA, ops.A):
        r = r + k * (A @ u_next)
    for k, c in zip(co.kC, ops.C):
        r = r + k * c
    for k, kind in zip(co.kH, ops.h_kinds):
        r = r + k * V.form(kind, *((u_prev,) * _lag_count(kind)), u_next)
    return r


def residual_trajectory(ops: AffineOperators, co: AffineCoefficients, U: np.ndarray, tau: float) -> np.ndarray:
    """Residual at nodes 1..N_t of a trajectory U (N_t + 1, n); rows are dual vectors."""
    V = ops.space
    Un = U[1:].T
    R = -(V.M @ (Un - U[:-1].T)) / tau
    for k, A in zip(co.kA, ops.A):
        R += k * (A @ Un)
    R = R.T.copy()
    for k, c in zip(co.kC, ops.C):
        R += k * c
    for k, kind in zip(co.kH, ops.h_kinds):
        Ul = U[:-1].T
        R += k * V.form(kind, *((Ul,) * _lag_count(kind)), Un).T
    return R


# --------------------------------------------------------------------------
# spatial basis
# --------------------------------------------------------------------------
def solve_spatial_basis(ops: AffineOperators, co: AffineCoefficients, G: list, Z: np.ndarray,
                        g0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Solve the error equation for the next spatial field at one parameter.

    ``G`` holds the previous fields and ``Z`` (k-1, N_t+1) their coefficient
    rows at this parameter.  The scheme matches the full-order solver, so
    (up to round-off) the result equals ``u_FOM - sum_j Z_j G_j``.
    """
    V = ops.space
    tau = grid.tau
    nt = grid.n_steps
    U = combine(Z, G) if G else np.zeros((nt + 1, V.n))
    R = residual_trajectory(ops, co, U, tau)
    S = V.mass_data / tau
    for k, a in zip(co.kA, ops.A_data):
        S = S - k * a
    Mt = V.M / tau
    e = np.array(g0, dtype=float)
    out = np.empty((nt + 1, V.n))
    out[0] = e
    thr = _threshold(U[0] + e)
    active = [(k, kind) for k, kind in zip(co.kH, ops.h_kinds) if k != 0]
    if not active:
        fac = V.banded.factor(S, step=0)
        for m in range(nt):
            e = V.banded.solve_factored(fac, Mt @ e + R[m])
            _check(e, thr, m + 1)
            out[m + 1] = e
        return out
    sym = all(kind != "convection" for _, kind in active)
    for m in range(nt):
        w = U[m] + e
        data = S
        rhs = Mt @ e + R[m]
        for k, kind in active:
            lag_w = (w,) * _lag_count(kind)
            lag_u = (U[m],) * _lag_count(kind)
            data = data - k * V.lagged_data(kind, *lag_w)
            rhs = rhs + k * (V.form(kind, *lag_w, U[m + 1]) - V.form(kind, *lag_u, U[m + 1]))
        e = V.banded.solve(data, rhs, step=m + 1, symmetric=sym)
        _check(e, thr, m + 1)
        out[m + 1] = e
    return out


def initial_zeta(ops: AffineOperators, G0: list, g0: np.ndarray, scale: float, tol: float) -> tuple[Zeta0, np.ndarray]:
    """Affine weights of zeta_k(0; xi) and the (possibly zeroed) initial field.

    ``G0`` are the initial values of the previous fields.  A field whose
    norm is below ``tol * scale`` is treated as exactly zero; no division is
    performed and zeta_k(0) is set to the constant ``DEGENERATE_ZETA0``.
    The value is arbitrary in exact arithmetic and equals 1 at the anchor.
    """
    V = ops.space
    nq = ops.q.shape[0]
    k1 = len(G0)
    nrm2 = V.inner(g0, g0)
    if not np.sqrt(max(nrm2, 0.0)) > tol * scale:
        return Zeta0(np.zeros(nq), np.zeros(k1), True, DEGENERATE_ZETA0), np.zeros_like(g0)
    Mg = V.M @ g0
    pw = np.array([ops.q[i] @ Mg for i in range(nq)]) / nrm2
    zw = -np.array([G0[j] @ Mg for j in range(k1)]) / nrm2
    return Zeta0(pw.reshape(nq), zw.reshape(k1)), g0


def projection_record(ops: AffineOperators, G: list, chunk: int = 64) -> ProjectionRecord:
    """Scalars of the newest field ``G[-1]`` against all fields (mesh-level work)."""
    V = ops.space
    Gk = G[-1]
    k = len(G)
    nt = Gk.shape[0] - 1
    MGk = (V.M @ Gk[1:].T).T
    g_cross = np.empty((nt, k))
    g_lag = np.empty((nt, k))
    for j in range(k):
        g_cross[:, j] = np.einsum("mi,mi->m", G[j][1:], MGk)
        g_lag[:, j] = np.einsum("mi,mi->m", G[j][:-1], MGk)
    del MGk
    a_proj = np.empty((nt, len(ops.A), k))
    for i, A in enumerate(ops.A):
        AtG = (A.T @ Gk[1:].T).T
        for j in range(k):
            a_proj[:, i, j] = np.einsum("mi,mi->m", G[j][1:], AtG)
    c_proj = Gk[1:] @ ops.C.T if ops.C.shape[0] else np.zeros((nt, 0))
    h_proj = [_nonlinear_tensor(V, kind, G, chunk) for kind in ops.h_kinds]
    return ProjectionRecord(g_cross, g_lag, a_proj, np.ascontiguousarray(c_proj), h_proj)


def _nonlinear_tensor(V, kind: str, G: list, chunk: int) -> np.ndarray:
    """``T[m, a.., b] = <h(g_a(m), .., g_b(m+1)), g_k(m+1)>`` by quadrature."""
    k = len(G)
    nt = G[0].shape[0] - 1
    p = 2 if kind == "convection" else 3
    last_op = V.D[0] if kind == "convection" else V.E
    out = np.empty((nt,) + (k,) * p)
    W = V.W
    for s in range(0, nt, chunk):
        e = min(nt, s + chunk)
        ch = e - s
        lag = np.stack([(V.E @ g[s:e].T).T for g in G], axis=1)           # (ch, k, nq)
        nxt = np.stack([(last_op @ g[s + 1:e + 1].T).T for g in G], axis=2)  # (ch, nq, k)
        X = (W * (V.E @ G[-1][s + 1:e + 1].T).T)[:, None, :]               # test function
        for _ in range(p - 1):
            X = (X[:, :, None, :] * lag[:, None, :, :]).reshape(ch, -1, lag.shape[2])
        out[s:e] = np.matmul(X, nxt).reshape((ch,) + (k,) * p)
    return out


# --------------------------------------------------------------------------
# zeta recursion
# --------------------------------------------------------------------------
ZETA_SCHEMES = ("product-rule", "exact-difference")


def _check_scheme(scheme: str) -> None:
    if scheme not in ZETA_SCHEMES:
        raise ConfigurationError(f"unknown zeta scheme {scheme!r}; known: {', '.join(ZETA_SCHEMES)}")


def zeta_step(record: ProjectionRecord, co: AffineCoefficients, z_prev_n, z_prev_np1, z_self_n: float,
              m: int, tau: float, scheme: str = "product-rule") -> float:
    """One step of the scalar recursion for a single parameter (reference form).

    ``z_prev_n`` / ``z_prev_np1`` hold zeta_j (j < k) at nodes m and m+1.
    The update is ``zeta_{k,m+1} = (c zeta_{k,m} + s) / l``.  With
    ``scheme="product-rule"`` the derivative of ``zeta_k g_k`` is split as
    ``zeta' g + zeta g'`` with both factors at m+1; ``"exact-difference"``
    uses the backward difference of the product itself.
    """
    _check_scheme(scheme)
    k = record.k
    zn = np.append(np.asarray(z_prev_n, float), z_self_n)
    znp = np.asarray(z_prev_np1, float)
    gg = record.g_cross[m, k - 1] / tau
    gl = record.g_cross_lag[m, k - 1] / tau
    if scheme == "product-rule":
        c, l = gg, 2.0 * gg - gl
    else:
        c, l = gl, gg
    for i in range(record.a_proj.shape[1]):
        l = l - co.kA[i] * record.a_proj[m, i, k - 1]
    s = 0.0
    for i in range(record.a_proj.shape[1]):
        for j in range(k - 1):
            s = s + co.kA[i] * znp[j] * record.a_proj[m, i, j]
    for i in range(record.c_proj.shape[1]):
        s = s + co.kC[i] * record.c_proj[m, i]
    for j in range(k - 1):
        if scheme == "product-rule":
            s = s - (znp[j] - zn[j]) / tau * record.g_cross[m, j]
            s = s - znp[j] * (record.g_cross[m, j] - record.g_cross_lag[m, j]) / tau
        else:
            s = s - (znp[j] * record.g_cross[m, j] - zn[j] * record.g_cross_lag[m, j]) / tau
    for h, T in enumerate(record.h_proj):
        p = T.ndim - 1
        for idx in itertools.product(range(k), repeat=p):
            w = co.kH[h] * T[(m,) + idx]
            for a in idx[:-1]:
                w = w * zn[a]
            if idx[-1] == k - 1:
                l = l - w
            else:
                s = s + w * znp[idx[-1]]
    if not abs(l) > SINGULAR_TOL * abs(gg):
        warnings.warn(f"singular zeta recursion at step {m}; holding previous value", RuntimeWarning)
        return float(z_self_n)
    return float((c * z_self_n + s) / l)


def _zeta_row_chunk(rec: ProjectionRecord, kA, kC, kH, prev, z0, tau, scheme):
    """Vectorized recursion for one term over a batch; arrays are (N_t, B)."""
    k = rec.k
    nt = rec.n_steps
    B = z0.shape[0]
    gg = rec.g_cross[:, k - 1] / tau
    gl = rec.g_cross_lag[:, k - 1] / tau
    if scheme == "product-rule":
        c, ldiag = gg, 2.0 * gg - gl
    else:
        c, ldiag = gl, gg
    l0 = np.broadcast_to(ldiag[:, None], (nt, B)).copy()
    for i in range(rec.a_proj.shape[1]):
        l0 = l0 - rec.a_proj[:, i, k - 1][:, None] * kA[None, :, i]
    s0 = np.zeros((nt, B))
    for i in range(rec.a_proj.shape[1]):
        for j in range(k - 1):
            s0 = s0 + (kA[None, :, i] * prev[j, 1:]) * rec.a_proj[:, i, j][:, None]
    for i in range(rec.c_proj.shape[1]):
        s0 = s0 + kC[None, :, i] * rec.c_proj[:, i][:, None]
    for j in range(k - 1):
        if scheme == "product-rule":
            s0 = s0 - (prev[j, 1:] - prev[j, :-1]) / tau * rec.g_cross[:, j][:, None]
            s0 = s0 - prev[j, 1:] * ((rec.g_cross[:, j] - rec.g_cross_lag[:, j]) / tau)[:, None]
        else:
            s0 = s0 - (prev[j, 1:] * rec.g_cross[:, j][:, None] - prev[j, :-1] * rec.g_cross_lag[:, j][:, None]) / tau
    z = np.empty((nt + 1, B))
    z[0] = z0
    n_bad = 0
    if rec.h_proj:
        # nonlinear part: polynomial in the current zeta_k(m), evaluated per sample
        n_bad = _polynomial_recursion(z, np.ascontiguousarray(c), np.abs(gg), l0, s0, np.ascontiguousarray(prev),
                                      *_stack_tensors(rec.h_proj, 2, nt, k), *_stack_tensors(rec.h_proj, 3, nt, k),
                                      np.ascontiguousarray(kH), k)
    else:
        bad = ~(np.abs(l0) > SINGULAR_TOL * np.abs(gg)[:, None])
        if bad.any():
            n_bad = int(bad.sum())
            l0 = np.where(bad, 1.0, l0)
        for m in range(nt):
            z[m + 1] = (c[m] * z[m] + s0[m]) / l0[m]
            if n_bad and bad[m].any():
                z[m + 1] = np.where(bad[m], z[m], z[m + 1])
    if n_bad:
        warnings.warn(f"singular zeta recursion at {n_bad} (step, sample) pairs; held previous values",
                      RuntimeWarning)
    return z


def _stack_tensors(h_proj, order, nt, k):
    """Projected nonlinear tensors of one polynomial order, stacked, with their coefficient columns."""
    if any(T.ndim - 1 not in (2, 3) for T in h_proj):
        raise ConfigurationError("nonlinear terms must be quadratic or cubic")
    cols = [h for h, T in enumerate(h_proj) if T.ndim - 1 == order]
    stacked = np.empty((len(cols), nt) + (k,) * order)
    for i, h in enumerate(cols):
        stacked[i] = h_proj[h]
    return stacked, np.array(cols, dtype=np.int64)


@numba.njit(cache=True)
def _polynomial_recursion(z, c, gg_abs, l0, s0, prev, T2, h2, T3, h3, kH, k):
    """Time loop of the nonlinear recursion, sample by sample (fills ``z[1:]`` in place).

    In each projected tensor the leading indices use the lagged values at step
    m, where index k - 1 stands for zeta_k(m).  A trailing index k - 1 makes the
    entry implicit (it multiplies zeta_k(m + 1)); any other trailing index is
    paired with the known zeta_j(m + 1).  Returns the number of singular
    (step, sample) pairs, whose value is held.
    """
    nt, B = l0.shape
    v = np.empty(k)
    q = np.empty(k)
    n_bad = 0
    for m in range(nt):
        for b in range(B):
            x = z[m, b]
            for j in range(k - 1):
                v[j] = prev[j, m, b]
                q[j] = prev[j, m + 1, b]
            v[k - 1] = x
            l = l0[m, b]
            s = s0[m, b]
            for i in range(h2.size):
                imp = 0.0
                exp = 0.0
                for a in range(k):
                    r = 0.0
                    for j in range(k - 1):
                        r += T2[i, m, a, j] * q[j]
                    exp += v[a] * r
                    imp += v[a] * T2[i, m, a, k - 1]
                l -= kH[b, h2[i]] * imp
                s += kH[b, h2[i]] * exp
            for i in range(h3.size):
                imp = 0.0
                exp = 0.0
                for a in range(k):
                    for a2 in range(k):
                        w = v[a] * v[a2]
                        r = 0.0
                        for j in range(k - 1):
                            r += T3[i, m, a, a2, j] * q[j]
                        exp += w * r
                        imp += w * T3[i, m, a, a2, k - 1]
                l -= kH[b, h3[i]] * imp
                s += kH[b, h3[i]] * exp
            if abs(l) > SINGULAR_TOL * gg_abs[m]:
                z[m + 1, b] = (c[m] * x + s) / l
            else:
                n_bad += 1
                z[m + 1, b] = x
    return n_bad

def initial_values(terms: list, co: AffineCoefficients, n_terms: int | None = None) -> np.ndarray:
    """``zeta_k(0; xi)`` from the affine initial representations: shape (B, N)."""
    N = len(terms) if n_terms is None else n_terms
    p = np.atleast_2d(co.p)
    B = np.atleast_2d(co.kA).shape[0]
    p = p.reshape(B, -1)
    out = np.empty((B, N))
    for k in range(N):
        z0 = terms[k].zeta0
        v = np.full(B, z0.constant)
        for i in range(z0.p_weights.size):
            v = v + z0.p_weights[i] * p[:, i]
        for j in range(z0.z_weights.size):
            v = v + z0.z_weights[j] * out[:, j]
        out[:, k] = v
    return out


def zeta_rows(terms: list, co: AffineCoefficients, tau: float, n_terms: int | None = None,
              scheme: str = "product-rule") -> np.ndarray:
    """Coefficient rows for a batch of parameters: shape (B, N, N_t + 1).

    Works only from stored scalars; the batch is processed in chunks, and
    every operation is elementwise in the batch index so results do not
    depend on batch composition.
    """
    _check_scheme(scheme)
    N = len(terms) if n_terms is None else n_terms
    kA = np.atleast_2d(co.kA)
    B = kA.shape[0]
    kC = co.kC.reshape(B, -1)
    kH = co.kH.reshape(B, -1)
    nt = terms[0].record.n_steps if terms else 0
    out = np.empty((B, N, nt + 1))
    if N == 0:
        return out
    Z0 = initial_values(terms, co, N)
    step = max(1, CHUNK_ELEMENTS // max(nt, 1))
    for s in range(0, B, step):
        e = min(B, s + step)
        prev = np.empty((N, nt + 1, e - s))
        for k in range(N):
            prev[k] = _zeta_row_chunk(terms[k].record, kA[s:e], kC[s:e], kH[s:e], prev[:k], Z0[s:e, k], tau,
                                      scheme)
        out[s:e] = prev.transpose(2, 0, 1)
    return out


# --------------------------------------------------------------------------
# greedy driver
# --------------------------------------------------------------------------
def build_term(ops: AffineOperators, grid: TimeGrid, xi: np.ndarray, G: list, Z_anchor: np.ndarray,
               tol: float) -> tuple[SeparatedTerm, np.ndarray]:
    """Compute g_k at ``xi`` and its projection record."""
    co = evaluate_coefficients(ops.problem, xi)
    mu = ops.initial_state(co)
    G0 = [g[0] for g in G]
    g0 = mu.copy()
    for j, g in enumerate(G0):
        g0 = g0 - Z_anchor[j, 0] * g
    zeta0, g0 = initial_zeta(ops, G0, g0, ops.space.norm(mu) if mu.any() else 0.0, tol)
    g = solve_spatial_basis(ops, co, G, Z_anchor, g0, grid)
    rec = projection_record(ops, G + [g])
    nrm = float(np.sqrt(_trapezoid(rec.g_cross[:, -1], grid.tau, ops.space.inner(g[0], g[0]))))
    return SeparatedTerm(np.array(xi, dtype=float), g, rec, zeta0, nrm), g


def _trapezoid(values_from_1: np.ndarray, tau: float, value0: float) -> float:
    v = np.concatenate([[value0], values_from_1])
    return float(tau * (v.sum() - 0.5 * (v[0] + v[-1])))


def run_offline(ops: AffineOperators, grid: TimeGrid, training: np.ndarray, config: OfflineConfig | None = None,
                reference=None, progress=None) -> ReducedModel:
    """Greedy enrichment over the training set.

    ``reference`` optionally supplies precomputed full-order trajectories for
    the true-error strategy (see :class:`pardyn.estimator.ReferenceSet`).
    """
    from .estimator import ReferenceSet, ResidualGram, estimator_indicator

    config = config or OfflineConfig()
    training = np.atleast_2d(np.asarray(training, dtype=float))
    S = training.shape[0]
    if S == 0:
        raise ConfigurationError("training set is empty")
    co_all = evaluate_coefficients(ops.problem, training)
    nt = grid.n_steps
    if config.strategy == "true-error":
        ref = reference if reference is not None else ReferenceSet.compute(ops, grid, training)
        err = [np.array(ref.values(s), dtype=float, copy=True) for s in range(S)]
    gram = None
    if config.strategy == "estimator":
        use_gram = config.alpha_path == "gram" or (config.alpha_path == "auto" and ops.problem.is_linear)
        if use_gram:
            gram = ResidualGram(ops, grid)
    n_max = min(config.n_max, S)
    Z = np.zeros((S, n_max, nt + 1))
    G, terms, trace = [], [], []
    remaining = list(range(1, S))
    anchor = 0
    first = GreedyStep(1, 0, np.nan, np.full(S, np.nan))
    if config.strategy == "true-error":
        first.delta_max = ref.norm(0)
        first.relative = np.full(S, np.nan)
        first.relative[0] = 1.0
        first.deltas[0] = ref.norm(0)
    trace.append(first)
    model = ReducedModel(ops.problem, ops.mesh, grid, terms, trace, "dvs", {}, training, config.zeta_scheme)
    k = 0
    while True:
        t0 = time.perf_counter()
        term, g = build_term(ops, grid, training[anchor], G, Z[anchor, :k], config.degenerate_tol)
        G.append(g)
        terms.append(term)
        if gram is not None:
            gram.add_term(g)
        Z[:, k] = _new_row(terms, co_all, Z[:, :k], grid.tau, config.zeta_scheme)
        if config.strategy == "true-error":
            for s in range(S):
                err[s] -= Z[s, k][:, None] * g
        trace[-1].elapsed += time.perf_counter() - t0
        k += 1
        if progress:
            progress(k, trace[-1])
        if not remaining or (k >= n_max and not config.final_sweep):
            break
        t0 = time.perf_counter()
        deltas = np.full(S, np.nan)
        rel = np.full(S, np.nan)
        if config.strategy == "true-error":
            for s in remaining:
                deltas[s] = ops_norm_l2t(ops, err[s], grid.tau)
                rel[s] = deltas[s] / ref.norm(s) if ref.norm(s) > 0 else np.inf
        else:
            deltas[remaining] = estimator_indicator(ops, grid, terms, G, training[remaining], Z[remaining, :k],
                                                    config, gram)
            if np.all(np.isinf(deltas[remaining])):
                deltas[remaining] = _true_error_sweep(ops, grid, training, remaining, Z[:, :k], G)
        vals = deltas[remaining]
        best = remaining[int(np.argmax(vals))]  # first maximum = lowest index
        step = GreedyStep(k + 1, best, float(np.max(vals)), deltas,
                          rel if config.strategy == "true-error" else None, time.perf_counter() - t0)
        if k >= n_max:
            step.anchor_index = -1  # final sweep only
            trace.append(step)
            break
        trace.append(step)
        if step.delta_max < config.eps:
            step.anchor_index = -1
            break
        anchor = best
        remaining.remove(best)
    model.training_zetas = Z[:, :k]
    model.config = {"strategy": config.strategy, "eps": config.eps, "n_max": config.n_max,
                    "degenerate_tol": config.degenerate_tol, "lipschitz_mode": config.lipschitz_mode,
                    "zeta_scheme": config.zeta_scheme, "alpha_path": config.alpha_path}
    return model


def _new_row(terms, co_all, Zprev, tau, scheme):
    """Row of the newest term for all training parameters."""
    k = len(terms) - 1
    t = terms[k]
    S = Zprev.shape[0]
    p = co_all.p.reshape(S, -1)
    z0 = np.full(S, t.zeta0.constant)
    for i in range(t.zeta0.p_weights.size):
        z0 = z0 + t.zeta0.p_weights[i] * p[:, i]
    for j in range(t.zeta0.z_weights.size):
        z0 = z0 + t.zeta0.z_weights[j] * Zprev[:, j, 0]
    return zeta_rows_single(t, co_all, Zprev, z0, tau, scheme)


def _true_error_sweep(ops, grid, training, remaining, Z, G) -> np.ndarray:
    """True errors for one greedy step when every estimator value overflowed."""
    from .estimator import true_error
    from .fom import solve

    warnings.warn("estimator is infinite on every candidate; using the true error for this step", RuntimeWarning)
    return np.array([true_error(ops, solve(ops, training[s], grid).values, Z[s], G, grid.tau) for s in remaining])


def zeta_rows_single(term, co, Zprev, z0, tau, scheme="product-rule"):
    """Row of one term given the rows of its predecessors ``Zprev`` (B, k-1, N_t+1)."""
    B = Zprev.shape[0]
    nt = term.record.n_steps
    out = np.empty((B, nt + 1))
    step = max(1, CHUNK_ELEMENTS // max(nt, 1))
    kA = co.kA.reshape(B, -1)
    kC = co.kC.reshape(B, -1)
    kH = co.kH.reshape(B, -1)
    for s in range(0, B, step):
        e = min(B, s + step)
        prev = np.ascontiguousarray(Zprev[s:e].transpose(1, 2, 0))
        out[s:e] = _zeta_row_chunk(term.record, kA[s:e], kC[s:e], kH[s:e], prev, z0[s:e], tau, scheme).T
    return out


def ops_norm_l2t(ops: AffineOperators, E: np.ndarray, tau: float) -> float:
    """``sqrt(int_0^T ||e(t)||^2 dt)`` by the trapezoid rule over interior fields."""
    nn = ops.space.node_norms_sq(E)
    return float(np.sqrt(max(tau * (nn.sum() - 0.5 * (nn[0] + nn[-1])), 0.0)))
