"""Conforming P1 (1D) / Q1 (2D) finite elements on uniform box meshes.

Everything is built from element quadrature: a sparse evaluation operator
``E`` maps nodal values to values at all Gauss points, ``Dx`` does the same
for the x-derivative, and ``W`` holds the physical quadrature weights.  With
three Gauss points per axis every form used here (mass, stiffness,
convection, cubic) is integrated exactly.

Dirichlet conditions are imposed by elimination: reduced-order quantities
live on the interior nodes only.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import ConfigurationError, SingularSystemError
from .problem import ParametricProblem, SpatialField

_G = np.sqrt(15.0) / 10.0
GAUSS_POINTS = np.array([0.5 - _G, 0.5, 0.5 + _G])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class Mesh:
    """Uniform structured mesh; nodes are numbered with x fastest."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    elements: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        el = tuple(int(v) for v in np.atleast_1d(self.elements))
        if not (len(lo) == len(hi) == len(el)) or len(el) not in (1, 2):
            raise ConfigurationError("mesh must be 1D or 2D with matching bounds")
        if any(e < 2 for e in el):
            raise ConfigurationError("mesh needs at least 3 nodes per axis")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError("mesh bounds must satisfy lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "elements", el)

    @classmethod
    def for_problem(cls, problem: ParametricProblem, elements) -> "Mesh":
        el = np.atleast_1d(elements)
        if el.size == 1 and problem.dim > 1:
            el = np.repeat(el, problem.dim)
        return cls(problem.lo, problem.hi, tuple(int(v) for v in el))

    @property
    def dim(self) -> int:
        return len(self.elements)

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.elements)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(e + 1 for e in self.elements)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.elements))

    @cached_property
    def nodes(self) -> np.ndarray:
        axes = [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.shape)]
        if self.dim == 1:
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def connectivity(self) -> np.ndarray:
        if self.dim == 1:
            e = np.arange(self.elements[0])
            return np.column_stack([e, e + 1])
        nx = self.shape[0]
        ix, iy = np.meshgrid(np.arange(self.elements[0]), np.arange(self.elements[1]), indexing="xy")
        base = (ix + nx * iy).ravel()
        return np.column_stack([base, base + 1, base + nx, base + nx + 1])

    @cached_property
    def boundary(self) -> np.ndarray:
        idx = np.indices(self.shape[::-1]).reshape(self.dim, -1)[::-1]  # per-axis node index
        mask = np.zeros(self.n_nodes, dtype=bool)
        for d in range(self.dim):
            mask |= (idx[d] == 0) | (idx[d] == self.shape[d] - 1)
        return mask

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def descriptor(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "elements": list(self.elements)}

    @classmethod
    def from_descriptor(cls, d: dict) -> "Mesh":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["elements"]))

    def refined(self, factor: int = 2) -> "Mesh":
        return Mesh(self.lo, self.hi, tuple(factor * e for e in self.elements))


def _reference_tables(mesh: Mesh):
    """Basis values/derivatives at Gauss points and physical weights."""
    h = mesh.h
    s = GAUSS_POINTS
    phi1 = np.column_stack([1.0 - s, s])  # (3, 2)
    dphi1 = np.tile([-1.0, 1.0], (3, 1))  # reference derivative
    if mesh.dim == 1:
        phi = phi1
        dphi = [dphi1 / h[0]]
        w = GAUSS_WEIGHTS * h[0]
        return phi, dphi, w
    # q = a + 3 b  (a along x),  l = lx + 2 ly
    phi = np.einsum("ai,bj->baji", phi1, phi1).reshape(9, 4)
    dx = np.einsum("ai,bj->baji", dphi1 / h[0], phi1).reshape(9, 4)
    dy = np.einsum("ai,bj->baji", phi1, dphi1 / h[1]).reshape(9, 4)
    w = np.outer(GAUSS_WEIGHTS, GAUSS_WEIGHTS).ravel() * h[0] * h[1]
    return phi, [dx, dy], w


class BandedSystem:
    """Direct LU solves for matrices sharing one sparsity pattern.

    Lexicographic numbering gives a band of half-width ``nx``; LAPACK's
    banded LU then costs O(n * bw^2) per factorization and O(n * bw) per solve.
    """

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, n: int):
        rows = np.repeat(np.arange(n), np.diff(indptr))
        cols = np.asarray(indices)
        bw = int(np.max(np.abs(rows - cols))) if rows.size else 0
        self.n = n
        self.kl = self.ku = bw
        self.shape = (2 * bw + bw + 1, n)
        self._flat = (2 * bw + rows - cols) * n + cols
        upper = rows <= cols
        self._upper = np.flatnonzero(upper)
        self._flat_sym = (bw + rows[upper] - cols[upper]) * n + cols[upper]

    def banded(self, data: np.ndarray) -> np.ndarray:
        ab = np.zeros(self.shape)
        ab.flat[self._flat] = data
        return ab

    def factor(self, data: np.ndarray, step=None):
        lu, piv, info = lapack.dgbtrf(self.banded(data), self.kl, self.ku)
        if info > 0:
            raise SingularSystemError("singular step matrix", step)
        return lu, piv

    def solve_factored(self, fac, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(fac[0], self.kl, self.ku, rhs, fac[1])
        return x

    def solve(self, data: np.ndarray, rhs: np.ndarray, step=None, symmetric=False) -> np.ndarray:
        if symmetric:
            ab = np.zeros((self.ku + 1, self.n))
            ab.flat[self._flat_sym] = data[self._upper]
            _, x, info = lapack.dpbsv(ab, rhs)
            if info == 0:
                return x
            # not positive definite: fall through to the general solver
        _, _, x, info = lapack.dgbsv(self.kl, self.ku, self.banded(data), rhs)
        if info > 0:
            raise SingularSystemError("singular step matrix", step)
        return x


class _Pattern:
    """CSR sparsity pattern plus element scatter map."""

    def __init__(self, conn: np.ndarray, node_map: np.ndarray, n: int):
        nloc = conn.shape[1]
        r = node_map[conn][:, :, None].repeat(nloc, axis=2).reshape(conn.shape[0], -1)
        c = node_map[conn][:, None, :].repeat(nloc, axis=1).reshape(conn.shape[0], -1)
        valid = (r >= 0) & (c >= 0)
        keys = np.where(valid, r * n + c, -1)
        uniq = np.unique(keys[valid])
        self.n = n
        self.valid = valid.ravel()
        self.pos = np.searchsorted(uniq, keys.ravel()[self.valid])
        self.nnz = uniq.size
        rows, cols = np.divmod(uniq, n)
        self.indices = cols.astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int32)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.pos, weights=local.ravel()[self.valid], minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def diagonal_positions(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return np.flatnonzero(rows == self.indices)


class FESpace:
    """Quadrature-based assembly on a mesh (interior and full node sets)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.phi, self.dphi, self.w = _reference_tables(mesh)
        conn = mesh.connectivity
        nel, nloc = conn.shape
        nq = self.phi.shape[0]
        self.nq = nq
        self.n_full = mesh.n_nodes
        self.interior = mesh.interior
        self.n = self.interior.size
        # local element tables (q, i*nloc + j)
        self.t_mass = np.einsum("qi,qj->qij", self.phi, self.phi).reshape(nq, -1)
        self.t_conv = np.einsum("qi,qj->qij", self.phi, self.dphi[0]).reshape(nq, -1)
        t_stiff = sum(np.einsum("qi,qj->qij", d, d) for d in self.dphi).reshape(nq, -1)
        self.W = np.tile(self.w, nel)  # weight of each global quadrature row
        # evaluation operators
        rows = np.arange(nel * nq).reshape(nel, nq)[:, :, None].repeat(nloc, axis=2)
        cols = conn[:, None, :].repeat(nq, axis=1)

        def evaluator(vals):
            data = np.broadcast_to(vals, (nel, nq, nloc))
            return sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(nel * nq, self.n_full))

        self.E_full = evaluator(self.phi)
        self.D_full = [evaluator(d) for d in self.dphi]
        self.E = self.E_full[:, self.interior].tocsr()
        self.D = [d[:, self.interior].tocsr() for d in self.D_full]
        self.ET = self.E.T.tocsr()
        self.ET_full = self.E_full.T.tocsr()
        # patterns
        full_map = np.arange(self.n_full)
        int_map = -np.ones(self.n_full, dtype=np.int64)
        int_map[self.interior] = np.arange(self.n)
        self.pattern_full = _Pattern(conn, full_map, self.n_full)
        self.pattern = _Pattern(conn, int_map, self.n)
        self.banded = BandedSystem(self.pattern.indptr, self.pattern.indices, self.n)
        wl = self.w[None, :]
        self.mass_data = self.pattern.scatter(np.broadcast_to(wl @ self.t_mass, (nel, nloc * nloc)))
        self.stiff_data = self.pattern.scatter(np.broadcast_to(wl @ t_stiff, (nel, nloc * nloc)))
        self.M = self.pattern.matrix(self.mass_data)
        self.K = self.pattern.matrix(self.stiff_data)
        self.M_full = self.pattern_full.matrix(
            self.pattern_full.scatter(np.broadcast_to(wl @ self.t_mass, (nel, nloc * nloc))))
        self.K_full = self.pattern_full.matrix(
            self.pattern_full.scatter(np.broadcast_to(wl @ t_stiff, (nel, nloc * nloc))))
        self._mass_fac = None

    # -- node sets --------------------------------------------------------
    def embed(self, w: np.ndarray) -> np.ndarray:
        """Interior values (..., n) to full nodal vector with zero boundary."""
        w = np.asarray(w)
        out = np.zeros(w.shape[:-1] + (self.n_full,))
        out[..., self.interior] = w
        return out

    def interpolate(self, f: SpatialField) -> np.ndarray:
        return f(self.mesh.nodes)

    def load(self, f: SpatialField, interior: bool = True) -> np.ndarray:
        """``<f, phi_i>`` by Gauss quadrature."""
        xq = self._quadrature_points
        vals = self.W * f(xq)
        return (self.ET if interior else self.ET_full) @ vals

    @cached_property
    def _quadrature_points(self) -> np.ndarray:
        return self.E_full @ self.mesh.nodes

    def operator(self, name: str, interior: bool = True) -> sp.csr_matrix:
        """Weak form of a named linear operator: mass ``<u,v>``, laplace ``-<grad u, grad v>``."""
        if name == "mass":
            return self.M if interior else self.M_full
        if name == "laplace":
            return -(self.K if interior else self.K_full)
        raise ConfigurationError(f"unknown operator {name!r}")

    def operator_data(self, name: str) -> np.ndarray:
        return self.mass_data if name == "mass" else -self.stiff_data

    # -- inner products ---------------------------------------------------
    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete L2 inner product on interior vectors."""
        return float(a @ (self.M @ b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def node_norms_sq(self, X: np.ndarray) -> np.ndarray:
        """Squared L2 norms of each row of ``X`` (rows are interior fields)."""
        return np.einsum("ij,ij->i", X, (self.M @ X.T).T)

    def mass_solve(self, R: np.ndarray) -> np.ndarray:
        """Apply ``M^{-1}`` (interior) to a vector or to the columns of a matrix."""
        if self._mass_fac is None:
            self._mass_fac = self.banded.factor(self.mass_data)
        return self.banded.solve_factored(self._mass_fac, R)

    def dual_norms_sq(self, R: np.ndarray) -> np.ndarray:
        """``r^T M^{-1} r`` for every row of ``R``."""
        R = np.atleast_2d(R)
        X = self.mass_solve(np.ascontiguousarray(R.T))
        return np.einsum("ij,ji->i", R, X)

    # -- nonlinear forms --------------------------------------------------
    def _eval(self, f, full, deriv=False):
        if deriv:
            return (self.D_full[0] if full else self.D[0]) @ f
        return (self.E_full if full else self.E) @ f

    def form(self, kind: str, *fields, full: bool = False) -> np.ndarray:
        """Trilinear/quadrilinear forms tested against every basis function.

        ``convection(a, b)_i = int a (db/dx) phi_i``,
        ``cubic(a, b, c)_i = int a b c phi_i``.
        Fields may be vectors or column blocks.
        """
        ET = self.ET_full if full else self.ET
        W = self.W if np.ndim(fields[0]) == 1 else self.W[:, None]
        if kind == "convection":
            a, b = fields
            return ET @ (W * self._eval(a, full) * self._eval(b, full, deriv=True))
        if kind == "cubic":
            a, b, c = fields
            return ET @ (W * self._eval(a, full) * self._eval(b, full) * self._eval(c, full))
        raise ConfigurationError(f"unknown nonlinear operator {kind!r}")

    def weighted_data(self, wq: np.ndarray, table: str = "mass") -> np.ndarray:
        """Interior-pattern data of ``int w phi_j phi_i`` (or ``phi_i dphi_j/dx``)."""
        nel = self.mesh.n_elements
        t = self.t_mass if table == "mass" else self.t_conv
        return self.pattern.scatter((wq * self.W).reshape(nel, self.nq) @ t)

    def lagged_data(self, kind: str, *lag) -> np.ndarray:
        """Matrix (pattern data) of the form with all but the last field frozen."""
        if kind == "convection":
            return self.weighted_data(self.E @ lag[0], "conv")
        if kind == "cubic":
            return self.weighted_data((self.E @ lag[0]) * (self.E @ lag[1]), "mass")
        raise ConfigurationError(f"unknown nonlinear operator {kind!r}")

    def jacobian_data(self, kind: str, u: np.ndarray) -> np.ndarray:
        """Pattern data of the derivative of ``form(kind, u, ..., u)`` at ``u``."""
        if kind == "convection":
            return self.weighted_data(self.E @ u, "conv") + self.weighted_data(self.D[0] @ u, "mass")
        if kind == "cubic":
            Eu = self.E @ u
            return 3.0 * self.weighted_data(Eu * Eu, "mass")
        raise ConfigurationError(f"unknown nonlinear operator {kind!r}")

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return self.pattern.matrix(data)


@dataclass
class AffineOperators:
    """Parameter-independent pieces of the discrete problem (interior nodes)."""

    problem: ParametricProblem
    space: FESpace
    A: list          # csr matrices, one per linear term
    A_data: list     # matching pattern data
    C: np.ndarray    # (N_C, n)
    q: np.ndarray    # (N_t0, n) homogeneous initial fields
    lift: np.ndarray  # (N_l, n_full) nodal lifting fields
    h_kinds: tuple   # nonlinear operator names

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @property
    def n(self) -> int:
        return self.space.n

    @cached_property
    def lift_gram(self) -> np.ndarray:
        """Full-mesh Gram matrix of the lifting fields."""
        return self.lift @ (self.space.M_full @ self.lift.T) if self.lift.size else np.zeros((0, 0))

    @cached_property
    def lift_cross(self) -> np.ndarray:
        """``(M_full l_j)`` restricted to interior rows, shape (N_l, n)."""
        if not self.lift.size:
            return np.zeros((0, self.n))
        return (self.space.M_full @ self.lift.T).T[:, self.space.interior]

    def initial_state(self, coeffs) -> np.ndarray:
        """Homogeneous initial state ``sum_i p_i q_i`` (interior)."""
        out = np.zeros(self.n)
        for i in range(self.q.shape[0]):
            out = out + coeffs.p[i] * self.q[i]
        return out

    def full_field(self, w: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Physical nodal field from interior unknowns and lift coefficients."""
        out = self.space.embed(w)
        for j in range(self.lift.shape[0]):
            out = out + lam[j] * self.lift[j]
        return out


def assemble(problem: ParametricProblem, mesh: Mesh) -> AffineOperators:
    if mesh.dim != problem.dim:
        raise ConfigurationError(f"mesh dimension {mesh.dim} does not match problem dimension {problem.dim}")
    if not np.allclose(mesh.lo, problem.lo) or not np.allclose(mesh.hi, problem.hi):
        raise ConfigurationError("mesh does not cover the problem domain")
    V = FESpace(mesh)
    A = [V.operator(t.operator) for t in problem.linear_terms]
    A_data = [V.operator_data(t.operator) for t in problem.linear_terms]
    C = []
    for t in problem.constant_terms:
        if t.operator is None:
            C.append(V.load(t.field))
        else:
            C.append((V.operator(t.operator, interior=False) @ V.interpolate(t.field))[V.interior])
    C = np.array(C).reshape(len(C), V.n)
    q = np.array([V.interpolate(t.field)[V.interior] for t in problem.initial_terms]).reshape(-1, V.n)
    lift = np.array([V.interpolate(t.field) for t in problem.lift_terms]).reshape(-1, V.n_full)
    return AffineOperators(problem, V, A, A_data, C, q, lift, tuple(t.operator for t in problem.nonlinear_terms))


def inner_product(a: np.ndarray, b: np.ndarray, M) -> float:
    """Discrete L2 inner product ``a^T M b``."""
    return float(np.asarray(a) @ (M @ np.asarray(b)))


def apply_nonlinear(space: FESpace, kind: str, *fields, full: bool = True) -> np.ndarray:
    """Dual vector of a nonlinear form on full nodal fields."""
    return space.form(kind, *fields, full=full)
