"""Parametric evolution problems in affine form.

A problem is described by

    du/dt = sum_i kA_i(xi) A_i u + sum_i kC_i(xi) C_i + sum_i kH_i(xi) H_i(u),
    u(0) = sum_i p_i(xi) q_i(x) + lift(x; xi),

on a box domain with Dirichlet data given by a (time-independent) lifting
field.  Coefficients are scaled monomials of the parameter vector, spatial
fields come from a small registry of closed-form functions, and operators are
named weak forms resolved by :mod:`pardyn.discretization`.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, DomainError

LINEAR_OPERATORS = ("mass", "laplace")
NONLINEAR_OPERATORS = {"convection": 2, "cubic": 3}


# --------------------------------------------------------------------------
# coefficient functions
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Monomial:
    """Coefficient ``scale * prod_i xi[i]**e_i``.

    ``powers`` is a tuple of ``(index, exponent)`` pairs.
    """

    scale: float = 1.0
    powers: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        merged: dict[int, int] = {}
        for idx, exp in self.powers:
            merged[int(idx)] = merged.get(int(idx), 0) + int(exp)
        object.__setattr__(self, "powers", tuple(sorted((i, e) for i, e in merged.items() if e != 0)))
        object.__setattr__(self, "scale", float(self.scale))

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.full(xi.shape[:-1], self.scale)
        for idx, exp in self.powers:
            out = out * xi[..., idx] ** exp
        return out

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(self.scale * other.scale, self.powers + other.powers)

    @property
    def max_index(self) -> int:
        return max((i for i, _ in self.powers), default=-1)

    def to_config(self) -> dict:
        return {"kind": "monomial", "scale": self.scale, "powers": [list(p) for p in self.powers]}

    @classmethod
    def from_config(cls, cfg) -> "Monomial":
        if isinstance(cfg, (int, float)):
            return cls(float(cfg))
        kind = cfg.get("kind", "monomial")
        if kind not in COEFFICIENT_KINDS:
            raise ConfigurationError(
                f"coefficient kind {kind!r} is not supported: every coefficient must be an "
                "affine factor (parameter-only function times a parameter-free operator); "
                f"registered kinds are {sorted(COEFFICIENT_KINDS)}"
            )
        return COEFFICIENT_KINDS[kind](cfg)


COEFFICIENT_KINDS = {
    "monomial": lambda cfg: Monomial(cfg.get("scale", 1.0), tuple(tuple(p) for p in cfg.get("powers", ()))),
}


# --------------------------------------------------------------------------
# spatial fields
# --------------------------------------------------------------------------
def _constant(x, value=1.0):
    return np.full(x.shape[0], float(value))


def _affine(x, offset=0.0, slope=()):
    out = np.full(x.shape[0], float(offset))
    for d, s in enumerate(slope):
        out = out + float(s) * x[:, d]
    return out


def _bubble(x, scale=1.0, lo=None, hi=None):
    dim = x.shape[1]
    lo = np.zeros(dim) if lo is None else np.asarray(lo, float)
    hi = np.ones(dim) if hi is None else np.asarray(hi, float)
    out = np.full(x.shape[0], float(scale))
    for d in range(dim):
        out = out * (x[:, d] - lo[d]) * (hi[d] - x[:, d])
    return out


def _sine(x, scale=1.0, freq=1.0, axis=0):
    return float(scale) * np.sin(float(freq) * x[:, int(axis)])


def _sine_product(x, scale=1.0, freq=None):
    freq = np.ones(x.shape[1]) if freq is None else np.asarray(freq, float)
    out = np.full(x.shape[0], float(scale))
    for d in range(x.shape[1]):
        out = out * np.sin(freq[d] * x[:, d])
    return out


FIELD_KINDS = {
    "constant": _constant,
    "affine": _affine,
    "bubble": _bubble,
    "sine": _sine,
    "sine_product": _sine_product,
}
# kinds whose Laplacian vanishes identically; such lifts contribute nothing
# through diffusion operators, on any mesh, since they are reproduced exactly
HARMONIC_KINDS = {"constant", "affine"}


@dataclass(frozen=True)
class FieldPart:
    kind: str
    params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigurationError(f"unknown field kind {self.kind!r}; known: {sorted(FIELD_KINDS)}")

    def __call__(self, x):
        kw = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}
        return FIELD_KINDS[self.kind](x, **kw)


@dataclass(frozen=True)
class SpatialField:
    """Sum of closed-form parts, each optionally scaled."""

    parts: tuple[tuple[float, FieldPart], ...]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for w, part in self.parts:
            out = out + w * part(x)
        return out

    @property
    def harmonic(self) -> bool:
        return all(p.kind in HARMONIC_KINDS for _, p in self.parts)

    def scaled(self, c: float) -> "SpatialField":
        return SpatialField(tuple((c * w, p) for w, p in self.parts))

    def __add__(self, other: "SpatialField") -> "SpatialField":
        return SpatialField(self.parts + other.parts)

    def to_config(self) -> list:
        out = []
        for w, p in self.parts:
            d = {"kind": p.kind, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in p.params}}
            if w != 1.0:
                d["weight"] = w
            out.append(d)
        return out

    @classmethod
    def from_config(cls, cfg) -> "SpatialField":
        items = cfg if isinstance(cfg, (list, tuple)) else [cfg]
        parts = []
        for item in items:
            item = dict(item)
            kind = item.pop("kind")
            w = float(item.pop("weight", 1.0))
            params = tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in item.items()))
            parts.append((w, FieldPart(kind, params)))
        return cls(tuple(parts))


def make_field(kind: str, weight: float = 1.0, **params) -> SpatialField:
    """Convenience constructor for a single-part field."""
    params = tuple(sorted((k, tuple(v) if isinstance(v, (list, np.ndarray)) else v) for k, v in params.items()))
    return SpatialField(((float(weight), FieldPart(kind, params)),))


ZERO_FIELD = SpatialField(())


# --------------------------------------------------------------------------
# affine terms
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LinearTerm:
    name: str
    coef: Monomial
    operator: str


@dataclass(frozen=True)
class SourceTerm:
    """Constant-in-time forcing: either a load ``<f, v>`` or an operator image."""

    name: str
    coef: Monomial
    field: SpatialField
    operator: str | None = None  # None means load vector of ``field``


@dataclass(frozen=True)
class NonlinearTerm:
    name: str
    coef: Monomial
    operator: str

    @property
    def degree(self) -> int:
        return NONLINEAR_OPERATORS[self.operator]


@dataclass(frozen=True)
class FieldTerm:
    """``coef(xi) * field(x)``, used for initial data and Dirichlet lifting."""

    name: str
    coef: Monomial
    field: SpatialField


@dataclass(frozen=True)
class ParametricProblem:
    name: str
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    T: float
    box: tuple[tuple[float, float], ...]
    linear_terms: tuple[LinearTerm, ...] = ()
    source_terms: tuple[SourceTerm, ...] = ()
    nonlinear_terms: tuple[NonlinearTerm, ...] = ()
    initial_terms: tuple[FieldTerm, ...] = ()
    lift_terms: tuple[FieldTerm, ...] = ()
    _constant_cache: tuple = dc_field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        box = tuple((float(a), float(b)) for a, b in self.box)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "T", float(self.T))
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ConfigurationError("domain must be an interval or a rectangle")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError("domain bounds must satisfy lo < hi")
        if not box:
            raise ConfigurationError("parameter box must have at least one component")
        if any(not (np.isfinite(a) and np.isfinite(b)) or b < a for a, b in box):
            raise ConfigurationError("parameter box bounds must be finite with lo <= hi")
        if not self.T > 0:
            raise ConfigurationError("final time T must be positive")
        for t in self.linear_terms:
            if t.operator not in LINEAR_OPERATORS:
                raise ConfigurationError(f"unknown linear operator {t.operator!r}")
        for t in self.source_terms:
            if t.operator is not None and t.operator not in LINEAR_OPERATORS:
                raise ConfigurationError(f"unknown source operator {t.operator!r}")
        for t in self.nonlinear_terms:
            if t.operator not in NONLINEAR_OPERATORS:
                raise ConfigurationError(f"unknown nonlinear operator {t.operator!r}")
            if t.operator == "convection" and self.dim != 1:
                raise ConfigurationError("convection term is only available in one space dimension")
        if self.nonlinear_terms and self.lift_terms:
            raise ConfigurationError("nonlinear problems must have homogeneous Dirichlet data")
        for group in (self.linear_terms, self.source_terms, self.nonlinear_terms, self.initial_terms, self.lift_terms):
            for t in group:
                if t.coef.max_index >= self.n_params:
                    raise ConfigurationError(
                        f"term {t.name!r} uses parameter component {t.coef.max_index} "
                        f"but the box has {self.n_params} components"
                    )
        object.__setattr__(self, "_constant_cache", tuple(self._build_constant_terms()))

    # -- shape information ------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def n_params(self) -> int:
        return len(self.box)

    @property
    def is_linear(self) -> bool:
        return not self.nonlinear_terms

    @property
    def constant_terms(self) -> tuple[SourceTerm, ...]:
        """Declared sources followed by the images of the lifting field.

        The lifted unknown ``w = u - lift`` obeys the same equation with the
        extra forcing ``sum_ij kA_i lam_j A_i l_j``.  Products with a harmonic
        lift under the Laplacian vanish identically and are skipped.
        """
        return self._constant_cache

    def _build_constant_terms(self):
        out = list(self.source_terms)
        for lt in self.linear_terms:
            for lf in self.lift_terms:
                if lt.operator == "laplace" and lf.field.harmonic:
                    continue
                out.append(SourceTerm(f"{lt.name}*{lf.name}", lt.coef * lf.coef, lf.field, lt.operator))
        return out

    @property
    def n_affine(self) -> tuple[int, int, int, int]:
        """``(N_C, N_A, N_H, N_t0)``."""
        return (len(self.constant_terms), len(self.linear_terms), len(self.nonlinear_terms), len(self.initial_terms))

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.box])

    # -- serialization ----------------------------------------------------
    def to_config(self) -> dict:
        return {
            "name": self.name,
            "domain": {"lo": list(self.lo), "hi": list(self.hi)},
            "T": self.T,
            "parameter_box": [list(b) for b in self.box],
            "linear_terms": [{"name": t.name, "coef": t.coef.to_config(), "operator": t.operator} for t in self.linear_terms],
            "source_terms": [
                {"name": t.name, "coef": t.coef.to_config(), "field": t.field.to_config(), "operator": t.operator}
                for t in self.source_terms
            ],
            "nonlinear_terms": [
                {"name": t.name, "coef": t.coef.to_config(), "operator": t.operator} for t in self.nonlinear_terms
            ],
            "initial_terms": [
                {"name": t.name, "coef": t.coef.to_config(), "field": t.field.to_config()} for t in self.initial_terms
            ],
            "lift_terms": [
                {"name": t.name, "coef": t.coef.to_config(), "field": t.field.to_config()} for t in self.lift_terms
            ],
        }


def problem_from_config(cfg: Mapping) -> ParametricProblem:
    """Build a problem from a plain mapping (e.g. parsed YAML or JSON).

    Keys: ``domain`` {lo, hi}, ``T``, ``parameter_box`` (list of [lo, hi]),
    and the term tables ``linear_terms``, ``source_terms``,
    ``nonlinear_terms``, ``initial_terms``, ``lift_terms``.  Each term has a
    ``name``, a ``coef`` ({kind: monomial, scale, powers: [[index, exp], ...]}
    or a bare number), and either an ``operator`` or a ``field``.
    """
    try:
        dom = cfg["domain"]
        def coef(t):
            return Monomial.from_config(t.get("coef", 1.0))

        return ParametricProblem(
            name=str(cfg.get("name", "custom")),
            lo=tuple(np.atleast_1d(dom["lo"])),
            hi=tuple(np.atleast_1d(dom["hi"])),
            T=float(cfg["T"]),
            box=tuple(tuple(b) for b in cfg["parameter_box"]),
            linear_terms=tuple(
                LinearTerm(t.get("name", f"A{i}"), coef(t), t["operator"]) for i, t in enumerate(cfg.get("linear_terms", ()))
            ),
            source_terms=tuple(
                SourceTerm(t.get("name", f"C{i}"), coef(t), SpatialField.from_config(t["field"]), t.get("operator"))
                for i, t in enumerate(cfg.get("source_terms", ()))
            ),
            nonlinear_terms=tuple(
                NonlinearTerm(t.get("name", f"H{i}"), coef(t), t["operator"])
                for i, t in enumerate(cfg.get("nonlinear_terms", ()))
            ),
            initial_terms=tuple(
                FieldTerm(t.get("name", f"q{i}"), coef(t), SpatialField.from_config(t["field"]))
                for i, t in enumerate(cfg.get("initial_terms", ()))
            ),
            lift_terms=tuple(
                FieldTerm(t.get("name", f"l{i}"), coef(t), SpatialField.from_config(t["field"]))
                for i, t in enumerate(cfg.get("lift_terms", ()))
            ),
        )
    except KeyError as exc:
        raise ConfigurationError(f"problem configuration is missing key {exc}") from None
    except (TypeError, AttributeError) as exc:
        raise ConfigurationError(f"malformed problem configuration: {exc}") from None


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------
def check_parameters(problem: ParametricProblem, xi) -> np.ndarray:
    """Validate shape and box membership; returns a float array (d,) or (B, d)."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim not in (1, 2) or xi.shape[-1] != problem.n_params:
        raise ConfigurationError(
            f"parameter vector has shape {xi.shape}, expected (..., {problem.n_params})"
        )
    lo, hi = problem.lower, problem.upper
    slack = 1e-12 * np.maximum(1.0, np.maximum(abs(lo), abs(hi)))
    bad = (xi < lo - slack) | (xi > hi + slack) | ~np.isfinite(xi)
    if bad.any():
        where = np.argwhere(bad)[0]
        raise DomainError(
            f"parameter component {where[-1]} = {xi[tuple(where)]!r} lies outside "
            f"[{lo[where[-1]]}, {hi[where[-1]]}]"
        )
    return xi


def _stack(funcs, xi):
    if not funcs:
        return np.zeros(xi.shape[:-1] + (0,))
    return np.stack([np.broadcast_to(f(xi), xi.shape[:-1]) for f in funcs], axis=-1)


@dataclass(frozen=True)
class AffineCoefficients:
    """Coefficient vectors at one or many parameters (leading batch axis optional)."""

    kC: np.ndarray
    kA: np.ndarray
    kH: np.ndarray
    p: np.ndarray
    lam: np.ndarray


def evaluate_coefficients(problem: ParametricProblem, xi) -> AffineCoefficients:
    xi = check_parameters(problem, xi)
    return AffineCoefficients(
        kC=_stack([t.coef for t in problem.constant_terms], xi),
        kA=_stack([t.coef for t in problem.linear_terms], xi),
        kH=_stack([t.coef for t in problem.nonlinear_terms], xi),
        p=_stack([t.coef for t in problem.initial_terms], xi),
        lam=_stack([t.coef for t in problem.lift_terms], xi),
    )


def evaluate_initial_field(problem: ParametricProblem, xi, include_lift: bool = True) -> SpatialField:
    """Physical initial state ``sum_i p_i(xi) q_i + lift`` as a callable field."""
    xi = check_parameters(problem, xi)
    if xi.ndim != 1:
        raise ConfigurationError("evaluate_initial_field expects a single parameter vector")
    out = ZERO_FIELD
    terms = problem.initial_terms + (problem.lift_terms if include_lift else ())
    for t in terms:
        out = out + t.field.scaled(float(t.coef(xi)))
    return out


def sample_parameters(problem_or_box, count: int, seed: int, method: str = "uniform") -> np.ndarray:
    """Draw ``count`` parameter vectors from the box.

    Uses a counter-based (Philox) generator so streams are reproducible and
    independent across seeds.
    """
    box = problem_or_box.box if isinstance(problem_or_box, ParametricProblem) else problem_or_box
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    count = int(count)
    if count < 0:
        raise ConfigurationError("sample count must be non-negative")
    rng = np.random.Generator(np.random.Philox(seed))
    if method == "uniform":
        unit = rng.random((count, box.shape[0]))
    elif method == "lhs":
        unit = qmc.LatinHypercube(d=box.shape[0], seed=rng).random(count) if count else np.zeros((0, box.shape[0]))
    else:
        raise ConfigurationError(f"unknown sampling method {method!r}")
    return box[:, 0] + unit * (box[:, 1] - box[:, 0])


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent integer seeds from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]
