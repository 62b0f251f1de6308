"""The four benchmark problems and the table/curve harness.

Each benchmark has a ``paper`` tier (reference discretization, training
size and test count) and a ``ci`` tier with a smaller test set and, where
the reference mesh is expensive, a coarser mesh.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .problem import (
    FieldTerm,
    LinearTerm,
    Monomial,
    NonlinearTerm,
    ParametricProblem,
    SourceTerm,
    make_field,
)

BENCHMARK_IDS = ("reaction-diffusion", "heat2d", "burgers", "allen-cahn")


@dataclass(frozen=True)
class BenchmarkSpec:
    id: str
    elements: int  # per axis
    tau: float
    T: float
    box: tuple
    n_train: int
    n_test: int
    train_seed: int = 1
    test_seed: int = 2
    fixed_times: tuple = ()
    n_list: tuple = (1, 2, 3, 4, 5, 6, 7, 8)

    @property
    def h(self) -> float:
        return self.span / self.elements

    @property
    def span(self) -> float:
        return np.pi if self.id == "heat2d" else 1.0

    def replace(self, **kw) -> "BenchmarkSpec":
        return dataclasses.replace(self, **kw)


_SPECS = {
    "reaction-diffusion": BenchmarkSpec("reaction-diffusion", 50, 1e-3, 1.0, ((1.0, 3.0),) * 4, 11, 1000,
                                        n_list=(1, 2, 3, 4, 5, 6, 7, 8)),
    "heat2d": BenchmarkSpec("heat2d", 50, 1e-4, 1.0, ((1.0, 4.0),) * 11, 12, 1000, n_list=(2, 4, 6, 8, 10)),
    "burgers": BenchmarkSpec("burgers", 100, 1e-4, 2.0, ((1.0, 3.0),) * 2, 12, 1000, fixed_times=(1.0, 2.0),
                             n_list=(2, 4, 6, 8, 10)),
    "allen-cahn": BenchmarkSpec("allen-cahn", 20, 1e-4, 1.0, ((0.1, 0.2),), 8, 1000, n_list=(1, 2, 3, 4, 5, 6)),
}

# reduced test counts (and for heat a coarser mesh) for routine runs
_CI = {
    "reaction-diffusion": dict(n_test=1000),
    "heat2d": dict(elements=25, n_test=100),
    "burgers": dict(n_test=100),
    "allen-cahn": dict(n_test=100),
}


def benchmark_spec(bid: str, tier: str = "paper", **overrides) -> BenchmarkSpec:
    if bid not in _SPECS:
        raise ConfigurationError(f"unknown benchmark {bid!r}; known: {', '.join(BENCHMARK_IDS)}")
    if tier not in ("paper", "ci"):
        raise ConfigurationError(f"unknown tier {tier!r}; use 'paper' or 'ci'")
    spec = _SPECS[bid]
    if tier == "ci":
        spec = spec.replace(**_CI[bid])
    if not overrides:
        return spec
    if "T" in overrides and "fixed_times" not in overrides:
        # a shortened horizon keeps only the report times it still contains
        overrides["fixed_times"] = tuple(t for t in spec.fixed_times if t <= overrides["T"] + 1e-12)
    return spec.replace(**overrides)


def _reaction_diffusion(spec):
    # u_t + xi1 u = 2 xi2 u_xx + xi3, with u = 2 (x + 1) xi4 initially and on the boundary
    return ParametricProblem(
        "reaction-diffusion", (0.0,), (1.0,), spec.T, spec.box,
        linear_terms=(
            LinearTerm("reaction", Monomial(-1.0, ((0, 1),)), "mass"),
            LinearTerm("diffusion", Monomial(2.0, ((1, 1),)), "laplace"),
        ),
        source_terms=(SourceTerm("source", Monomial(1.0, ((2, 1),)), make_field("constant", value=1.0)),),
        lift_terms=(FieldTerm("boundary", Monomial(1.0, ((3, 1),)), make_field("affine", offset=2.0, slope=[2.0])),),
    )


def _heat2d(spec):
    # u_t = xi1 lap u + f, f = 1 + sum_m (sin(2 pi m x1) + sin(2 pi m x2)) / (m pi)^2 xi_{m+1}
    src = [SourceTerm("f0", Monomial(1.0, ()), make_field("constant", value=1.0))]
    for m in range(1, 11):
        w = 1.0 / (m * np.pi) ** 2
        fm = make_field("sine", w, freq=2 * np.pi * m, axis=0) + make_field("sine", w, freq=2 * np.pi * m, axis=1)
        src.append(SourceTerm(f"f{m}", Monomial(1.0, ((m, 1),)), fm))
    return ParametricProblem(
        "heat2d", (0.0, 0.0), (np.pi, np.pi), spec.T, spec.box,
        linear_terms=(LinearTerm("diffusion", Monomial(1.0, ((0, 1),)), "laplace"),),
        source_terms=tuple(src),
        initial_terms=(FieldTerm("bump", Monomial(1.0, ()), make_field("sine_product")),),
        lift_terms=(FieldTerm("boundary", Monomial(1.0, ()), make_field("constant", value=1.0)),),
    )


def _burgers(spec):
    # u_t + u u_x = xi1 / 50 u_xx, u0 = x (1 - x) xi2 / 2
    return ParametricProblem(
        "burgers", (0.0,), (1.0,), spec.T, spec.box,
        linear_terms=(LinearTerm("viscosity", Monomial(1.0 / 50.0, ((0, 1),)), "laplace"),),
        nonlinear_terms=(NonlinearTerm("convection", Monomial(-1.0, ()), "convection"),),
        initial_terms=(FieldTerm("bubble", Monomial(0.5, ((1, 1),)), make_field("bubble")),),
    )


def _allen_cahn(spec):
    # u_t = xi^2 lap u - (u^3 - u), u0 = sqrt(5) (x1^2 - x1)(x2^2 - x2)
    return ParametricProblem(
        "allen-cahn", (0.0, 0.0), (1.0, 1.0), spec.T, spec.box,
        linear_terms=(
            LinearTerm("diffusion", Monomial(1.0, ((0, 2),)), "laplace"),
            LinearTerm("growth", Monomial(1.0, ()), "mass"),
        ),
        nonlinear_terms=(NonlinearTerm("cubic", Monomial(-1.0, ()), "cubic"),),
        initial_terms=(FieldTerm("bubble", Monomial(np.sqrt(5.0), ()), make_field("bubble")),),
    )


_BUILDERS = {
    "reaction-diffusion": _reaction_diffusion,
    "heat2d": _heat2d,
    "burgers": _burgers,
    "allen-cahn": _allen_cahn,
}


def build(bid: str, tier: str = "paper", **overrides) -> tuple[ParametricProblem, BenchmarkSpec]:
    """Problem definition and discretization settings for a benchmark."""
    spec = benchmark_spec(bid, tier, **overrides)
    return _BUILDERS[bid](spec), spec


# --------------------------------------------------------------------------
# table harness
# --------------------------------------------------------------------------
@dataclass
class TableResult:
    spec: BenchmarkSpec
    n_list: tuple
    strategy: str
    report: object                 # ErrorReport of the dynamical method
    model: object                  # ReducedModel with max(n_list) terms
    offline_time: float            # greedy stage, excluding reference solves
    reference_time: float          # training-set FOM solves (true-error strategy)
    online_times: dict = field(default_factory=dict)   # N -> batch wall time
    vs_report: object = None
    vs_model: object = None
    vs_offline_time: float = float("nan")
    files: dict = field(default_factory=dict)

    def table_rows(self):
        """(header, rows) of the error table; timing is kept in a separate file."""
        fixed = [f"eps_t{_fmt_time(t)}" for t in self.spec.fixed_times]
        header = ["N", "eps_mean", "eps_max"] + fixed
        if self.vs_report is not None:
            header += ["vs_eps_mean", "vs_eps_max", "ratio_vs_over_dvs"] + ["vs_" + f for f in fixed]
        rows = []
        fm = self.report.fixed_mean() if self.spec.fixed_times else None
        vfm = self.vs_report.fixed_mean() if self.vs_report is not None and self.spec.fixed_times else None
        for i, N in enumerate(self.n_list):
            row = [N, self.report.mean[i], self.report.max[i]] + (list(fm[i]) if fm is not None else [])
            if self.vs_report is not None:
                v = self.vs_report.mean[i]
                row += [v, self.vs_report.max[i], v / self.report.mean[i]] + (list(vfm[i]) if vfm is not None else [])
            rows.append(row)
        return header, rows

    def timing_rows(self):
        header = ["N", "offline_seconds", "online_total_seconds", "online_mean_seconds", "fom_mean_seconds"]
        M = len(self.report.xis)
        fom = float(np.mean(self.report.fom_times))
        rows = []
        for N in self.n_list:
            off = self.reference_time + sum(st.elapsed for st in self.model.trace[:N])
            rows.append([N, off, self.online_times[N], self.online_times[N] / M, fom])
        return header, rows

    def curve_rows(self):
        times = self.model.grid.times
        header = ["t"] + [f"eps_N{N}" for N in self.n_list]
        if self.vs_report is not None:
            header += [f"vs_eps_N{N}" for N in self.n_list]
        cols = [times] + list(self.report.curves)
        if self.vs_report is not None:
            cols += list(self.vs_report.curves)
        return header, [list(r) for r in zip(*cols)]

    def density_rows(self):
        d = self.model.problem.n_params
        header = ["sample"] + [f"xi{i + 1}" for i in range(d)] + [f"eps_N{N}" for N in self.n_list]
        rows = [[s] + list(self.report.xis[s]) + list(self.report.errors[s]) for s in range(len(self.report.xis))]
        return header, rows


def _fmt_time(t: float) -> str:
    return ("%g" % t).replace(".", "p")


def run_table(bid: str, n_list=None, strategy: str = "true-error", tier: str = "paper", compare_vs: bool = False,
              out_dir=None, jobs: int = 1, zeta_scheme: str = "product-rule", spill_dir=None, progress=None,
              **overrides) -> TableResult:
    """Train once with max(n_list) terms, evaluate every truncation on the test set.

    ``overrides`` replace :class:`BenchmarkSpec` fields (``n_test``,
    ``train_seed``, ``elements``, ...).  With ``out_dir`` the CSV files
    ``<bid>_table.csv``, ``<bid>_curve.csv``, ``<bid>_density.csv``,
    ``<bid>_timing.csv`` and a ``<bid>_manifest.json`` are written.
    """
    from .discretization import Mesh, assemble
    from .estimator import ReferenceSet
    from .fom import TimeGrid
    from .offline import OfflineConfig, run_offline
    from .online import evaluate_models, online_zetas
    from .problem import sample_parameters

    problem, spec = build(bid, tier, **overrides)
    n_list = tuple(sorted({int(n) for n in (spec.n_list if n_list is None else n_list)}))
    if not n_list or n_list[0] < 1:
        raise ConfigurationError("term counts must be positive")
    if max(n_list) > spec.n_train:
        raise ConfigurationError(f"N={max(n_list)} exceeds the training-set size {spec.n_train}")
    if compare_vs and not problem.is_linear:
        raise ConfigurationError(f"the static-coefficient comparison needs a linear problem; {bid} is nonlinear")
    ops = assemble(problem, Mesh.for_problem(problem, spec.elements))
    grid = TimeGrid(spec.tau, spec.T)
    training = sample_parameters(problem, spec.n_train, spec.train_seed)
    test = sample_parameters(problem, spec.n_test, spec.test_seed)
    t0 = time.perf_counter()
    ref = None
    if strategy == "true-error" or compare_vs:
        ref = ReferenceSet.compute(ops, grid, training, spill_dir=spill_dir, jobs=jobs)
    ref_time = time.perf_counter() - t0
    config = OfflineConfig(n_max=max(n_list), strategy=strategy, zeta_scheme=zeta_scheme)
    t0 = time.perf_counter()
    model = run_offline(ops, grid, training, config, reference=ref if strategy == "true-error" else None,
                        progress=progress)
    offline_time = time.perf_counter() - t0
    if model.n_terms < max(n_list):
        raise ConfigurationError(f"offline stage stopped at {model.n_terms} terms, {max(n_list)} requested")
    models, lists = [model], [n_list]
    vs_model, vs_time = None, float("nan")
    if compare_vs:
        from .vs import run_vs

        t0 = time.perf_counter()
        vs_model = run_vs(ops, grid, training, n_max=max(n_list), reference=ref, seed=spec.train_seed)
        vs_time = time.perf_counter() - t0
        models.append(vs_model)
        lists.append(n_list)
    del ref
    online_times = {N: online_zetas(model, test, N).elapsed for N in n_list}
    reports = evaluate_models(models, test, None, lists, spec.fixed_times, ops, jobs)
    result = TableResult(spec, n_list, strategy, reports[0], model, offline_time, ref_time, online_times,
                         reports[1] if compare_vs else None, vs_model, vs_time)
    if out_dir is not None:
        write_table(result, out_dir, extra={"zeta_scheme": zeta_scheme, "tier": tier, "jobs": jobs})
    return result


def write_table(result: TableResult, out_dir, extra=None) -> dict:
    import json
    from pathlib import Path

    from .io import manifest_dict, package_version, write_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bid = result.spec.id
    files = {}
    for kind, rows in (("table", result.table_rows()), ("curve", result.curve_rows()),
                       ("density", result.density_rows()), ("timing", result.timing_rows())):
        files[kind] = write_csv(out / f"{bid}_{kind}.csv", *rows)
    manifest = {
        "benchmark": dataclasses.asdict(result.spec),
        "n_list": list(result.n_list),
        "strategy": result.strategy,
        "compare_vs": result.vs_report is not None,
        "model": manifest_dict(result.model),
        "version": package_version(),
        **(extra or {}),
    }
    if result.vs_model is not None:
        manifest["vs_model"] = manifest_dict(result.vs_model)
    files["manifest"] = out / f"{bid}_manifest.json"
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    result.files = files
    return files
