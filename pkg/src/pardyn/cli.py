"""Command-line interface.

Subcommands::

    pardyn offline   --benchmark ID | --config FILE  [--n-max N] [--eps E] [--strategy S] [--seed K]
                     [--elements E --tau DT --T T] [--method dvs|vs] [--strip] --out MODEL
    pardyn online    --model MODEL (--params a,b,.. | --m M [--seed K]) [--with-fom] [--reconstruct] [--out DIR]
    pardyn benchmark --id ID [--n 2,4,6] [--m M] [--tier ci] [--compare vs] [--elements E --tau DT --T T]
                     [--out DIR]
    pardyn inspect   --model MODEL

CSV columns
-----------
offline:   ``<out>.trace.csv``: step, anchor_index, xi1..xid, delta_max, strategy, seconds
online:    ``online.csv``: sample, xi1..xid, [rel_error], [eps_tK ...]
           ``online_timing.csv``: samples, online_total_seconds, online_mean_seconds, [fom_mean_seconds]
           ``field_<sample>.csv`` (with --reconstruct): t, node, x1..xd, u
benchmark: ``<id>_table.csv``: N, eps_mean, eps_max, eps_t<time>.., [vs_eps_mean, vs_eps_max,
           ratio_vs_over_dvs, vs_eps_t<time>..]
           ``<id>_curve.csv``: t, eps_N<N>.., [vs_eps_N<N>..]
           ``<id>_density.csv``: sample, xi1..xid, eps_N<N>..
           ``<id>_timing.csv``: N, offline_seconds, online_total_seconds, online_mean_seconds, fom_mean_seconds

Floats are written in scientific notation with 6 significant digits.
Wall-clock times live only in the ``*timing*`` files and manifests, so the
other CSV bodies are reproducible byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure, 4 I/O or model-format error.  ``PARDYN_JOBS`` sets the default
of ``--jobs``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, ModelFormatError, NumericalError, PardynError, StateError

log = logging.getLogger("pardyn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class UsageError(PardynError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse integer list {text!r}") from exc


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("PARDYN_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"PARDYN_JOBS must be an integer, got {env!r}") from exc
    return 1


def load_config_file(path) -> dict:
    """Problem/run configuration from YAML or JSON."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        cfg = yaml.safe_load(text)
    else:
        cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: expected a mapping at the top level")
    return cfg


def _spec_overrides(args) -> dict:
    out = {}
    for key in ("elements", "tau", "T"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _problem_setup(args):
    """(problem, elements, tau, T, n_train, train_seed) from --benchmark or --config."""
    from .benchmarks import build
    from .problem import problem_from_config

    if bool(args.benchmark) == bool(args.config):
        raise UsageError("give exactly one of --benchmark and --config")
    if args.benchmark:
        problem, spec = build(args.benchmark, args.tier, **_spec_overrides(args))
        return problem, spec.elements, spec.tau, spec.T, spec.n_train, spec.train_seed
    cfg = load_config_file(args.config)
    for key in ("problem", "elements", "tau"):
        if key not in cfg:
            raise UsageError(f"{args.config}: missing key {key!r}")
    problem = problem_from_config(cfg["problem"])
    return (problem, cfg["elements"], float(cfg["tau"]), float(cfg.get("T", problem.T)),
            int(cfg.get("n_train", 10)), int(cfg.get("train_seed", 1)))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------
def cmd_offline(args) -> int:
    from .discretization import Mesh, assemble
    from .estimator import ReferenceSet
    from .fom import TimeGrid
    from .io import save_model, trace_rows, write_csv
    from .offline import OfflineConfig, run_offline
    from .problem import sample_parameters

    if not args.out:
        raise UsageError("offline needs --out MODEL")
    problem, elements, tau, T, n_train, seed = _problem_setup(args)
    if args.seed is not None:
        seed = args.seed
    if args.n_train is not None:
        n_train = args.n_train
    ops = assemble(problem, Mesh.for_problem(problem, elements))
    grid = TimeGrid(tau, T)
    training = sample_parameters(problem, n_train, seed)
    config = OfflineConfig(n_max=args.n_max, eps=args.eps, strategy=args.strategy, zeta_scheme=args.scheme)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    method = args.method
    ref = None
    if config.strategy == "true-error" or method == "vs":
        ref = ReferenceSet.compute(ops, grid, training, jobs=_jobs(args))

    def progress(k, step):
        log.info("term %d built (%.2fs)", k, step.elapsed)

    try:
        if method == "vs":
            from .vs import run_vs

            model = run_vs(ops, grid, training, n_max=args.n_max, reference=ref, seed=seed, progress=progress)
        else:
            model = run_offline(ops, grid, training, config, reference=ref, progress=progress)
    except NumericalError:
        (out.parent / (out.name + ".FAILED")).write_text("offline stage failed; no model was written\n")
        raise
    model.config.update({"train_seed": seed, "n_train": n_train, "method": method,
                         "source": args.benchmark or str(args.config), "tier": args.tier})
    save_model(model.stripped() if args.strip else model, out)
    write_csv(Path(str(out) + ".trace.csv"), *trace_rows(model))
    stop = model.trace[-1]
    reason = "training set exhausted"
    if model.n_terms >= min(args.n_max, n_train):
        reason = "n_max reached"
    elif stop.anchor_index == -1 and stop.delta_max < args.eps:
        reason = f"indicator {stop.delta_max:.3e} below eps"
    print(f"{model.n_terms} terms ({reason}); model written to {out}")
    return EXIT_OK


def cmd_online(args) -> int:
    from .io import load_model, write_csv
    from .online import evaluate_error_metric, online_zetas, reconstruct
    from .problem import sample_parameters

    if not args.model:
        raise UsageError("online needs --model MODEL")
    model = load_model(args.model)
    if args.params:
        rows = [_floats(p) for p in args.params]
        if len({len(r) for r in rows}) != 1:
            raise UsageError("all --params vectors must have the same length")
        xis = np.array(rows)
    else:
        xis = sample_parameters(model.problem, args.m or 1, 2 if args.seed is None else args.seed)
    if xis.shape[1] != model.problem.n_params:
        raise UsageError(f"parameters have {xis.shape[1]} components, the problem has {model.problem.n_params}")
    N = args.n_max if args.n_max is not None else model.n_terms
    if (args.with_fom or args.reconstruct) and not model.has_fields:
        raise StateError("this model has no spatial fields; drop --with-fom/--reconstruct")
    if not args.with_fom and not args.reconstruct:
        model = model.stripped()  # coefficient evaluation never touches the fields
    ev = online_zetas(model, xis, N)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    d = model.problem.n_params
    header = ["sample"] + [f"xi{i + 1}" for i in range(d)]
    rows = [[s] + list(xis[s]) for s in range(len(xis))]
    timing_header = ["samples", "online_total_seconds", "online_mean_seconds"]
    timing = [len(xis), ev.elapsed, ev.per_sample]
    if args.with_fom:
        fixed = tuple(_floats(args.fixed_times)) if args.fixed_times else ()
        rep = evaluate_error_metric(model, xis, n_list=[N], fixed_times=fixed, jobs=_jobs(args))
        header += ["rel_error"] + [f"eps_t{t:g}" for t in fixed]
        for s in range(len(xis)):
            rows[s] += [rep.errors[s, 0]] + list(rep.fixed[0, s])
        timing_header.append("fom_mean_seconds")
        timing.append(float(np.mean(rep.fom_times)))
        print(f"mean relative error with {N} terms: {rep.mean[0]:.5e}")
    write_csv(out / "online.csv", header, rows)
    write_csv(out / "online_timing.csv", timing_header, [timing])
    write_csv(out / "zetas.csv", ["sample", "term", "t", "zeta"],
              ([s, k + 1, t, ev.zetas[s, k, n]] for s in range(len(xis)) for k in range(N)
               for n, t in enumerate(model.grid.times)))
    if args.reconstruct:
        from .discretization import Mesh

        nodes = Mesh.from_descriptor(model.mesh.descriptor()).nodes
        for s in range(len(xis)):
            write_csv(out / f"field_{s}.csv", ["t", "node"] + [f"x{i + 1}" for i in range(nodes.shape[1])] + ["u"],
                      _field_rows(model, ev.zetas[s, :N], xis[s], nodes, reconstruct))
    print(f"{len(xis)} samples, {N} terms, online {ev.per_sample:.3e} s/sample; output in {out}")
    return EXIT_OK


def _field_rows(model, Z, xi, nodes, reconstruct):
    for n, t in enumerate(model.grid.times):
        u = reconstruct(model, Z, n, physical=True, xi=xi)
        for i in range(len(u)):
            yield [t, i] + list(nodes[i]) + [u[i]]


def cmd_benchmark(args) -> int:
    from .benchmarks import run_table

    bid = args.id or args.benchmark
    if not bid:
        raise UsageError("benchmark needs --id")
    overrides = {}
    if args.m is not None:
        overrides["n_test"] = args.m
    if args.seed is not None:
        overrides["train_seed"] = args.seed
    if args.n_train is not None:
        overrides["n_train"] = args.n_train
    overrides.update(_spec_overrides(args))
    n_list = _ints(args.n) if args.n else None
    res = run_table(bid, n_list, strategy=args.strategy, tier=args.tier, compare_vs=args.compare == "vs",
                    out_dir=args.out or ".", jobs=_jobs(args), zeta_scheme=args.scheme, **overrides)
    header, rows = res.table_rows()
    print(" ".join(f"{h:>12s}" for h in header))
    for r in rows:
        print(" ".join(f"{v:12d}" if isinstance(v, (int, np.integer)) else f"{v:12.4e}" for v in r))
    print("files: " + ", ".join(str(p) for p in res.files.values()))
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .io import FORMAT_VERSION, load_model, manifest_dict, read_header

    if not args.model:
        raise UsageError("inspect needs --model MODEL")
    version, header, _ = read_header(args.model)
    if version[0] != FORMAT_VERSION[0]:
        load_model(args.model)  # raises with the header dump
    out = manifest_dict(load_model(args.model))
    out["container_version"] = f"{version[0]}.{version[1]}"
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pardyn", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def discretization(sp):
        sp.add_argument("--elements", type=int, default=None, help="override elements per axis")
        sp.add_argument("--tau", type=float, default=None, help="override the time step")
        sp.add_argument("--T", type=float, default=None, help="override the final time")

    def common(sp):
        sp.add_argument("--jobs", type=int, default=None, help="worker processes (default: $PARDYN_JOBS or 1)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)

    o = sub.add_parser("offline", help="train a reduced model")
    common(o)
    o.add_argument("--benchmark", default=None)
    o.add_argument("--config", default=None, help="YAML or JSON problem configuration")
    o.add_argument("--tier", default="paper", choices=("paper", "ci"))
    discretization(o)
    o.add_argument("--n-max", type=int, default=10)
    o.add_argument("--n-train", type=int, default=None)
    o.add_argument("--eps", type=float, default=0.0)
    o.add_argument("--strategy", default="true-error", choices=("true-error", "estimator"))
    o.add_argument("--method", default="dvs", choices=("dvs", "vs"))
    o.add_argument("--scheme", default="product-rule", choices=("product-rule", "exact-difference"))
    o.add_argument("--strip", action="store_true", help="omit spatial fields (coefficient evaluation only)")
    o.set_defaults(func=cmd_offline)

    on = sub.add_parser("online", help="evaluate a model at new parameters")
    common(on)
    on.add_argument("--model", default=None)
    on.add_argument("--params", action="append", default=None, help="comma-separated parameter (repeatable)")
    on.add_argument("--m", type=int, default=None, help="number of random test parameters")
    on.add_argument("--n-max", type=int, default=None, help="use the first N terms")
    on.add_argument("--with-fom", action="store_true", help="also solve the full model and report errors")
    on.add_argument("--fixed-times", default=None, help="comma-separated times for fixed-time errors")
    on.add_argument("--reconstruct", action="store_true", help="write the reconstructed fields")
    on.set_defaults(func=cmd_online)

    b = sub.add_parser("benchmark", help="reproduce an error table")
    common(b)
    b.add_argument("--id", default=None)
    b.add_argument("--benchmark", default=None, help="alias of --id")
    b.add_argument("--n", default=None, help="comma-separated term counts")
    b.add_argument("--m", type=int, default=None, help="test-set size")
    b.add_argument("--n-train", type=int, default=None)
    b.add_argument("--tier", default="paper", choices=("paper", "ci"))
    discretization(b)
    b.add_argument("--strategy", default="true-error", choices=("true-error", "estimator"))
    b.add_argument("--compare", default=None, choices=("vs",))
    b.add_argument("--scheme", default="product-rule", choices=("product-rule", "exact-difference"))
    b.set_defaults(func=cmd_benchmark)

    i = sub.add_parser("inspect", help="print a model manifest")
    i.add_argument("--model", default=None)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, DomainError, StateError) as exc:
        print(f"pardyn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"pardyn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelFormatError, OSError) as exc:
        print(f"pardyn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
