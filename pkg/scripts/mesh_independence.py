"""Online cost against mesh size: per-sample online and FOM times on the heat
problem for h = pi/n, n in --elements.

    python scripts/mesh_independence.py --elements 13 25 50 --out results
"""
import argparse
from pathlib import Path

from pardyn.benchmarks import build
from pardyn.discretization import Mesh, assemble
from pardyn.fom import TimeGrid, solve
from pardyn.io import write_csv
from pardyn.offline import OfflineConfig, run_offline
from pardyn.online import online_zetas
from pardyn.problem import sample_parameters


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--elements", type=int, nargs="+", default=[13, 25, 50])
    ap.add_argument("--T", type=float, default=0.1)
    ap.add_argument("--n-terms", type=int, default=4)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    rows = []
    for el in args.elements:
        problem, spec = build("heat2d", elements=el, T=args.T)
        ops = assemble(problem, Mesh.for_problem(problem, el))
        grid = TimeGrid(spec.tau, spec.T)
        train = sample_parameters(problem, max(args.n_terms, 4), spec.train_seed)
        model = run_offline(ops, grid, train, OfflineConfig(n_max=args.n_terms, strategy="estimator"))
        xis = sample_parameters(problem, args.samples, spec.test_seed)
        online = min(online_zetas(model, xis).elapsed for _ in range(5)) / len(xis)
        fom = min(solve(ops, xis[i], grid).elapsed for i in range(3))
        rows.append([el, ops.n, online, fom])
        print("pi/%d  unknowns %d  online %.2e s  FOM %.2e s" % (el, ops.n, online, fom))
    write_csv(Path(args.out) / "mesh_independence.csv",
              ["elements", "unknowns", "online_seconds", "fom_seconds"], rows)


if __name__ == "__main__":
    main()
