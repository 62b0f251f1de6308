"""Greedy strategies on the reaction-diffusion benchmark: true error vs
residual estimator.  Writes the greedy traces and the mean test error per N.

    python scripts/strategies.py --out results
"""
import argparse
from pathlib import Path

from pardyn.benchmarks import run_table
from pardyn.io import trace_rows, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n-max", type=int, default=8)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    n_list = tuple(range(1, args.n_max + 1))
    rows = []
    res = {}
    for strategy in ("true-error", "estimator"):
        r = run_table("reaction-diffusion", n_list=n_list, strategy=strategy, n_test=args.n_test)
        write_csv(out / f"rd_trace_{strategy}.csv", *trace_rows(r.model))
        res[strategy] = r.report.mean
        print(strategy, "anchors", [st.anchor_index for st in r.model.trace])
    for i, N in enumerate(n_list):
        rows.append([N, res["true-error"][i], res["estimator"][i]])
    write_csv(out / "rd_strategies.csv", ["N", "eps_true_error", "eps_estimator"], rows)
    for row in rows:
        print("N=%d  true-error %.3e  estimator %.3e" % tuple(row))


if __name__ == "__main__":
    main()
