"""Reproduce the error tables of the four benchmarks.

    python scripts/tables.py --tier paper --out results
    python scripts/tables.py heat2d --tier ci --compare-vs

Writes ``<bid>_{table,curve,density,timing}.csv`` and a manifest per benchmark.
"""
import argparse
import logging

from pardyn.benchmarks import BENCHMARK_IDS, run_table

log = logging.getLogger("tables")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("ids", nargs="*", default=list(BENCHMARK_IDS))
    ap.add_argument("--tier", default="paper", choices=("paper", "ci"))
    ap.add_argument("--strategy", default="true-error", choices=("true-error", "estimator"))
    ap.add_argument("--scheme", default="product-rule", choices=("product-rule", "exact-difference"))
    ap.add_argument("--compare-vs", action="store_true", help="also train the static-coefficient baseline (heat2d)")
    ap.add_argument("--n-test", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--spill", default=None, help="directory for memory-mapped reference trajectories")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    extra = {} if args.n_test is None else {"n_test": args.n_test}
    for bid in args.ids:
        log.info("%s: %s tier, strategy %s", bid, args.tier, args.strategy)
        r = run_table(bid, tier=args.tier, strategy=args.strategy, zeta_scheme=args.scheme,
                      compare_vs=args.compare_vs and bid == "heat2d", out_dir=args.out, jobs=args.jobs,
                      spill_dir=args.spill, progress=lambda k, st: log.info("  term %d (%.1fs)", k, st.elapsed),
                      **extra)
        header, rows = r.table_rows()
        log.info("%s", ", ".join(header))
        for row in rows:
            log.info("%s", ", ".join("%.3e" % v if isinstance(v, float) else str(v) for v in row))
        log.info("offline %.1fs, files in %s", r.offline_time, args.out)


if __name__ == "__main__":
    main()
