"""Paper-tier heat benchmark: DVS against the static-coefficient baseline.

h = pi/50, tau = 1e-4, 12 training samples.  Reference trajectories are
spilled to disk (about 190 MB each); expect a few GB of scratch space.

    python scripts/heat_full.py --spill /tmp/heat_ref --out results
"""
import argparse
import logging
import tempfile

from pardyn.benchmarks import run_table

log = logging.getLogger("heat")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--spill", default=None)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    with tempfile.TemporaryDirectory() as tmp:
        r = run_table("heat2d", n_list=(2, 4, 6, 8, 10), tier="paper", compare_vs=True, n_test=args.n_test,
                      spill_dir=args.spill or tmp, jobs=args.jobs, out_dir=args.out,
                      progress=lambda k, st: log.info("term %d (%.1fs)", k, st.elapsed))
    for N, d, v in zip(r.n_list, r.report.mean, r.vs_report.mean):
        log.info("N=%2d  DVS %.3e  VS %.3e  ratio %.1f", N, d, v, v / d)


if __name__ == "__main__":
    main()
