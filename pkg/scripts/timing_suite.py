"""Place the 20-design synthetic suite wirelength-only, timing-driven and
with uniform timing weights; score every result with the oracle.  The placer
uses the bundled learned delay model unless --oracle-model is given.

    python3 scripts/timing_suite.py --json suite.json
"""

import argparse
import json
import time

from tdplace.cli import DEFAULT_MODEL
from tdplace.delay_model import load_model
from tdplace.experiments import design_suite, run_timing_suite, standard_variants, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--designs", type=int, default=20)
    ap.add_argument("--min-cells", type=int, default=500)
    ap.add_argument("--max-cells", type=int, default=5000)
    ap.add_argument("--seed0", type=int, default=100)
    ap.add_argument("--json", help="write per-design results here")
    ap.add_argument("--oracle-model", action="store_true",
                    help="let the placer see the oracle delays instead of the learned model")
    args = ap.parse_args()

    variants = standard_variants()
    names = list(variants)
    print(f"{'cells':>6} {'seed':>5} " + " ".join(f"{n:>11}" for n in names))

    def show(r):
        print(f"{r.cells:6d} {r.seed:5d} " + " ".join(f"{r.cpd[n]:11.4f}" for n in names),
              flush=True)

    factory = None
    if not args.oracle_model:
        model = load_model(DEFAULT_MODEL)
        factory = lambda netlist, oracle: model  # noqa: E731
    t0 = time.perf_counter()
    results = run_timing_suite(variants, design_suite(args.designs, args.min_cells,
                                                      args.max_cells, args.seed0), model_factory=factory,
                               progress=show)
    elapsed = time.perf_counter() - t0
    e2e = summarize(results, "wirelength", "timing")
    abl = summarize(results, "timing", "uniform")
    print(f"timing vs wirelength: wins {e2e['win_rate']:.0%}, "
          f"mean CPD reduction {e2e['mean_reduction']:.2%}")
    print(f"mean CPD: timing {abl['mean_cpd_ref']:.4f}, uniform weights {abl['mean_cpd_test']:.4f}")
    print(f"total {elapsed:.0f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"seconds": elapsed, "timing_vs_wirelength": e2e,
                       "uniform_vs_timing": abl,
                       "designs": [vars(r) for r in results]}, fh, indent=1)


if __name__ == "__main__":
    main()
