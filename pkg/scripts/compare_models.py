"""Train the graph delay model, its no-topology ablation and the linear
baseline on one oracle-labelled corpus; print test-split metrics.

    python3 scripts/compare_models.py --designs 5 --cells 2000 --epochs 20
"""

import argparse
import json
import time

from tdplace.delay_model import ModelConfig, TrainConfig, evaluate, train_model
from tdplace.experiments import build_corpus, compare_models


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--designs", type=int, default=5)
    ap.add_argument("--cells", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--json", help="write the metrics here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    splits = build_corpus([(args.cells, s) for s in range(1, args.designs + 1)])
    sizes = {k: (v.n_nets, v.n_pairs) for k, v in splits.items()}
    print(f"corpus (nets, pairs): {sizes}  [{time.perf_counter() - t0:.1f}s]")

    hyper = TrainConfig(max_epochs=args.epochs, patience=args.epochs)
    t0 = time.perf_counter()
    cmp = compare_models(splits, ModelConfig(), hyper)
    print(f"graph model   {cmp.graph}  [{time.perf_counter() - t0:.1f}s]")
    print(f"linear        {cmp.baseline}")

    flat = train_model(splits["train"], splits["val"], ModelConfig(use_topology=False), hyper)
    no_topo = evaluate(flat, splits["test"])
    print(f"no topology   {no_topo}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"sizes": sizes, "graph": cmp.graph, "linear": cmp.baseline,
                       "no_topology": no_topo}, fh, indent=1)


if __name__ == "__main__":
    main()
