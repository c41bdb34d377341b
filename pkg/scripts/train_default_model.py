"""Regenerate the bundled delay-model weights used when `tdplace place`
gets no --model.

    python3 scripts/train_default_model.py
"""

import argparse
from pathlib import Path

from tdplace.delay_model import ModelConfig, TrainConfig, evaluate, save_model, train_model
from tdplace.experiments import build_corpus

OUT = Path(__file__).resolve().parents[1] / "src" / "tdplace" / "data" / "default_model.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--designs", type=int, default=5)
    ap.add_argument("--cells", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--out", default=str(OUT))
    args = ap.parse_args()

    splits = build_corpus([(args.cells, s) for s in range(1, args.designs + 1)])
    model = train_model(splits["train"], splits["val"], ModelConfig(seed=0),
                        TrainConfig(max_epochs=args.epochs, patience=10, seed=0),
                        progress=lambda e, mae: print(f"epoch {e:3d}  val MAE {mae:.4f}", flush=True))
    print("test", evaluate(model, splits["test"]))
    save_model(model, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
