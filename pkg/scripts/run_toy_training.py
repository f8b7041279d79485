#!/usr/bin/env python3
"""Train the affordance segmenter on the synthetic toy benchmark (64x64,
two labels) and print the final training-set metrics."""

import argparse
import json
from pathlib import Path

from affkit import synth, trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/toy_training")
    args = ap.parse_args()

    out = Path(args.out)
    data = out / "data"
    synth.write_training_dataset(data, args.samples, seed=1)
    ds = trainer.load_dataset(data)

    cfg = trainer.toy_train_config(epochs=args.epochs, seed=args.seed)
    best = trainer.train(ds, cfg, out / "run")
    report = trainer.evaluate(ds, best, out_path=out / "run" / "eval_report.json")
    print(json.dumps({k: report[k] for k in ("miou", "f1", "acc")}, indent=2))
    print(f"best checkpoint: {best}")


if __name__ == "__main__":
    main()
