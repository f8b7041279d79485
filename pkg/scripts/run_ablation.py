#!/usr/bin/env python3
"""Train the toy benchmark with the depth injector enabled, disabled, and in
train-only mode, and print the resulting training-set mIoU side by side."""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from affkit import synth, trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    data = out / "data"
    synth.write_training_dataset(data, args.samples, seed=1)
    ds = trainer.load_dataset(data)

    results = {}
    for mode in ("train_and_infer", "train_only", "off"):
        cfg = trainer.toy_train_config(epochs=args.epochs, seed=args.seed)
        cfg.model = replace(cfg.model, dfi_enabled=mode)
        best = trainer.train(ds, cfg, out / f"run_{mode}")
        results[mode] = trainer.evaluate(ds, best)["miou"]
    print(json.dumps({"train_miou": results}, indent=2))


if __name__ == "__main__":
    main()
