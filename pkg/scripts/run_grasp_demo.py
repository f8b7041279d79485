#!/usr/bin/env python3
"""End-to-end task demo: train a checkpoint, synthesize grasp scenes, and run
affordance-oriented object selection plus grasp filtering on each of them."""

import argparse
import json
from pathlib import Path

from affkit import datasetio, graspsel, synth, trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=10)
    ap.add_argument("--task", default="cut cake")
    ap.add_argument("--handover", action="store_true")
    ap.add_argument("--checkpoint", default=None,
                    help="reuse an existing checkpoint instead of training one")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/grasp_demo")
    args = ap.parse_args()

    out = Path(args.out)
    if args.checkpoint:
        ckpt = args.checkpoint
    else:
        data = out / "data"
        synth.write_training_dataset(data, 200, seed=1)
        ds = trainer.load_dataset(data)
        ckpt = trainer.train(ds, trainer.toy_train_config(epochs=30, seed=args.seed),
                             out / "train")

    scene_dirs = synth.write_grasp_corpus(out / "scenes", args.scenes, args.seed + 1)
    task = graspsel.TaskSpec.parse(args.task,
                                   mode="handover" if args.handover else "use_tool")
    correct = 0
    for sdir in scene_dirs:
        spec = synth.GraspSceneSpec.from_json(json.loads((sdir / "scene.json").read_text()))
        providers = graspsel.Providers(
            scene_detector=graspsel.MockSceneDetector(spec),
            grasp_provider=graspsel.MockGraspProvider(),
        )
        rec = graspsel.run_task(
            datasetio.load_image(sdir / "image.png"),
            datasetio.load_depth(sdir / "depth.png"),
            task, ckpt, providers, out_dir=out / "plans" / sdir.name)
        picked = rec["selected"]["index"]
        if picked == spec.capable_index:
            correct += 1
        print(f"{sdir.name}: selected object {picked} "
              f"(capable={spec.capable_index}), "
              f"contact={rec['grasp']['contact_pixel']}")
    print(f"correct selections: {correct}/{len(scene_dirs)}")


if __name__ == "__main__":
    main()
