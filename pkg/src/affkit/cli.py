"""Command-line entry point: synth / mine / train / eval / infer / grasp.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datasetio, graspsel, mining, synth, trainer
from .errors import AffkitError
from .timeline import MiningConfig, RansacParams


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affkit",
                                     description="Affordance mining, training, and grasp planning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic corpora")
    p.add_argument("--kind", choices=["mining", "train", "grasp"], default="mining")
    p.add_argument("--scenes", type=int, default=10, help="scene count (mining/grasp)")
    p.add_argument("--samples", type=int, default=100, help="sample count (train)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mine", help="mine affordance samples from a scene corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the corpus RANSAC seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the affordance model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="TOML training config")
    p.add_argument("--preset", choices=["toy", "full"], default="toy")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--dfi", choices=["train_and_infer", "train_only", "off"], default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="metric report path (JSON)")

    p = sub.add_parser("infer", help="segment images and emit score maps + overlays")
    p.add_argument("--image", required=True, nargs="+")
    p.add_argument("--depth", nargs="*", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grasp", help="plan an affordance-oriented grasp")
    p.add_argument("--image", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--scene", required=True, help="scene record backing the mock detector")
    p.add_argument("--task", required=True, help='e.g. "cut cake"')
    p.add_argument("--handover", action="store_true")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.kind == "mining":
        dirs = synth.write_mining_corpus(out, args.scenes, args.seed)
        print(f"wrote {len(dirs)} mining scenes to {out}")
    elif args.kind == "train":
        synth.write_training_dataset(out, args.samples, args.seed)
        print(f"wrote {args.samples} training samples to {out}")
    else:
        dirs = synth.write_grasp_corpus(out, args.scenes, args.seed)
        print(f"wrote {len(dirs)} grasp scenes to {out}")
    return 0


def load_mining_config(corpus: Path, seed_override=None) -> MiningConfig:
    doc = json.loads((corpus / "mining_config.json").read_text())
    ransac = RansacParams(**doc["ransac"])
    if seed_override is not None:
        ransac.seed = seed_override
    return MiningConfig(
        n_contact_points=doc["n_contact_points"],
        iou_threshold=doc["iou_threshold"],
        erosion_radius=doc["erosion_radius"],
        ransac=ransac,
        average_before_projection=doc["average_before_projection"],
    )


def cmd_mine(args) -> int:
    corpus = Path(args.corpus)
    cfg = load_mining_config(corpus, args.seed)
    scene_dirs = sorted((corpus / "scenes").iterdir())
    samples = []
    for sdir in scene_dirs:
        spec, hand_t, tool_t = synth.load_scene_dir(sdir)
        clients = synth.SyntheticClients(spec)
        frames = synth.SceneFrames(spec)
        samples.append(mining.mine_pair(hand_t, tool_t, clients, cfg, frames.for_clip))
    manifest = datasetio.write_dataset(samples, args.out)
    print(f"mined {len(samples)} samples -> {manifest}")
    return 0


def cmd_train(args) -> int:
    ds = trainer.load_dataset(args.data)
    if args.config:
        cfg = trainer.load_train_config(args.config)
    elif args.preset == "toy":
        cfg = trainer.toy_train_config()
    else:
        cfg = trainer.TrainConfig()
    cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.dfi is not None:
        from dataclasses import replace
        cfg.model = replace(cfg.model, dfi_enabled=args.dfi)
    best = trainer.train(ds, cfg, args.out)
    print(f"best checkpoint: {best}")
    return 0


def cmd_eval(args) -> int:
    ds = trainer.load_dataset(args.data)
    out = args.out or str(Path(args.checkpoint).parent / "eval_report.json")
    report = trainer.evaluate(ds, args.checkpoint, out_path=out)
    print(json.dumps({k: report[k] for k in ("miou", "f1", "acc")}, indent=2))
    print(f"report written to {out}")
    return 0


def cmd_infer(args) -> int:
    import torch
    from .geometry import Box
    from .model import load_checkpoint
    from .timeline import AffordanceSample

    model, vocab = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    depths = args.depth or [None] * len(args.image)
    if len(depths) != len(args.image):
        print("error: --depth count must match --image count", file=sys.stderr)
        return 2
    use_depth = model.cfg.dfi_enabled == "train_and_infer"
    for img_path, dep_path in zip(args.image, depths):
        image = datasetio.load_image(img_path)
        depth = datasetio.load_depth(dep_path) if dep_path else np.zeros(image.shape[:2])
        sample = AffordanceSample(image=image, depth=depth, masks={},
                                  object_category="", source_clip="")
        resized = trainer.resize_sample(sample, model.cfg.input_size)
        im, de, _ = trainer.sample_tensors(resized, vocab)
        with torch.no_grad():
            seg = model.segment(im.unsqueeze(0), de.unsqueeze(0) if use_depth else None)
        stem = Path(img_path).stem
        for i, label in enumerate(vocab):
            score_img = np.clip((seg.scores[i] + 1) / 2 * 255, 0, 255).astype(np.uint8)
            datasetio.save_image(score_img, out / f"{stem}_score_{label}.png")
        obj = graspsel.SceneObject(
            box=Box(0, 0, resized.image.shape[1] - 1, resized.image.shape[0] - 1),
            crop=resized.image, depth_crop=resized.depth)
        obj.labels = seg.labels
        overlay = graspsel.render_overlay(resized.image, obj, vocab)
        datasetio.save_image(overlay, out / f"{stem}_overlay.png")
    print(f"wrote score maps and overlays to {out}")
    return 0


def cmd_grasp(args) -> int:
    spec = synth.GraspSceneSpec.from_json(json.loads(Path(args.scene).read_text()))
    image = datasetio.load_image(args.image)
    depth = datasetio.load_depth(args.depth)
    task = graspsel.TaskSpec.parse(args.task,
                                   mode="handover" if args.handover else "use_tool")
    providers = graspsel.Providers(
        scene_detector=graspsel.MockSceneDetector(spec),
        grasp_provider=graspsel.MockGraspProvider(),
    )
    record = graspsel.run_task(image, depth, task, args.checkpoint, providers,
                               out_dir=args.out)
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "mine": cmd_mine,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "grasp": cmd_grasp,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0,) else 0
    try:
        return COMMANDS[args.command](args)
    except AffkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
