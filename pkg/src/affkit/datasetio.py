"""Dataset directory layout: manifest.json + 8-bit image/depth/mask files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError
from .geometry import BinaryMask
from .timeline import AffordanceSample

MANIFEST_NAME = "manifest.json"
LABELS_NAME = "labels.json"


def save_image(arr: np.ndarray, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def save_depth(depth: np.ndarray, path):
    save_image(np.clip(np.round(depth * 255.0), 0, 255).astype(np.uint8), path)


def save_mask(mask: BinaryMask, path):
    save_image(np.where(mask.data, 255, 0).astype(np.uint8), path)


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def load_depth(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")).astype(np.float64) / 255.0


def load_mask(path) -> BinaryMask:
    return BinaryMask(np.asarray(Image.open(path).convert("L")) >= 128)


def write_dataset(samples, out_dir, vocabulary=None):
    """Write samples (sorted by clip id) and a manifest; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    ordered = sorted(samples, key=lambda s: s.source_clip)
    for i, sample in enumerate(ordered):
        stem = f"{i:05d}"
        image_rel = f"images/{stem}.png"
        depth_rel = f"depths/{stem}.png"
        save_image(sample.image, out / image_rel)
        save_depth(sample.depth, out / depth_rel)
        mask_rels = {}
        for label in sorted(sample.masks):
            rel = f"masks/{stem}_{label}.png"
            save_mask(sample.masks[label], out / rel)
            mask_rels[label] = rel
        records.append(
            {
                "image": image_rel,
                "depth": depth_rel,
                "masks": mask_rels,
                "category": sample.object_category,
                "clip_id": sample.source_clip,
            }
        )
    (out / MANIFEST_NAME).write_text(json.dumps(records, indent=2, sort_keys=True))
    if vocabulary is None:
        vocabulary = sorted({label for r in records for label in r["masks"]})
    (out / LABELS_NAME).write_text(json.dumps(list(vocabulary), indent=2))
    return out / MANIFEST_NAME


def read_manifest(root):
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise ManifestError(f"missing {manifest}")
    try:
        records = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"unparseable manifest: {exc}") from exc
    if not isinstance(records, list):
        raise ManifestError("manifest must be a list of records")
    return records


def read_vocabulary(root):
    path = Path(root) / LABELS_NAME
    if path.exists():
        return list(json.loads(path.read_text()))
    records = read_manifest(root)
    return sorted({label for r in records for label in r["masks"]})


def load_sample(root, record) -> AffordanceSample:
    root = Path(root)
    image = load_image(root / record["image"])
    depth = load_depth(root / record["depth"])
    masks = {label: load_mask(root / rel) for label, rel in record["masks"].items()}
    return AffordanceSample(
        image=image,
        depth=depth,
        masks=masks,
        object_category=record.get("category", ""),
        source_clip=record.get("clip_id", ""),
    )
