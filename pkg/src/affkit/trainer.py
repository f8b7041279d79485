"""Dataset loading, augmentation, the optimization loop, and evaluation."""

from __future__ import annotations

import json
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import datasetio
from .errors import ManifestError, NonFiniteLoss, VocabularyMismatch
from .geometry import BinaryMask
from .losses import LossConfig, total_loss
from .metrics import MetricAccumulator, ConfusionAccumulator, BACKGROUND
from .model import (
    AffordanceModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    trainable_parameters,
)
from .synth import stable_seed
from .timeline import AffordanceSample

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 15
    resize: int = 476
    crop: int = 448
    flip_horizontal: bool = True
    flip_vertical: bool = True
    seed: int = 0
    weight_decay: float = 0.01
    prob_temperature: float = 0.05
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.crop > self.resize:
            raise ValueError("crop must be <= resize")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.prob_temperature <= 0:
            raise ValueError("prob_temperature must be > 0")


def scores_to_probs(scores, tau: float, temperature: float):
    """Map cosine scores to probabilities, centered on the background
    threshold so the training objective matches the inference decision."""
    return torch.sigmoid((scores - tau) / temperature)


def toy_train_config(**overrides) -> TrainConfig:
    """64x64 preset so the full recipe runs in minutes on a CPU."""
    base = dict(resize=72, crop=64,
                model=ModelConfig(input_size=64, patch_size=8, channels=64,
                                  encoder_depth=8, encoder_heads=4))
    base.update(overrides)
    return TrainConfig(**base)


def load_train_config(path) -> TrainConfig:
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    kwargs = dict(doc.get("train", {}))
    if "loss" in doc:
        kwargs["loss"] = LossConfig(**doc["loss"])
    if "model" in doc:
        kwargs["model"] = ModelConfig(**doc["model"])
    return TrainConfig(**kwargs)


def save_train_config(cfg: TrainConfig, path):
    """Emit the TOML form of a config (documentation / reproducibility aid)."""
    doc = asdict(cfg)
    loss, model = doc.pop("loss"), doc.pop("model")
    lines = ["[train]"]
    for k, v in doc.items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines.append("\n[loss]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in loss.items()]
    lines.append("\n[model]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in model.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    return repr(v)


# ---------------------------------------------------------------------------
# dataset handle


@dataclass
class DatasetHandle:
    root: Path
    records: list
    vocabulary: list

    def __len__(self):
        return len(self.records)

    def load(self, index: int) -> AffordanceSample:
        return datasetio.load_sample(self.root, self.records[index])


def load_dataset(root) -> DatasetHandle:
    root = Path(root)
    records = datasetio.read_manifest(root)
    vocabulary = datasetio.read_vocabulary(root)
    for i, rec in enumerate(records):
        try:
            img_path = root / rec["image"]
            dep_path = root / rec["depth"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"record {i}: missing field {exc}") from exc
        for p in [img_path, dep_path] + [root / rel for rel in rec["masks"].values()]:
            if not p.exists():
                raise ManifestError(f"record {i}: missing file {p}")
        with Image.open(img_path) as im:
            size = im.size
        for label, rel in rec["masks"].items():
            with Image.open(root / rel) as mm:
                if mm.size != size:
                    raise ManifestError(
                        f"record {i}: mask {label!r} size {mm.size} != image {size}"
                    )
        with Image.open(dep_path) as dm:
            if dm.size != size:
                raise ManifestError(f"record {i}: depth size {dm.size} != image {size}")
    return DatasetHandle(root=root, records=records, vocabulary=vocabulary)


# ---------------------------------------------------------------------------
# augmentation


def _resize_image(arr, size, nearest=False):
    im = Image.fromarray(arr)
    return np.asarray(im.resize((size, size), Image.NEAREST if nearest else Image.BILINEAR))


def resize_sample(sample: AffordanceSample, size: int) -> AffordanceSample:
    image = _resize_image(sample.image, size)
    depth = _resize_image((sample.depth * 255).astype(np.uint8), size).astype(np.float64) / 255.0
    masks = {
        k: BinaryMask(_resize_image(m.data.astype(np.uint8) * 255, size, nearest=True) > 127)
        for k, m in sample.masks.items()
    }
    return AffordanceSample(image=image, depth=depth, masks=_disjoint(masks),
                            object_category=sample.object_category,
                            source_clip=sample.source_clip)


def _disjoint(masks):
    # nearest-neighbour resizing keeps masks disjoint, but guard anyway
    seen = None
    out = {}
    for k in masks:
        data = masks[k].data
        if seen is not None:
            data = data & ~seen
        seen = data if seen is None else seen | data
        out[k] = BinaryMask(data)
    return out


def augment(sample: AffordanceSample, cfg: TrainConfig, seed: int) -> AffordanceSample:
    """Resize -> random crop -> random flips, identical across all channels."""
    rng = np.random.default_rng(seed)
    s = resize_sample(sample, cfg.resize)
    margin = cfg.resize - cfg.crop
    x0 = int(rng.integers(0, margin + 1))
    y0 = int(rng.integers(0, margin + 1))
    flip_h = cfg.flip_horizontal and rng.random() < 0.5
    flip_v = cfg.flip_vertical and rng.random() < 0.5

    def apply(arr):
        out = arr[y0:y0 + cfg.crop, x0:x0 + cfg.crop]
        if flip_h:
            out = out[:, ::-1]
        if flip_v:
            out = out[::-1]
        return np.ascontiguousarray(out)

    return AffordanceSample(
        image=apply(s.image),
        depth=apply(s.depth),
        masks={k: BinaryMask(apply(m.data)) for k, m in s.masks.items()},
        object_category=s.object_category,
        source_clip=s.source_clip,
    )


def sample_tensors(sample: AffordanceSample, vocabulary, dtype=torch.float32):
    """(image 3xHxW in [0,1], depth 1xHxW, target LxHxW binary)."""
    image = torch.from_numpy(sample.image.copy()).permute(2, 0, 1).to(dtype) / 255.0
    depth = torch.from_numpy(sample.depth.copy()).unsqueeze(0).to(dtype)
    h, w = sample.depth.shape
    target = torch.zeros(len(vocabulary), h, w, dtype=dtype)
    for i, label in enumerate(vocabulary):
        if label in sample.masks:
            target[i] = torch.from_numpy(sample.masks[label].data.copy()).to(dtype)
    return image, depth, target


def gt_label_map(sample: AffordanceSample, vocabulary) -> np.ndarray:
    out = np.full(sample.depth.shape, BACKGROUND, dtype=np.int64)
    for i, label in enumerate(vocabulary):
        if label in sample.masks:
            out[sample.masks[label].data] = i
    return out


# ---------------------------------------------------------------------------
# training


def train(dataset: DatasetHandle, cfg: TrainConfig, out_dir) -> Path:
    """Optimize the adapters/heads; write per-epoch checkpoints + a log.

    Returns the path of the best-mIoU checkpoint copy (best.npz).
    """
    if len(dataset) == 0:
        raise ManifestError("dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)  # fixed reduction order -> reproducible runs
    model_cfg = ModelConfig(**{**asdict(cfg.model), "num_labels": len(dataset.vocabulary)})
    model = AffordanceModel(model_cfg)
    opt = torch.optim.AdamW(trainable_parameters(model), lr=cfg.learning_rate,
                            weight_decay=cfg.weight_decay)

    log_path = out / "train_log.jsonl"
    log_file = open(log_path, "w")
    best_miou, best_path = -1.0, None

    if cfg.epochs == 0:
        model.eval()
        path = out / "epoch_000.npz"
        save_checkpoint(model, dataset.vocabulary, path)
        shutil.copyfile(path, out / "best.npz")
        log_file.close()
        return out / "best.npz"

    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        t0 = time.monotonic()
        order = np.random.default_rng(stable_seed("order", cfg.seed, epoch)).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            images, depths, targets = [], [], []
            for i in batch_idx:
                s = augment(dataset.load(int(i)), cfg, stable_seed(cfg.seed, epoch, int(i)))
                im, de, tg = sample_tensors(s, dataset.vocabulary)
                images.append(im); depths.append(de); targets.append(tg)
            image = torch.stack(images)
            depth = torch.stack(depths)
            target = torch.stack(targets)

            opt.zero_grad()
            scores = model.score_maps(image, depth if model.dfi_active() else None)
            probs = scores_to_probs(scores, model_cfg.background_threshold,
                                    cfg.prob_temperature)
            loss = total_loss(probs, target, cfg.loss)
            if not torch.isfinite(loss):
                log_file.close()
                raise NonFiniteLoss(f"epoch {epoch}, batch at {start}: loss={loss.item()}")
            loss.backward()
            opt.step()
            losses.append(loss.item())

        model.eval()
        ckpt = out / f"epoch_{epoch:03d}.npz"
        save_checkpoint(model, dataset.vocabulary, ckpt)
        miou = _quick_miou(model, dataset, cfg)
        if miou > best_miou:
            best_miou, best_path = miou, ckpt
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "lr": cfg.learning_rate,
            "miou": miou,
            "wall_time": time.monotonic() - t0,
        }
        log_file.write(json.dumps(record) + "\n")
        log_file.flush()

    log_file.close()
    shutil.copyfile(best_path, out / "best.npz")
    return out / "best.npz"


def _quick_miou(model: AffordanceModel, dataset: DatasetHandle, cfg: TrainConfig,
                max_samples: int = 32) -> float:
    acc = MetricAccumulator(len(dataset.vocabulary))
    idx = np.linspace(0, len(dataset) - 1, min(max_samples, len(dataset))).astype(int)
    with torch.no_grad():
        for i in np.unique(idx):
            s = resize_sample(dataset.load(int(i)), cfg.crop)
            im, de, _ = sample_tensors(s, dataset.vocabulary)
            out = model.segment(im.unsqueeze(0), de.unsqueeze(0) if model.cfg.dfi_enabled != "off" else None)
            acc.add(out.labels, gt_label_map(s, dataset.vocabulary))
    return acc.summary()["miou"]


# ---------------------------------------------------------------------------
# evaluation


def evaluate(dataset: DatasetHandle, checkpoint, out_path=None) -> dict:
    """Per-label and aggregate mIoU/F1/Acc; resize straight to crop size."""
    model, vocab = load_checkpoint(checkpoint)
    if list(vocab) != list(dataset.vocabulary):
        raise VocabularyMismatch(
            f"checkpoint vocabulary {vocab} != dataset vocabulary {dataset.vocabulary}"
        )
    size = model.cfg.input_size
    macro = MetricAccumulator(len(vocab))
    confusion = ConfusionAccumulator(len(vocab))
    use_depth = model.cfg.dfi_enabled == "train_and_infer"
    with torch.no_grad():
        for i in range(len(dataset)):
            s = resize_sample(dataset.load(i), size)
            im, de, _ = sample_tensors(s, vocab)
            out = model.segment(im.unsqueeze(0), de.unsqueeze(0) if use_depth else None)
            gt = gt_label_map(s, vocab)
            macro.add(out.labels, gt)
            confusion.add(out.labels, gt)
    report = macro.summary()
    report["per_label"] = {
        label: {"iou": confusion.iou(i), "f1": confusion.f1(i)}
        for i, label in enumerate(vocab)
    }
    report["vocabulary"] = list(vocab)
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
