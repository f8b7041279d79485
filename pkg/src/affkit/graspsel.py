"""Affordance-oriented task orchestration: scene parsing, per-object
affordance inference, task-conditioned object selection, and grasp filtering
within affordance masks. Providers (detector, grasp generator) are pluggable;
deterministic mocks back the synthetic corpus."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import datasetio
from .errors import (
    NoCapableObject,
    NoDetections,
    NoValidGrasp,
    TaskStageError,
    VocabularyMismatch,
)
from .geometry import BinaryMask, Box, Point2
from .model import load_checkpoint, segmentation_from_scores
from .trainer import sample_tensors
from .timeline import AffordanceSample

MODES = ("use_tool", "handover")
GRASP_LABEL = "grasp"


@dataclass
class TaskSpec:
    verb: str
    target: str
    mode: str = "use_tool"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def parse(cls, text: str, mode: str = "use_tool") -> "TaskSpec":
        parts = text.split()
        if len(parts) != 2:
            raise ValueError(f"task must be '<verb> <target>', got {text!r}")
        return cls(verb=parts[0], target=parts[1], mode=mode)


@dataclass
class SceneObject:
    box: Box               # detection box in scene coordinates
    crop: np.ndarray       # image crop matching the box
    depth_crop: np.ndarray
    category_hint: str = ""
    is_target: bool = False
    index: int = 0
    scores: dict = field(default_factory=dict)  # label -> score map (crop size)
    labels: np.ndarray = None                   # crop-size label map, -1 bg


@dataclass
class GraspProposal:
    translation: tuple       # meters, scene-frame placeholder
    rotation: tuple          # unit quaternion (x, y, z, w)
    score: float
    contact_pixel: Point2    # scene coordinates

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must be unit-norm")
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")


# ---------------------------------------------------------------------------
# deterministic mock providers


class MockSceneDetector:
    """Oracle detector over a synthetic grasp scene record."""

    def __init__(self, scene_spec):
        self.spec = scene_spec

    def __call__(self, image, vocabulary):
        dets = []
        for obj in self.spec.objects:
            x0, y0, x1, y1 = obj["crop_box"]
            dets.append((Box(x0, y0, x1, y1), obj["category"]))
        wanted = set(vocabulary)
        if "objects" in wanted:
            return dets
        return [(b, c) for b, c in dets if c in wanted]


class MockGraspProvider:
    """Proposals at the mask centroid plus a jittered grid over its bounding
    box, scored by closeness to the centroid. Deterministic in its inputs."""

    def __init__(self, grid_step: int = 4):
        self.grid_step = grid_step

    def __call__(self, depth, mask: BinaryMask):
        data = mask.data
        ys, xs = np.nonzero(data)
        if len(xs) == 0:
            return []
        cx, cy = float(xs.mean()), float(ys.mean())
        rng = np.random.default_rng(zlib.crc32(data.tobytes()))
        points = [(cx, cy)]
        for y in range(int(ys.min()), int(ys.max()) + 1, self.grid_step):
            for x in range(int(xs.min()), int(xs.max()) + 1, self.grid_step):
                jx = x + float(rng.uniform(-1, 1))
                jy = y + float(rng.uniform(-1, 1))
                points.append((jx, jy))
        h, w = data.shape
        proposals = []
        for px, py in points:
            px = min(max(px, 0.0), w - 1.0)
            py = min(max(py, 0.0), h - 1.0)
            d = float(depth[int(round(py)), int(round(px))]) if depth is not None else 0.0
            dist = ((px - cx) ** 2 + (py - cy) ** 2) ** 0.5
            proposals.append(
                GraspProposal(
                    translation=(px * 1e-3, py * 1e-3, d),
                    rotation=(0.0, 0.0, 0.0, 1.0),
                    score=1.0 / (1.0 + dist),
                    contact_pixel=Point2(px, py),
                )
            )
        return proposals


# ---------------------------------------------------------------------------
# pipeline stages


def parse_scene(image, depth, task: TaskSpec, providers) -> list:
    """One SceneObject per detection; the task target is flagged so it never
    becomes a tool candidate."""
    detections = providers.scene_detector(image, ["objects"])
    if not detections:
        raise NoDetections("scene detector returned no objects")
    h, w = image.shape[:2]
    objects = []
    for i, (box, category) in enumerate(detections):
        x0, y0 = max(int(box.x_min), 0), max(int(box.y_min), 0)
        x1, y1 = min(int(box.x_max) + 1, w), min(int(box.y_max) + 1, h)
        objects.append(
            SceneObject(
                box=box,
                crop=image[y0:y1, x0:x1],
                depth_crop=depth[y0:y1, x0:x1] if depth is not None else None,
                category_hint=category,
                is_target=(category == task.target),
                index=i,
            )
        )
    return objects


def segment_objects(objects, model, vocabulary, verb):
    """Run the affordance model on each object crop, in place."""
    if verb not in vocabulary:
        raise VocabularyMismatch(f"verb {verb!r} not in vocabulary {vocabulary}")
    size = model.cfg.input_size
    use_depth = model.cfg.dfi_enabled == "train_and_infer"
    from .trainer import resize_sample  # local import avoids a cycle at load
    for obj in objects:
        depth = obj.depth_crop if obj.depth_crop is not None else np.zeros(obj.crop.shape[:2])
        sample = AffordanceSample(image=obj.crop, depth=depth, masks={},
                                  object_category=obj.category_hint, source_clip="")
        resized = resize_sample(sample, size)
        im, de, _ = sample_tensors(resized, vocabulary)
        with torch.no_grad():
            out = model.segment(im.unsqueeze(0), de.unsqueeze(0) if use_depth else None)
        ch, cw = obj.crop.shape[:2]
        obj.scores = {
            label: _resize_map(out.scores[i], ch, cw) for i, label in enumerate(vocabulary)
        }
        obj.labels = _resize_labels(out.labels, ch, cw)
    return objects


def _resize_map(arr, h, w):
    t = torch.from_numpy(np.ascontiguousarray(arr))[None, None]
    return torch.nn.functional.interpolate(t, size=(h, w), mode="bilinear",
                                           align_corners=False)[0, 0].numpy()


def _resize_labels(labels, h, w):
    t = torch.from_numpy(np.ascontiguousarray(labels)).float()[None, None]
    out = torch.nn.functional.interpolate(t, size=(h, w), mode="nearest")[0, 0]
    return out.long().numpy()


def select_object(objects, verb: str, tau: float) -> SceneObject:
    """Largest verb-capable affordance area wins; certainty, then lowest
    detection index break ties. The task target is never a candidate."""
    best_key, best_obj = None, None
    for obj in objects:
        if obj.is_target:
            continue
        score_map = obj.scores[verb]
        capable = score_map >= tau
        area = int(np.count_nonzero(capable))
        if area == 0:
            continue
        certainty = float(score_map[capable].mean())
        key = (area, certainty, -obj.index)
        if best_key is None or key > best_key:
            best_key, best_obj = key, obj
    if best_obj is None:
        raise NoCapableObject(f"no object offers affordance {verb!r} at tau={tau}")
    return best_obj


def object_mask(obj: SceneObject, label: str, vocabulary) -> BinaryMask:
    idx = vocabulary.index(label)
    return BinaryMask(obj.labels == idx)


def plan_grasp(obj: SceneObject, task: TaskSpec, providers, vocabulary) -> GraspProposal:
    """Grasp within the graspable mask (use_tool) or the functional mask
    (handover: the functional part is offered to the robot, leaving the
    handle free for the receiver)."""
    label = GRASP_LABEL if task.mode == "use_tool" else task.verb
    mask = object_mask(obj, label, vocabulary)
    if mask.is_empty():
        raise NoValidGrasp(f"object {obj.index} has an empty {label!r} mask")
    proposals = providers.grasp_provider(obj.depth_crop, mask)
    x0, y0 = int(obj.box.x_min), int(obj.box.y_min)
    survivors = []
    for p in proposals:
        px, py = int(round(p.contact_pixel.x)), int(round(p.contact_pixel.y))
        if 0 <= py < mask.data.shape[0] and 0 <= px < mask.data.shape[1] and mask.data[py, px]:
            survivors.append(
                GraspProposal(
                    translation=p.translation,
                    rotation=p.rotation,
                    score=p.score,
                    contact_pixel=Point2(p.contact_pixel.x + x0, p.contact_pixel.y + y0),
                )
            )
    if not survivors:
        raise NoValidGrasp(f"all proposals fell outside the {label!r} mask")
    return max(survivors, key=lambda p: p.score)


def run_task(image, depth, task: TaskSpec, checkpoint, providers,
             out_dir=None) -> dict:
    """Full pipeline to a plan record; never issues motor commands."""
    model, vocabulary = load_checkpoint(checkpoint)

    try:
        objects = parse_scene(image, depth, task, providers)
    except NoDetections as exc:
        raise TaskStageError("detect", exc) from exc
    try:
        segment_objects(objects, model, vocabulary, task.verb)
    except VocabularyMismatch as exc:
        raise TaskStageError("segment", exc) from exc
    try:
        selected = select_object(objects, task.verb, model.cfg.background_threshold)
    except NoCapableObject as exc:
        raise TaskStageError("select", exc) from exc
    try:
        grasp = plan_grasp(selected, task, providers, vocabulary)
    except NoValidGrasp as exc:
        raise TaskStageError("plan", exc) from exc

    record = {
        "task": {"verb": task.verb, "target": task.target, "mode": task.mode},
        "selected": {
            "index": selected.index,
            "category_hint": selected.category_hint,
            "box": [selected.box.x_min, selected.box.y_min,
                    selected.box.x_max, selected.box.y_max],
        },
        "grasp": {
            "translation": list(grasp.translation),
            "rotation": list(grasp.rotation),
            "score": grasp.score,
            "contact_pixel": [grasp.contact_pixel.x, grasp.contact_pixel.y],
        },
        "provider": type(providers.grasp_provider).__name__,
        "vocabulary": list(vocabulary),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        mask_paths = {}
        for label in vocabulary:
            rel = f"mask_{label}.png"
            datasetio.save_mask(object_mask(selected, label, vocabulary), out / rel)
            mask_paths[label] = rel
        record["masks"] = mask_paths
        datasetio.save_image(render_overlay(image, selected, vocabulary, grasp),
                             out / "overlay.png")
        record["overlay"] = "overlay.png"
        (out / "plan.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return record


OVERLAY_COLORS = [(255, 64, 64), (64, 255, 64), (64, 64, 255), (255, 255, 64)]


def render_overlay(image, obj: SceneObject, vocabulary, grasp=None) -> np.ndarray:
    """Scene image with the selected object's affordance masks tinted and the
    grasp contact pixel marked; supports manual inspection of plans."""
    out = image.copy()
    x0, y0 = int(obj.box.x_min), int(obj.box.y_min)
    for i, label in enumerate(vocabulary):
        mask = obj.labels == i
        color = np.array(OVERLAY_COLORS[i % len(OVERLAY_COLORS)], dtype=np.float64)
        ys, xs = np.nonzero(mask)
        out[ys + y0, xs + x0] = (0.5 * out[ys + y0, xs + x0] + 0.5 * color).astype(np.uint8)
    if grasp is not None:
        gx, gy = int(round(grasp.contact_pixel.x)), int(round(grasp.contact_pixel.y))
        h, w = out.shape[:2]
        for dx in range(-2, 3):
            for dy in (0,):
                if 0 <= gy + dy < h and 0 <= gx + dx < w:
                    out[gy + dy, gx + dx] = (255, 255, 255)
        for dy in range(-2, 3):
            if 0 <= gy + dy < h and 0 <= gx < w:
                out[gy + dy, gx] = (255, 255, 255)
    return out


@dataclass
class Providers:
    scene_detector: object
    grasp_provider: object
