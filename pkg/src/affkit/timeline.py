"""Interaction timeline records, mining configuration, and sample container."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ManifestError
from .geometry import BinaryMask, Box


@dataclass(frozen=True)
class Frame:
    """One video frame: RGB uint8 array plus identity within its clip."""

    index: int
    image: np.ndarray
    clip_id: str = ""


@dataclass
class ContactState:
    frame_index: int
    in_contact: bool
    hand_box: Optional[Box] = None
    object_box: Optional[Box] = None
    tool_box: Optional[Box] = None


@dataclass
class InteractionTimeline:
    clip_id: str
    kind: str  # "hand_object" | "tool_object"
    narration_action: str
    states: list[ContactState]
    contact_frame: int
    object_category: str = ""
    frame_paths: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("hand_object", "tool_object"):
            raise ValueError(f"unknown timeline kind {self.kind!r}")
        indices = [s.frame_index for s in self.states]
        if sorted(indices) != indices or len(set(indices)) != len(indices):
            raise ValueError("frame indices must be strictly increasing")
        if self.contact_frame not in indices:
            raise ValueError("contact_frame missing from states")

    def state_at(self, frame_index: int) -> ContactState:
        for s in self.states:
            if s.frame_index == frame_index:
                return s
        raise KeyError(frame_index)


class ObjectAffordanceCatalog:
    """Maps object categories to their affordance labels ('grasp' always present)."""

    def __init__(self, entries: dict[str, list[str]]):
        self.entries = {}
        for category, labels in entries.items():
            labels = list(labels)
            if "grasp" not in labels:
                labels.append("grasp")
            self.entries[category] = labels

    def affordances_for(self, category: str) -> list[str]:
        return self.entries.get(category, ["grasp"])

    def functional_label(self, category: str) -> Optional[str]:
        for label in self.affordances_for(category):
            if label != "grasp":
                return label
        return None


@dataclass
class RansacParams:
    threshold: float = 3.0
    max_iters: int = 2000
    seed: int = 0


@dataclass
class MiningConfig:
    n_contact_points: int = 5
    iou_threshold: float = 0.05
    erosion_radius: int = 3
    ransac: RansacParams = field(default_factory=RansacParams)
    average_before_projection: bool = True

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.n_contact_points < 1:
            raise ValueError("n_contact_points must be >= 1")


@dataclass
class AffordanceSample:
    """One training/eval record: RGB crop, pseudo-depth, per-affordance masks."""

    image: np.ndarray  # H x W x 3 uint8
    depth: np.ndarray  # H x W float in [0, 1]
    masks: dict[str, BinaryMask]
    object_category: str
    source_clip: str

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if self.depth.shape != (h, w):
            raise ValueError("depth dimensions differ from image")
        for label, mask in self.masks.items():
            if mask.data.shape != (h, w):
                raise ValueError(f"mask {label!r} dimensions differ from image")
        labels = list(self.masks)
        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                if (self.masks[a] & self.masks[b]).count() > 0:
                    raise ValueError(f"masks {a!r} and {b!r} overlap")


# ---------------------------------------------------------------------------
# timeline file IO


def _box_to_json(box: Optional[Box]):
    if box is None:
        return None
    return [box.x_min, box.y_min, box.x_max, box.y_max]


def _box_from_json(v):
    return None if v is None else Box(*v)


def timeline_to_json(t: InteractionTimeline) -> dict:
    return {
        "clip_id": t.clip_id,
        "kind": t.kind,
        "narration_action": t.narration_action,
        "contact_frame": t.contact_frame,
        "object_category": t.object_category,
        "states": [
            {
                "frame_index": s.frame_index,
                "in_contact": s.in_contact,
                "hand_box": _box_to_json(s.hand_box),
                "object_box": _box_to_json(s.object_box),
                "tool_box": _box_to_json(s.tool_box),
                "frame_path": t.frame_paths.get(s.frame_index),
            }
            for s in t.states
        ],
    }


def timeline_from_json(doc: dict) -> InteractionTimeline:
    try:
        states = [
            ContactState(
                frame_index=s["frame_index"],
                in_contact=s["in_contact"],
                hand_box=_box_from_json(s.get("hand_box")),
                object_box=_box_from_json(s.get("object_box")),
                tool_box=_box_from_json(s.get("tool_box")),
            )
            for s in doc["states"]
        ]
        frame_paths = {
            s["frame_index"]: s["frame_path"]
            for s in doc["states"]
            if s.get("frame_path")
        }
        return InteractionTimeline(
            clip_id=doc["clip_id"],
            kind=doc["kind"],
            narration_action=doc["narration_action"],
            states=states,
            contact_frame=doc["contact_frame"],
            object_category=doc.get("object_category", ""),
            frame_paths=frame_paths,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad timeline document: {exc}") from exc


def save_timeline(t: InteractionTimeline, path):
    Path(path).write_text(json.dumps(timeline_to_json(t), indent=2, sort_keys=True))


def load_timeline(path) -> InteractionTimeline:
    return timeline_from_json(json.loads(Path(path).read_text()))
