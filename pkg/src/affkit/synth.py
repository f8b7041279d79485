"""Synthetic interaction scenes with known ground truth.

Each mining scene is a small planar world: a two-part tool (handle + head),
a hand clip where the hand grabs the handle, and a tool clip where the tool
approaches a target object. All motion is pure translation with known
offsets, so every quantity the mining pipeline recovers has an exact oracle.

The stub perception clients defined here stand in for the external detector,
segmenter, depth, correspondence, and matching models. They are deterministic
functions of their inputs (plus the scene record they were built from).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import BinaryMask, Box, Point2, PointSet
from .timeline import (
    AffordanceSample,
    ContactState,
    Frame,
    InteractionTimeline,
)

BACKGROUND = (30, 30, 30)
HAND_COLOR = (224, 172, 140)
TARGET_COLOR = (160, 120, 60)
CAKE_COLOR = (240, 150, 190)

HANDLE_PALETTE = [(200, 60, 40), (60, 120, 210), (220, 160, 40), (120, 200, 80)]
HEAD_PALETTE = [(185, 185, 195), (90, 200, 200), (200, 90, 200), (240, 240, 120)]

DEPTH_BACKGROUND = 0.95
DEPTH_HAND = 0.15
DEPTH_HANDLE = 0.65
DEPTH_HEAD = 0.30
DEPTH_TARGET = 0.50


def stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


@dataclass(frozen=True)
class Rect:
    """Half-open integer pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def shift(self, dx, dy):
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def to_box(self) -> Box:
        return Box(self.x0, self.y0, self.x1 - 1, self.y1 - 1)

    def union(self, other):
        return Rect(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    def intersect(self, other):
        return Rect(
            max(self.x0, other.x0),
            max(self.y0, other.y0),
            min(self.x1, other.x1),
            min(self.y1, other.y1),
        )

    def is_empty(self):
        return self.x0 >= self.x1 or self.y0 >= self.y1

    def pixel_centroid(self):
        return ((self.x0 + self.x1 - 1) / 2.0, (self.y0 + self.y1 - 1) / 2.0)

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


def fill_rect(img, rect: Rect, color):
    img[max(rect.y0, 0):max(rect.y1, 0), max(rect.x0, 0):max(rect.x1, 0)] = color


# ---------------------------------------------------------------------------
# mining scene


@dataclass
class SceneSpec:
    scene_id: str
    size: int = 96
    axis: int = 0          # 0 = bar runs along x, 1 = along y
    head_dir: int = 1      # +1: head toward increasing coordinate
    handle_rect: Rect = None  # hand-clip base position (frames before contact)
    head_rect: Rect = None
    handle_color: tuple = HANDLE_PALETTE[0]
    head_color: tuple = HEAD_PALETTE[0]
    category: str = "knife"
    verb: str = "cut"
    target_category: str = "bread"
    hand_delta: tuple = (0, 0)
    hand_rect: Rect = None  # at contact-frame position
    hand_frames: int = 6
    hand_contact: int = 3
    tool_handle_rect: Rect = None  # tool-clip base position (frame 0)
    tool_head_rect: Rect = None
    tool_offsets: list = field(default_factory=list)  # per-frame (dx, dy)
    tool_contact: int = 5
    target_rect: Rect = None
    matcher_grid_step: int = 16
    matcher_outlier_frac: float = 0.25
    gt_grasp_point_pre: tuple = (0.0, 0.0)

    @property
    def hand_clip_id(self):
        return f"{self.scene_id}_hand"

    @property
    def tool_clip_id(self):
        return f"{self.scene_id}_tool"

    def color_depth_table(self):
        return [
            (BACKGROUND, DEPTH_BACKGROUND),
            (HAND_COLOR, DEPTH_HAND),
            (self.handle_color, DEPTH_HANDLE),
            (self.head_color, DEPTH_HEAD),
            (TARGET_COLOR, DEPTH_TARGET),
        ]

    def hand_offset(self, i):
        d = self.hand_delta
        return (d[0], d[1]) if i >= self.hand_contact else (0, 0)

    def to_json(self):
        return {
            "scene_id": self.scene_id,
            "size": self.size,
            "axis": self.axis,
            "head_dir": self.head_dir,
            "handle_rect": self.handle_rect.as_list(),
            "head_rect": self.head_rect.as_list(),
            "handle_color": list(self.handle_color),
            "head_color": list(self.head_color),
            "category": self.category,
            "verb": self.verb,
            "target_category": self.target_category,
            "hand_delta": list(self.hand_delta),
            "hand_rect": self.hand_rect.as_list(),
            "hand_frames": self.hand_frames,
            "hand_contact": self.hand_contact,
            "tool_handle_rect": self.tool_handle_rect.as_list(),
            "tool_head_rect": self.tool_head_rect.as_list(),
            "tool_offsets": [list(o) for o in self.tool_offsets],
            "tool_contact": self.tool_contact,
            "target_rect": self.target_rect.as_list(),
            "matcher_grid_step": self.matcher_grid_step,
            "matcher_outlier_frac": self.matcher_outlier_frac,
            "gt_grasp_point_pre": list(self.gt_grasp_point_pre),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            scene_id=doc["scene_id"],
            size=doc["size"],
            axis=doc["axis"],
            head_dir=doc["head_dir"],
            handle_rect=Rect(*doc["handle_rect"]),
            head_rect=Rect(*doc["head_rect"]),
            handle_color=tuple(doc["handle_color"]),
            head_color=tuple(doc["head_color"]),
            category=doc["category"],
            verb=doc["verb"],
            target_category=doc["target_category"],
            hand_delta=tuple(doc["hand_delta"]),
            hand_rect=Rect(*doc["hand_rect"]),
            hand_frames=doc["hand_frames"],
            hand_contact=doc["hand_contact"],
            tool_handle_rect=Rect(*doc["tool_handle_rect"]),
            tool_head_rect=Rect(*doc["tool_head_rect"]),
            tool_offsets=[tuple(o) for o in doc["tool_offsets"]],
            tool_contact=doc["tool_contact"],
            target_rect=Rect(*doc["target_rect"]),
            matcher_grid_step=doc["matcher_grid_step"],
            matcher_outlier_frac=doc["matcher_outlier_frac"],
            gt_grasp_point_pre=tuple(doc["gt_grasp_point_pre"]),
        )


def _place_bar(x0, y0, axis, head_dir, handle_len=18, head_len=22, width=14):
    """Bar anchored at (x0, y0) (top-left of its bounding rect)."""
    total = handle_len + head_len
    if axis == 0:
        if head_dir > 0:
            handle = Rect(x0, y0, x0 + handle_len, y0 + width)
            head = Rect(x0 + handle_len, y0, x0 + total, y0 + width)
        else:
            head = Rect(x0, y0, x0 + head_len, y0 + width)
            handle = Rect(x0 + head_len, y0, x0 + total, y0 + width)
    else:
        if head_dir > 0:
            handle = Rect(x0, y0, x0 + width, y0 + handle_len)
            head = Rect(x0, y0 + handle_len, x0 + width, y0 + total)
        else:
            head = Rect(x0, y0, x0 + width, y0 + head_len)
            handle = Rect(x0, y0 + head_len, x0 + width, y0 + total)
    return handle, head


def make_scene(scene_id: str, seed: int) -> SceneSpec:
    rng = np.random.default_rng(seed)
    axis = int(rng.integers(0, 2))
    head_dir = int(rng.choice([-1, 1]))
    total, width = 40, 14

    size = 96
    margin = 12
    along_max = size - margin - total
    cross_max = size - margin - width
    if axis == 0:
        x0 = int(rng.integers(margin, along_max + 1))
        y0 = int(rng.integers(margin, cross_max + 1))
    else:
        x0 = int(rng.integers(margin, cross_max + 1))
        y0 = int(rng.integers(margin, along_max + 1))

    handle, head = _place_bar(x0, y0, axis, head_dir)

    delta = (int(rng.integers(-8, 9)), int(rng.integers(-8, 9)))
    if delta == (0, 0):
        delta = (4, -3)

    # hand covers the tail end of the handle: 6 px deep along the bar axis,
    # inset 2 px on each side across it
    if axis == 0:
        tail_x = handle.x0 if head_dir > 0 else handle.x1
        hand = Rect(tail_x - 6, handle.y0 + 2, tail_x + 6, handle.y1 - 2)
    else:
        tail_y = handle.y0 if head_dir > 0 else handle.y1
        hand = Rect(handle.x0 + 2, tail_y - 6, handle.x1 - 2, tail_y + 6)
    hand = hand.shift(*delta)

    # tool clip: bar travels along its head axis toward a static target
    gaps = [24, 18, 12, 4, -6, -8]
    head_len, target_side = 22, 22
    start_along = 5 if head_dir > 0 else size - 5 - total
    cross = (size - width) // 2
    if axis == 0:
        tool_handle, tool_head = _place_bar(start_along, cross, axis, head_dir)
    else:
        tool_handle, tool_head = _place_bar(cross, start_along, axis, head_dir)
    lead = start_along + total if head_dir > 0 else start_along
    if head_dir > 0:
        target_along = lead + gaps[0]
    else:
        target_along = lead - gaps[0] - target_side
    target_cross = cross + (width - target_side) // 2
    if axis == 0:
        target = Rect(target_along, target_cross, target_along + target_side, target_cross + target_side)
    else:
        target = Rect(target_cross, target_along, target_cross + target_side, target_along + target_side)
    offsets = []
    for g in gaps:
        step = head_dir * (gaps[0] - g)
        offsets.append((step, 0) if axis == 0 else (0, step))

    spec = SceneSpec(
        scene_id=scene_id,
        size=size,
        axis=axis,
        head_dir=head_dir,
        handle_rect=handle,
        head_rect=head,
        handle_color=tuple(int(c) for c in HANDLE_PALETTE[rng.integers(len(HANDLE_PALETTE))]),
        head_color=tuple(int(c) for c in HEAD_PALETTE[rng.integers(len(HEAD_PALETTE))]),
        hand_delta=delta,
        hand_rect=hand,
        tool_handle_rect=tool_handle,
        tool_head_rect=tool_head,
        tool_offsets=offsets,
        target_rect=target,
    )

    bar_contact = handle.union(head).shift(*delta)
    grab = hand.intersect(bar_contact)
    cx, cy = grab.pixel_centroid()
    spec.gt_grasp_point_pre = (cx - delta[0], cy - delta[1])
    return spec


def render_hand_frame(spec: SceneSpec, i: int) -> np.ndarray:
    img = np.empty((spec.size, spec.size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    off = spec.hand_offset(i)
    fill_rect(img, spec.handle_rect.shift(*off), spec.handle_color)
    fill_rect(img, spec.head_rect.shift(*off), spec.head_color)
    if i >= spec.hand_contact:
        fill_rect(img, spec.hand_rect, HAND_COLOR)
    return img


def render_tool_frame(spec: SceneSpec, i: int) -> np.ndarray:
    img = np.empty((spec.size, spec.size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    fill_rect(img, spec.target_rect, TARGET_COLOR)
    off = spec.tool_offsets[i]
    fill_rect(img, spec.tool_handle_rect.shift(*off), spec.handle_color)
    fill_rect(img, spec.tool_head_rect.shift(*off), spec.head_color)
    return img


def render_depth(spec: SceneSpec, image: np.ndarray) -> np.ndarray:
    depth = np.full(image.shape[:2], DEPTH_BACKGROUND, dtype=np.float64)
    for color, d in spec.color_depth_table():
        depth[np.all(image == np.array(color, dtype=np.uint8), axis=2)] = d
    return depth


def hand_timeline(spec: SceneSpec) -> InteractionTimeline:
    states = []
    for i in range(spec.hand_frames):
        off = spec.hand_offset(i)
        bar = spec.handle_rect.union(spec.head_rect).shift(*off)
        contact = i >= spec.hand_contact
        states.append(
            ContactState(
                frame_index=i,
                in_contact=contact,
                hand_box=spec.hand_rect.to_box() if contact else None,
                object_box=bar.to_box(),
            )
        )
    return InteractionTimeline(
        clip_id=spec.hand_clip_id,
        kind="hand_object",
        narration_action="take",
        states=states,
        contact_frame=spec.hand_contact,
        object_category=spec.category,
    )


def tool_timeline(spec: SceneSpec) -> InteractionTimeline:
    states = []
    for i, off in enumerate(spec.tool_offsets):
        bar = spec.tool_handle_rect.union(spec.tool_head_rect).shift(*off)
        states.append(
            ContactState(
                frame_index=i,
                in_contact=i >= spec.tool_contact - 1,
                object_box=spec.target_rect.to_box(),
                tool_box=bar.to_box(),
            )
        )
    return InteractionTimeline(
        clip_id=spec.tool_clip_id,
        kind="tool_object",
        narration_action=spec.verb,
        states=states,
        contact_frame=spec.tool_contact,
        object_category=spec.category,
    )


class SceneFrames:
    """Frame accessor for one scene; renders deterministically on demand."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec

    def hand(self, i) -> Frame:
        return Frame(index=i, image=render_hand_frame(self.spec, i), clip_id=self.spec.hand_clip_id)

    def tool(self, i) -> Frame:
        return Frame(index=i, image=render_tool_frame(self.spec, i), clip_id=self.spec.tool_clip_id)

    def for_clip(self, clip_id, i) -> Frame:
        if clip_id == self.spec.hand_clip_id:
            return self.hand(i)
        if clip_id == self.spec.tool_clip_id:
            return self.tool(i)
        raise KeyError(clip_id)


# ---------------------------------------------------------------------------
# stub perception clients


def _round_point(p: Point2):
    return int(round(p.x)), int(round(p.y))


def _component_containing(mask: np.ndarray, x, y) -> np.ndarray:
    labels, _ = ndimage.label(mask)
    lab = labels[y, x]
    if lab == 0:
        return np.zeros_like(mask)
    return labels == lab


class SyntheticClients:
    """Deterministic stand-ins for the external perception models.

    Segmentation and depth are pure functions of the frame pixels (plus the
    scene's color conventions); the detector and matcher answer from the
    scene record, which is what an oracle-backed stub is for.
    """

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self._timelines = {
            spec.hand_clip_id: hand_timeline(spec),
            spec.tool_clip_id: tool_timeline(spec),
        }

    # --- detector -----------------------------------------------------
    def hand_object_detector(self, frame: Frame) -> ContactState:
        return self._timelines[frame.clip_id].state_at(frame.index)

    # --- promptable segmentation ---------------------------------------
    def point_segmenter(self, frame: Frame, positive: PointSet, negative: PointSet) -> BinaryMask:
        img = frame.image
        px, py = _round_point(positive[0])
        h, w = img.shape[:2]
        px, py = min(max(px, 0), w - 1), min(max(py, 0), h - 1)
        color = img[py, px]

        hand = np.all(img == np.array(HAND_COLOR, np.uint8), axis=2)
        if hand[py, px]:
            return BinaryMask(_component_containing(hand, px, py))

        bg = np.all(img == np.array(BACKGROUND, np.uint8), axis=2)
        foreground = ~bg & ~hand
        instance = _component_containing(foreground, px, py)
        same_color = np.all(img == color, axis=2)
        pos_part = _component_containing(same_color & instance, px, py)

        mask = instance.copy()
        for q in negative:
            qx, qy = _round_point(q)
            if not (0 <= qx < w and 0 <= qy < h) or not instance[qy, qx]:
                continue
            if pos_part[qy, qx]:
                # positive and negative fall in the same part: cannot split,
                # answer with the part itself
                return BinaryMask(pos_part)
            neg_color = img[qy, qx]
            neg_part = _component_containing(np.all(img == neg_color, axis=2) & instance, qx, qy)
            mask &= ~neg_part
        return BinaryMask(mask)

    # --- open-vocabulary detection --------------------------------------
    def openvocab_detector(self, frame: Frame, vocabulary):
        spec = self.spec
        detections = []
        if frame.clip_id == spec.hand_clip_id:
            off = spec.hand_offset(frame.index)
            bar = spec.handle_rect.union(spec.head_rect).shift(*off)
            detections.append((bar.to_box(), spec.category))
        else:
            off = spec.tool_offsets[frame.index]
            bar = spec.tool_handle_rect.union(spec.tool_head_rect).shift(*off)
            detections.append((bar.to_box(), spec.category))
            detections.append((spec.target_rect.to_box(), spec.target_category))
        wanted = set(vocabulary)
        if "objects" in wanted:
            return detections
        return [(b, c) for b, c in detections if c in wanted]

    # --- correspondence ------------------------------------------------
    def correspondence_mapper(self, frame_a, box_a: Box, point_a: Point2, frame_b, box_b: Box) -> Point2:
        u = (point_a.x - box_a.x_min) / max(box_a.width, 1e-9)
        v = (point_a.y - box_a.y_min) / max(box_a.height, 1e-9)
        return Point2(box_b.x_min + u * box_b.width, box_b.y_min + v * box_b.height)

    # --- monocular depth -------------------------------------------------
    def depth_estimator(self, frame: Frame) -> np.ndarray:
        return render_depth(self.spec, frame.image)

    # --- feature matching ------------------------------------------------
    def matcher(self, frame_a: Frame, frame_b: Frame):
        spec = self.spec
        if frame_a.clip_id != frame_b.clip_id:
            raise ValueError("matcher stub only pairs frames within one clip")
        if frame_a.clip_id == spec.hand_clip_id:
            off_a, off_b = spec.hand_offset(frame_a.index), spec.hand_offset(frame_b.index)
        else:
            off_a = spec.tool_offsets[frame_a.index]
            off_b = spec.tool_offsets[frame_b.index]
        step = spec.matcher_grid_step
        coords = np.arange(step // 2, spec.size - step // 4, step)
        gx, gy = np.meshgrid(coords, coords)
        src = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(float)
        dst = src + np.array([off_b[0] - off_a[0], off_b[1] - off_a[1]], dtype=float)

        rng = np.random.default_rng(
            stable_seed(spec.scene_id, frame_a.clip_id, frame_a.index, frame_b.index)
        )
        n_out = int(round(spec.matcher_outlier_frac * len(src)))
        if n_out:
            idx = rng.choice(len(src), size=n_out, replace=False)
            dst[idx] = rng.uniform(0, spec.size - 1, size=(n_out, 2))
        return PointSet.from_array(src), PointSet.from_array(dst)


# ---------------------------------------------------------------------------
# training samples (desk-scale dataset, drawn directly with ground truth)


def make_training_sample(index: int, seed: int, size: int = 64, ambiguous_frac: float = 0.3) -> AffordanceSample:
    """One two-part bar on a plain background, parts snapped to an 8 px grid.

    A fraction of samples uses one color for both parts and a symmetric
    split, so RGB alone cannot tell handle from head; the depth map always
    can. This is what makes depth injection measurably useful at toy scale.
    """
    rng = np.random.default_rng(stable_seed("train", seed, index))
    grid = 8
    width, total = 2 * grid, 6 * grid
    axis = int(rng.integers(0, 2))
    head_dir = int(rng.choice([-1, 1]))
    ambiguous = rng.random() < ambiguous_frac

    if ambiguous:
        handle_len = 3 * grid
        palette = HANDLE_PALETTE + HEAD_PALETTE
        handle_color = head_color = tuple(int(c) for c in palette[rng.integers(len(palette))])
    else:
        handle_len = int(rng.choice([2, 3, 4])) * grid
        handle_color = tuple(int(c) for c in HANDLE_PALETTE[rng.integers(len(HANDLE_PALETTE))])
        head_color = tuple(int(c) for c in HEAD_PALETTE[rng.integers(len(HEAD_PALETTE))])
    head_len = total - handle_len

    along0 = int(rng.integers(0, (size - total) // grid + 1)) * grid
    cross0 = int(rng.integers(0, (size - width) // grid + 1)) * grid
    if axis == 0:
        x0, y0 = along0, cross0
    else:
        x0, y0 = cross0, along0
    handle, head = _place_bar(x0, y0, axis, head_dir, handle_len, head_len, width)

    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = BACKGROUND
    fill_rect(image, handle, handle_color)
    fill_rect(image, head, head_color)

    depth = np.full((size, size), DEPTH_BACKGROUND)
    ys, xs = np.mgrid[0:size, 0:size]
    in_handle = (xs >= handle.x0) & (xs < handle.x1) & (ys >= handle.y0) & (ys < handle.y1)
    in_head = (xs >= head.x0) & (xs < head.x1) & (ys >= head.y0) & (ys < head.y1)
    depth[in_handle] = DEPTH_HANDLE
    depth[in_head] = DEPTH_HEAD

    return AffordanceSample(
        image=image,
        depth=depth,
        masks={"grasp": BinaryMask(in_handle), "cut": BinaryMask(in_head)},
        object_category="knife",
        source_clip=f"synth_{index:05d}",
    )


# ---------------------------------------------------------------------------
# grasp scenes


@dataclass
class GraspSceneSpec:
    scene_id: str
    size: int
    objects: list   # dicts: category, center, crop_box, parts [{rect, color, depth, part}]
    verb: str
    target_category: str
    capable_index: int

    def to_json(self):
        return {
            "scene_id": self.scene_id,
            "size": self.size,
            "objects": self.objects,
            "verb": self.verb,
            "target_category": self.target_category,
            "capable_index": self.capable_index,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def make_grasp_scene(scene_id: str, seed: int, n_distractors: int = 2) -> GraspSceneSpec:
    rng = np.random.default_rng(stable_seed("grasp", seed, scene_id))
    size = 128
    centers = [(32, 32), (96, 32), (32, 96), (96, 96)]
    rng.shuffle(centers)
    jitter = lambda: int(rng.choice([-8, 0, 8]))

    objects = []

    # the capable tool, laid out exactly like a training sample inside its crop
    cx, cy = centers[0]
    grid, width, total = 8, 16, 48
    axis = int(rng.integers(0, 2))
    head_dir = int(rng.choice([-1, 1]))
    handle_len = int(rng.choice([2, 3, 4])) * grid
    ox, oy = cx - 32, cy - 32
    along0 = int(rng.integers(0, (64 - total) // grid + 1)) * grid
    cross0 = int(rng.integers(0, (64 - width) // grid + 1)) * grid
    if axis == 0:
        x0, y0 = ox + along0, oy + cross0
    else:
        x0, y0 = ox + cross0, oy + along0
    handle, head = _place_bar(x0, y0, axis, head_dir, handle_len, total - handle_len, width)
    handle_color = HANDLE_PALETTE[rng.integers(len(HANDLE_PALETTE))]
    head_color = HEAD_PALETTE[rng.integers(len(HEAD_PALETTE))]
    objects.append(
        {
            "category": "knife",
            "center": [cx, cy],
            "crop_box": [cx - 32, cy - 32, cx + 31, cy + 31],
            "parts": [
                {"rect": handle.as_list(), "color": list(handle_color), "depth": DEPTH_HANDLE, "part": "handle"},
                {"rect": head.as_list(), "color": list(head_color), "depth": DEPTH_HEAD, "part": "head"},
            ],
        }
    )

    # the task target
    cx, cy = centers[1]
    side = 24
    r = Rect(cx - side // 2 + jitter(), cy - side // 2 + jitter(), 0, 0)
    r = Rect(r.x0, r.y0, r.x0 + side, r.y0 + side)
    objects.append(
        {
            "category": "cake",
            "center": [cx, cy],
            "crop_box": [cx - 32, cy - 32, cx + 31, cy + 31],
            "parts": [{"rect": r.as_list(), "color": list(CAKE_COLOR), "depth": DEPTH_TARGET, "part": None}],
        }
    )

    for k in range(min(n_distractors, 2)):
        cx, cy = centers[2 + k]
        side = int(rng.choice([16, 24]))
        color = HANDLE_PALETTE[rng.integers(len(HANDLE_PALETTE))]
        r = Rect(cx - side // 2 + jitter(), cy - side // 2 + jitter(), 0, 0)
        r = Rect(r.x0, r.y0, r.x0 + side, r.y0 + side)
        objects.append(
            {
                "category": "object",
                "center": [cx, cy],
                "crop_box": [cx - 32, cy - 32, cx + 31, cy + 31],
                "parts": [{"rect": r.as_list(), "color": list(color), "depth": DEPTH_HANDLE, "part": None}],
            }
        )

    return GraspSceneSpec(
        scene_id=scene_id,
        size=size,
        objects=objects,
        verb="cut",
        target_category="cake",
        capable_index=0,
    )


def render_grasp_scene(spec: GraspSceneSpec):
    image = np.empty((spec.size, spec.size, 3), dtype=np.uint8)
    image[:] = BACKGROUND
    depth = np.full((spec.size, spec.size), DEPTH_BACKGROUND)
    for obj in spec.objects:
        for part in obj["parts"]:
            r = Rect(*part["rect"])
            fill_rect(image, r, tuple(part["color"]))
            depth[r.y0:r.y1, r.x0:r.x1] = part["depth"]
    return image, depth


def grasp_scene_gt_masks(spec: GraspSceneSpec):
    """Ground-truth handle/head masks of the capable object, scene coords."""
    obj = spec.objects[spec.capable_index]
    handle = np.zeros((spec.size, spec.size), dtype=bool)
    head = np.zeros((spec.size, spec.size), dtype=bool)
    for part in obj["parts"]:
        r = Rect(*part["rect"])
        if part["part"] == "handle":
            handle[r.y0:r.y1, r.x0:r.x1] = True
        elif part["part"] == "head":
            head[r.y0:r.y1, r.x0:r.x1] = True
    return BinaryMask(handle), BinaryMask(head)


# ---------------------------------------------------------------------------
# corpus writers


def write_mining_corpus(out_dir, n_scenes: int, seed: int):
    """Scenes + timelines + rendered frames on disk; returns scene directories."""
    from . import datasetio
    from .timeline import save_timeline

    out = Path(out_dir)
    dirs = []
    for i in range(n_scenes):
        scene_id = f"scene_{i:04d}"
        spec = make_scene(scene_id, stable_seed("scene", seed, i))
        sdir = out / "scenes" / scene_id
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / "scene.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True))

        hand_t, tool_t = hand_timeline(spec), tool_timeline(spec)
        for t, render in ((hand_t, render_hand_frame), (tool_t, render_tool_frame)):
            kind = "hand" if t.kind == "hand_object" else "tool"
            for s in t.states:
                rel = f"frames/{kind}_f{s.frame_index}.png"
                datasetio.save_image(render(spec, s.frame_index), sdir / rel)
                t.frame_paths[s.frame_index] = rel
            save_timeline(t, sdir / f"timeline_{kind}.json")
        dirs.append(sdir)

    config = {
        "n_contact_points": 32,
        "iou_threshold": 0.05,
        "erosion_radius": 3,
        "ransac": {"threshold": 3.0, "max_iters": 2000, "seed": seed},
        "average_before_projection": True,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "mining_config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    return dirs


def load_scene_dir(scene_dir):
    from .timeline import load_timeline

    scene_dir = Path(scene_dir)
    spec = SceneSpec.from_json(json.loads((scene_dir / "scene.json").read_text()))
    hand_t = load_timeline(scene_dir / "timeline_hand.json")
    tool_t = load_timeline(scene_dir / "timeline_tool.json")
    return spec, hand_t, tool_t


def write_training_dataset(out_dir, n_samples: int, seed: int, size: int = 64, ambiguous_frac: float = 0.3):
    from . import datasetio

    samples = [
        make_training_sample(i, seed, size=size, ambiguous_frac=ambiguous_frac)
        for i in range(n_samples)
    ]
    return datasetio.write_dataset(samples, out_dir, vocabulary=["cut", "grasp"])


def write_grasp_corpus(out_dir, n_scenes: int, seed: int):
    from . import datasetio

    out = Path(out_dir)
    dirs = []
    for i in range(n_scenes):
        scene_id = f"gscene_{i:04d}"
        spec = make_grasp_scene(scene_id, stable_seed("gscene", seed, i))
        sdir = out / "grasp_scenes" / scene_id
        sdir.mkdir(parents=True, exist_ok=True)
        image, depth = render_grasp_scene(spec)
        datasetio.save_image(image, sdir / "image.png")
        datasetio.save_depth(depth, sdir / "depth.png")
        (sdir / "scene.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True))
        dirs.append(sdir)
    return dirs
