"""Interaction-mining pipeline: from timelines and perception clients to
affordance samples with graspable and functional masks."""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    CorrespondenceFailure,
    DisjointnessViolation,
    EmptyMask,
    NoPrecontactFrame,
)
from .geometry import (
    BinaryMask,
    Box,
    Point2,
    PointSet,
    box_iou,
    erode_mask,
    estimate_homography_ransac,
    farthest_point,
    nearest_point_between_masks,
    project_point,
    sample_intersection_points,
)
from .synth import stable_seed
from .timeline import AffordanceSample, InteractionTimeline, MiningConfig


def find_precontact_frame(t: InteractionTimeline) -> int:
    """Largest frame index before contact with no hand-object contact."""
    best = None
    for s in t.states:
        if s.frame_index >= t.contact_frame:
            break
        if not s.in_contact:
            best = s.frame_index
    if best is None:
        raise NoPrecontactFrame(f"clip {t.clip_id}: every earlier frame is in contact")
    return best


def find_precontact_frame_tool(t: InteractionTimeline, cfg: MiningConfig) -> int:
    """Scan backward from contact until tool/object box IoU drops below threshold."""
    for s in reversed(t.states):
        if s.frame_index >= t.contact_frame:
            continue
        if s.tool_box is None or s.object_box is None:
            continue
        if box_iou(s.tool_box, s.object_box) < cfg.iou_threshold:
            return s.frame_index
    raise NoPrecontactFrame(f"clip {t.clip_id}: IoU never drops below {cfg.iou_threshold}")


def _box_center(box: Box) -> Point2:
    return Point2((box.x_min + box.x_max) / 2.0, (box.y_min + box.y_max) / 2.0)


def localize_graspable_point(t: InteractionTimeline, clients, cfg: MiningConfig, frames):
    """Sample hand-object contact points and project their mean to pre-contact.

    `frames` maps (clip_id, frame_index) -> Frame. Returns (frame_index, Point2).
    """
    if t.kind != "hand_object":
        raise ValueError("graspable localization needs a hand_object clip")
    contact_state = t.state_at(t.contact_frame)
    pre_idx = find_precontact_frame(t)
    frame_contact = frames(t.clip_id, t.contact_frame)
    frame_pre = frames(t.clip_id, pre_idx)

    hand_mask = clients.point_segmenter(
        frame_contact, PointSet([_box_center(contact_state.hand_box)]), PointSet([])
    )
    pts = sample_intersection_points(
        hand_mask,
        contact_state.object_box,
        cfg.n_contact_points,
        seed=stable_seed("contacts", cfg.ransac.seed, t.clip_id),
    )

    src, dst = clients.matcher(frame_contact, frame_pre)
    h, _ = estimate_homography_ransac(
        src, dst,
        threshold=cfg.ransac.threshold,
        max_iters=cfg.ransac.max_iters,
        seed=stable_seed("ransac", cfg.ransac.seed, t.clip_id),
    )

    if cfg.average_before_projection:
        point = project_point(h, pts.mean())
    else:
        projected = PointSet([project_point(h, p) for p in pts])
        point = projected.mean()

    pre_box = t.state_at(pre_idx).object_box
    if pre_box is not None and not pre_box.contains(point):
        raise CorrespondenceFailure(
            f"clip {t.clip_id}: projected grasp point {point} outside pre-contact object box"
        )
    return pre_idx, point


def localize_functional_point(t: InteractionTimeline, clients, cfg: MiningConfig, frames):
    """Nearest tool-mask point to the (eroded) target mask at tool pre-contact."""
    if t.kind != "tool_object":
        raise ValueError("functional localization needs a tool_object clip")
    pre_idx = find_precontact_frame_tool(t, cfg)
    state = t.state_at(pre_idx)
    frame = frames(t.clip_id, pre_idx)

    tool_mask = clients.point_segmenter(
        frame, PointSet([_box_center(state.tool_box)]), PointSet([])
    )

    detections = clients.openvocab_detector(frame, ["objects"])
    target_box = None
    best = -1.0
    for box, _category in detections:
        iou = box_iou(box, state.object_box)
        if iou > best and box_iou(box, state.tool_box) < 0.5:
            target_box, best = box, iou
    if target_box is None:
        raise EmptyMask(f"clip {t.clip_id}: no target detection at pre-contact frame")
    target_mask = clients.point_segmenter(frame, PointSet([_box_center(target_box)]), PointSet([]))

    eroded = erode_mask(target_mask, cfg.erosion_radius)
    if eroded.is_empty():
        raise EmptyMask(f"clip {t.clip_id}: erosion radius {cfg.erosion_radius} emptied target mask")
    return pre_idx, nearest_point_between_masks(tool_mask, eroded)


def fallback_functional_point(object_mask: BinaryMask, grasp_point: Point2) -> Point2:
    """Farthest object pixel from the grasp point (for clips with no tool action)."""
    if object_mask.is_empty():
        raise EmptyMask("fallback needs a non-empty object mask")
    return farthest_point(PointSet([grasp_point]), object_mask.pixels())


def transfer_functional_point(clients, tool_frame, tool_box: Box, func_point: Point2,
                              hand_frame, hand_box: Box) -> Point2:
    if tool_box.area() <= 0 or hand_box.area() <= 0:
        raise ValueError("degenerate transfer boxes")
    p = clients.correspondence_mapper(tool_frame, tool_box, func_point, hand_frame, hand_box)
    if not hand_box.contains(p):
        raise CorrespondenceFailure(f"mapped point {p} falls outside the destination box")
    return p


def generate_sample(grasp_point: Point2, functional_point: Point2, frame, object_box: Box,
                    clients, *, functional_label: str, object_category: str = "",
                    source_clip: str = "") -> AffordanceSample:
    """Prompt the segmenter with opposite-polarity points and crop to the object."""
    for name, p in (("grasp", grasp_point), ("functional", functional_point)):
        if not object_box.contains(p):
            raise ValueError(f"{name} point {p} outside object box")

    graspable = clients.point_segmenter(
        frame, PointSet([grasp_point]), PointSet([functional_point])
    )
    functional = clients.point_segmenter(
        frame, PointSet([functional_point]), PointSet([grasp_point])
    )

    overlap = graspable & functional
    graspable = graspable - overlap
    functional = functional - overlap
    if graspable.is_empty() or functional.is_empty():
        raise DisjointnessViolation("overlap removal emptied an affordance mask")

    h, w = frame.image.shape[:2]
    x0 = max(int(math.floor(object_box.x_min)), 0)
    y0 = max(int(math.floor(object_box.y_min)), 0)
    x1 = min(int(math.ceil(object_box.x_max)) + 1, w)
    y1 = min(int(math.ceil(object_box.y_max)) + 1, h)

    crop = frame.image[y0:y1, x0:x1]
    g_crop = BinaryMask(graspable.data[y0:y1, x0:x1])
    f_crop = BinaryMask(functional.data[y0:y1, x0:x1])
    if g_crop.is_empty() or f_crop.is_empty():
        raise DisjointnessViolation("cropping emptied an affordance mask")

    crop_frame = type(frame)(index=frame.index, image=crop, clip_id=frame.clip_id)
    depth = clients.depth_estimator(crop_frame)

    return AffordanceSample(
        image=crop,
        depth=np.asarray(depth, dtype=np.float64),
        masks={"grasp": g_crop, functional_label: f_crop},
        object_category=object_category,
        source_clip=source_clip,
    )


def mine_pair(hand_t: InteractionTimeline, tool_t, clients, cfg: MiningConfig, frames,
              catalog=None) -> AffordanceSample:
    """Full pipeline for one scene: graspable + functional points -> sample.

    `tool_t` may be None; the functional point then falls back to farthest
    sampling on the object mask and the label comes from the catalog.
    """
    pre_idx, grasp_point = localize_graspable_point(hand_t, clients, cfg, frames)
    hand_frame = frames(hand_t.clip_id, pre_idx)
    object_box = hand_t.state_at(pre_idx).object_box

    if tool_t is not None:
        tool_pre, func_tool = localize_functional_point(tool_t, clients, cfg, frames)
        tool_frame = frames(tool_t.clip_id, tool_pre)
        tool_box = tool_t.state_at(tool_pre).tool_box
        functional_point = transfer_functional_point(
            clients, tool_frame, tool_box, func_tool, hand_frame, object_box
        )
        label = tool_t.narration_action
    else:
        object_mask = clients.point_segmenter(
            hand_frame, PointSet([_box_center(object_box)]), PointSet([])
        )
        functional_point = fallback_functional_point(object_mask, grasp_point)
        label = None
        if catalog is not None:
            label = catalog.functional_label(hand_t.object_category)
        label = label or "use"

    return generate_sample(
        grasp_point,
        functional_point,
        hand_frame,
        object_box,
        clients,
        functional_label=label,
        object_category=hand_t.object_category,
        source_clip=hand_t.clip_id,
    )
