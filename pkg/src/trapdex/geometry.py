"""Deterministic preprocessing geometry.

Plans are pure descriptions: primary-detection selection, aspect-preserving
square crops, mask-centering translations, and averaged-empty-image grouping.
No pixels are touched here; a thin external step applies the plans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import Literal, Sequence

from .model import DetectionRecord, ImageRecord

TimeBucket = Literal["day", "night"]

# Normalized-to-pixel conversion snaps within this distance of an integer, so
# decimal inputs like 0.1 + 0.2 land on the pixel they denote.
_PIXEL_EPS = 1e-7


def _snap_floor(value: float) -> int:
    return math.floor(value + _PIXEL_EPS)


def _snap_ceil(value: float) -> int:
    return math.ceil(value - _PIXEL_EPS)


@dataclass(frozen=True)
class CropPlan:
    """A square pixel crop: source rect inside the image plus padding.

    Invariant: rect_w + pad_left + pad_right == rect_h + pad_top + pad_bottom
    == side, and the rect lies fully inside the source image.
    """

    rect: tuple[int, int, int, int]  # (x, y, w, h) pixels, inside the image
    pad: tuple[int, int, int, int]  # (left, top, right, bottom) pixels
    side: int

    def __post_init__(self) -> None:
        _, _, w, h = self.rect
        left, top, right, bottom = self.pad
        if w + left + right != self.side or h + top + bottom != self.side:
            raise ValueError(f"crop plan is not square: {self}")
        if min(self.pad) < 0 or w < 1 or h < 1 or self.side < 1:
            raise ValueError(f"degenerate crop plan: {self}")


@dataclass(frozen=True)
class MaskPlacement:
    """Translation centering a mask rect on a square canvas.

    Non-mask pixels take the fill value (one byte, applied per channel).
    """

    mask_rect: tuple[int, int, int, int]
    offset: tuple[int, int]  # (dx, dy)
    fill: int = 0


@dataclass(frozen=True)
class EmptyAverageGroup:
    """Images sharing (location, calendar day, day/night bucket) to average.

    Groups built from timestamp-less images carry None buckets and are keyed
    by location alone.
    """

    location_id: str
    date_bucket: date | None
    time_bucket: TimeBucket | None
    members: tuple[str, ...]


def select_primary_detection(
    dets: Sequence[DetectionRecord],
    conf_threshold: float = 0.2,
    animals_only: bool = True,
) -> DetectionRecord | None:
    """Pick the highest-confidence detection passing the filter.

    Returns None when nothing passes; that None is exactly the router's
    no-detection branch. Confidence ties keep the earliest detection.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"threshold out of [0,1]: {conf_threshold}")
    best: DetectionRecord | None = None
    for det in dets:
        if det.confidence < conf_threshold:
            continue
        if animals_only and det.category != "animal":
            continue
        if best is None or det.confidence > best.confidence:
            best = det
    return best


def square_crop_rect(
    bbox: tuple[float, float, float, float],
    img_w: int,
    img_h: int,
    oversize: Literal["pad", "clip"] = "pad",
) -> CropPlan:
    """Plan a square crop around a normalized box without resampling.

    The square side is the longer pixel extent of the box. The square is
    centered on the box and shifted (never shrunk) to stay inside the image;
    only when the side exceeds an image dimension is the rect clamped to the
    full extent on that axis and symmetric padding added to restore the
    square. ``oversize="clip"`` instead shrinks the side to fit, which can
    truncate the box on the oversized axis.
    """
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox has zero area: {bbox}")
    if img_w < 1 or img_h < 1:
        raise ValueError(f"image dimensions must be >= 1, got {img_w}x{img_h}")

    # Cover of bbox-intersect-image in whole pixels.
    x0 = max(0, _snap_floor(x * img_w))
    y0 = max(0, _snap_floor(y * img_h))
    x1 = min(img_w, _snap_ceil((x + w) * img_w))
    y1 = min(img_h, _snap_ceil((y + h) * img_h))
    bw, bh = x1 - x0, y1 - y0
    if bw < 1 or bh < 1:
        raise ValueError(f"bbox has zero pixel area after scaling: {bbox}")

    side = max(bw, bh)
    if oversize == "clip":
        side = min(side, img_w, img_h)

    def axis(origin: int, extent: int, img_extent: int) -> tuple[int, int, int, int]:
        if side <= img_extent:
            lo = origin + (extent - side) // 2
            lo = min(max(lo, 0), img_extent - side)
            return lo, side, 0, 0
        pad_lo = (side - img_extent) // 2
        return 0, img_extent, pad_lo, side - img_extent - pad_lo

    rx, rw, pad_l, pad_r = axis(x0, bw, img_w)
    ry, rh, pad_t, pad_b = axis(y0, bh, img_h)
    return CropPlan(rect=(rx, ry, rw, rh), pad=(pad_l, pad_t, pad_r, pad_b), side=side)


def mask_center_plan(
    mask_rect: tuple[int, int, int, int],
    canvas_side: int,
    fill: int = 0,
) -> MaskPlacement:
    """Translation that moves the mask-rect center onto the canvas center.

    Odd differences are broken toward smaller coordinates. Idempotent: an
    already-centered rect yields a zero offset.
    """
    x, y, w, h = mask_rect
    if w < 1 or h < 1:
        raise ValueError(f"mask rect is empty: {mask_rect}")
    if w > canvas_side or h > canvas_side:
        raise ValueError(
            f"mask rect {w}x{h} larger than canvas {canvas_side}x{canvas_side}"
        )
    if x < 0 or y < 0 or x + w > canvas_side or y + h > canvas_side:
        raise ValueError(f"mask rect {mask_rect} lies outside the canvas")
    if not 0 <= fill <= 255:
        raise ValueError(f"fill must be one byte, got {fill}")
    dx = (canvas_side - w) // 2 - x
    dy = (canvas_side - h) // 2 - y
    return MaskPlacement(mask_rect=mask_rect, offset=(dx, dy), fill=fill)


def plan_empty_averages(
    images: Sequence[ImageRecord],
    day_start_hour: int = 6,
    day_end_hour: int = 18,
) -> list[EmptyAverageGroup]:
    """Group images for average-image synthesis.

    Timestamped images group by (location, calendar day, day/night bucket);
    images without timestamps group per location only. Singleton groups are
    dropped. The day bucket spans [day_start_hour, day_end_hour) local time.
    """
    if not 0 <= day_start_hour < day_end_hour <= 24:
        raise ValueError(
            f"invalid day window: [{day_start_hour}, {day_end_hour})"
        )
    groups: dict[tuple[str, date | None, TimeBucket | None], list[str]] = {}
    for img in images:
        if img.timestamp is None:
            key = (img.location_id, None, None)
        else:
            bucket: TimeBucket = (
                "day" if day_start_hour <= img.timestamp.hour < day_end_hour else "night"
            )
            key = (img.location_id, img.timestamp.date(), bucket)
        groups.setdefault(key, []).append(img.image_id)

    result = [
        EmptyAverageGroup(
            location_id=loc,
            date_bucket=day,
            time_bucket=bucket,
            members=tuple(sorted(members)),
        )
        for (loc, day, bucket), members in groups.items()
        if len(members) >= 2
    ]
    result.sort(
        key=lambda g: (
            g.location_id,
            g.date_bucket.isoformat() if g.date_bucket else "",
            g.time_bucket or "",
        )
    )
    return result
