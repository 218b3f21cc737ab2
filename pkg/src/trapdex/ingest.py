"""Parsers for the two third-party file formats the pipeline consumes.

MegaDetector batch JSON (consumed and re-emitted for fixtures):
  {"images": [{"file": str,
               "detections": [{"category": str, "conf": float,
                               "bbox": [x, y, w, h]}],
               "failure": optional str}],
   "detection_categories": {code: "animal"|"person"|"vehicle"}}

COCO-CameraTraps JSON (consumed):
  images[{id, file_name, width, height, location, date_captured}],
  annotations[{id, image_id, category_id}], categories[{id, name}].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import IO, Any

from .model import (
    BBOX_EPS,
    DETECTION_CATEGORIES,
    DetectionRecord,
    ImageRecord,
    LabelSpace,
    TrapdexError,
)

# De-facto MegaDetector convention, used when detection_categories is absent.
DEFAULT_CATEGORY_MAP = {"1": "animal", "2": "person", "3": "vehicle"}

# Timestamp layouts observed in camera-trap exports (EXIF-style included);
# ISO 8601 is tried first via datetime.fromisoformat.
_TIMESTAMP_FORMATS = (
    "%Y:%m:%d %H:%M:%S",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
)


class ParseError(TrapdexError):
    """Malformed input document; message carries source name + entry index."""


@dataclass
class DetectionFile:
    """Parsed MegaDetector batch output."""

    images: list[tuple[str, list[DetectionRecord], str | None]]
    category_map: dict[str, str]
    info: dict[str, Any] = field(default_factory=dict)

    def detections_by_image(self) -> dict[str, list[DetectionRecord]]:
        return {name: dets for name, dets, _ in self.images}


@dataclass
class AnnotationSet:
    """Parsed COCO-CameraTraps annotations with a contiguous label space."""

    images: list[ImageRecord]
    truth: dict[str, int]  # image_id -> label id
    label_space: LabelSpace
    excluded_multi_species: int = 0
    category_id_map: dict[int, int] = field(default_factory=dict)  # source -> internal


def parse_timestamp(value: str | None) -> datetime | None:
    """Lenient timestamp parse; absence and unknown layouts are legal."""
    if not value or not isinstance(value, str):
        return None
    text = value.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    for fmt in _TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    return None


def _load_json(document: bytes | str | IO, source: str) -> Any:
    if hasattr(document, "read"):
        document = document.read()
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        return json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: not valid JSON: {exc}") from exc


def parse_megadetector_json(
    document: bytes | str | IO, source: str = "<megadetector>"
) -> DetectionFile:
    """Parse a MegaDetector batch-output document.

    Detector category codes are resolved through detection_categories (the
    1/2/3 convention applies when the map is absent); confidences must lie in
    [0,1] and boxes in [0, 1+eps] before clamping. Entries with a "failure"
    field contribute zero detections plus the note.
    """
    doc = _load_json(document, source)
    if not isinstance(doc, dict) or "images" not in doc:
        raise ParseError(f'{source}: missing "images" array')

    raw_map = doc.get("detection_categories", DEFAULT_CATEGORY_MAP)
    if not isinstance(raw_map, dict):
        raise ParseError(f"{source}: detection_categories must be an object")
    category_map: dict[str, str] = {}
    for code, name in raw_map.items():
        name = str(name).lower()
        if name not in DETECTION_CATEGORIES:
            raise ParseError(
                f"{source}: detection_categories maps {code!r} to unknown "
                f"category {name!r}"
            )
        category_map[str(code)] = name

    images: list[tuple[str, list[DetectionRecord], str | None]] = []
    for idx, entry in enumerate(doc["images"]):
        where = f"{source}: images[{idx}]"
        if not isinstance(entry, dict) or "file" not in entry:
            raise ParseError(f'{where}: missing "file"')
        file_name = str(entry["file"])
        failure = entry.get("failure")
        if failure is not None:
            images.append((file_name, [], str(failure)))
            continue
        dets: list[DetectionRecord] = []
        for j, det in enumerate(entry.get("detections") or []):
            code = str(det.get("category"))
            if code not in category_map:
                raise ParseError(f"{where}.detections[{j}]: unknown category code {code!r}")
            try:
                conf = float(det["conf"])
                x, y, w, h = (float(v) for v in det["bbox"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}.detections[{j}]: malformed entry: {exc}") from exc
            if not 0.0 <= conf <= 1.0:
                raise ParseError(f"{where}.detections[{j}]: confidence {conf} out of [0,1]")
            if x < -BBOX_EPS or y < -BBOX_EPS or w <= 0 or h <= 0 \
                    or x + w > 1.0 + BBOX_EPS or y + h > 1.0 + BBOX_EPS:
                raise ParseError(
                    f"{where}.detections[{j}]: bbox [{x}, {y}, {w}, {h}] "
                    f"outside the unit square"
                )
            # Clamp emitter rounding back into [0, 1].
            x = min(max(x, 0.0), 1.0)
            y = min(max(y, 0.0), 1.0)
            w = min(w, 1.0 - x)
            h = min(h, 1.0 - y)
            dets.append(
                DetectionRecord(
                    image_id=file_name,
                    category=category_map[code],  # type: ignore[arg-type]
                    confidence=conf,
                    bbox=(x, y, w, h),
                )
            )
        images.append((file_name, dets, None))

    info = doc.get("info") if isinstance(doc.get("info"), dict) else {}
    return DetectionFile(images=images, category_map=category_map, info=info)


def serialize_megadetector_json(det_file: DetectionFile) -> str:
    """Emit the subset of the batch schema the engine produces itself."""
    reverse = {name: code for code, name in det_file.category_map.items()}
    images = []
    for file_name, dets, failure in det_file.images:
        entry: dict[str, Any] = {"file": file_name}
        if failure is not None:
            entry["failure"] = failure
        else:
            entry["detections"] = [
                {
                    "category": reverse[det.category],
                    "conf": det.confidence,
                    "bbox": list(det.bbox),
                }
                for det in dets
            ]
        images.append(entry)
    doc = {"images": images, "detection_categories": det_file.category_map}
    if det_file.info:
        doc["info"] = det_file.info
    return json.dumps(doc, indent=2)


def parse_coco_cameratraps(
    document: bytes | str | IO, source: str = "<coco>"
) -> AnnotationSet:
    """Parse a COCO-CameraTraps annotation document.

    Source category ids are remapped onto contiguous ids 0..n-1 in ascending
    source-id order. Images annotated with more than one distinct species are
    dropped and counted in ``excluded_multi_species``.
    """
    doc = _load_json(document, source)
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc, dict) or key not in doc:
            raise ParseError(f"{source}: missing {key!r} array")

    cats = sorted(doc["categories"], key=lambda c: c["id"])
    names = [str(c["name"]).lower() for c in cats]
    if len(set(names)) != len(names):
        raise ParseError(f"{source}: duplicate category names after lowercasing")
    label_space = LabelSpace.from_names(names)
    category_id_map = {int(c["id"]): i for i, c in enumerate(cats)}

    records: dict[str, ImageRecord] = {}
    for idx, img in enumerate(doc["images"]):
        where = f"{source}: images[{idx}]"
        try:
            image_id = str(img["id"])
            file_name = str(img.get("file_name", image_id))
            width = int(img.get("width", 1))
            height = int(img.get("height", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: malformed entry: {exc}") from exc
        if image_id in records:
            raise ParseError(f"{where}: duplicate image id {image_id!r}")
        split = img.get("split")
        records[image_id] = ImageRecord(
            image_id=image_id,
            file_name=file_name,
            location_id=str(img.get("location", "")),
            width=width,
            height=height,
            timestamp=parse_timestamp(img.get("date_captured")),
            split_tag=split if split in ("cis", "trans") else None,
        )

    assigned: dict[str, set[int]] = {}
    for idx, ann in enumerate(doc["annotations"]):
        where = f"{source}: annotations[{idx}]"
        try:
            image_id = str(ann["image_id"])
            source_cat = int(ann["category_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: malformed entry: {exc}") from exc
        if image_id not in records:
            raise ParseError(f"{where}: references missing image {image_id!r}")
        if source_cat not in category_id_map:
            raise ParseError(f"{where}: unknown category id {source_cat}")
        assigned.setdefault(image_id, set()).add(category_id_map[source_cat])

    excluded = 0
    images: list[ImageRecord] = []
    truth: dict[str, int] = {}
    for image_id, rec in records.items():
        labels = assigned.get(image_id, set())
        if len(labels) > 1:
            excluded += 1
            continue
        if labels:
            label = labels.pop()
            truth[image_id] = label
            rec = ImageRecord(
                image_id=rec.image_id,
                file_name=rec.file_name,
                location_id=rec.location_id,
                width=rec.width,
                height=rec.height,
                timestamp=rec.timestamp,
                gt_label=label,
                split_tag=rec.split_tag,
            )
        images.append(rec)

    return AnnotationSet(
        images=images,
        truth=truth,
        label_space=label_space,
        excluded_multi_species=excluded,
        category_id_map=category_id_map,
    )
