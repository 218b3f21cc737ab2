"""Shared data model: labels, images, detections, and embedding matrices."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Literal, Sequence

import numpy as np

Variant = Literal["full", "cropped", "segmented"]
DetectionCategory = Literal["animal", "person", "vehicle"]
SplitTag = Literal["cis", "trans"]

VARIANTS: tuple[str, ...] = ("full", "cropped", "segmented")
DETECTION_CATEGORIES: tuple[str, ...] = ("animal", "person", "vehicle")

# Reserved class name: allowed in evaluation label spaces, never inside a
# retrieval database or a prompt category list.
EMPTY_NAME = "empty"

# Sentinel id for "declared empty" predictions when the label space carries
# no explicit empty class.
EMPTY_LABEL = -1

# Tolerance for upstream emitters that round normalized box corners.
BBOX_EPS = 1e-6


class TrapdexError(Exception):
    """Base class for engine errors."""


@dataclass(frozen=True)
class ClassLabel:
    """A species (or reserved "empty") category."""

    id: int
    name: str

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"label id must be non-negative, got {self.id}")
        if not self.name:
            raise ValueError("label name must be non-empty")
        if self.name != self.name.lower():
            raise ValueError(f"label name must be lowercase: {self.name!r}")


@dataclass(frozen=True)
class LabelSpace:
    """Ordered set of class labels with contiguous ids 0..n-1.

    ``has_empty`` marks whether the reserved "empty" label participates in
    evaluation for this dataset.
    """

    labels: tuple[ClassLabel, ...]
    has_empty: bool = False

    def __post_init__(self) -> None:
        names = [lab.name for lab in self.labels]
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        for i, lab in enumerate(self.labels):
            if lab.id != i:
                raise ValueError(
                    f"label ids must be contiguous 0..n-1; position {i} has id {lab.id}"
                )
        if self.has_empty and EMPTY_NAME not in names:
            raise ValueError('has_empty set but no "empty" label present')

    @classmethod
    def from_names(cls, names: Sequence[str]) -> LabelSpace:
        labels = tuple(ClassLabel(i, name) for i, name in enumerate(names))
        return cls(labels=labels, has_empty=EMPTY_NAME in names)

    def __len__(self) -> int:
        return len(self.labels)

    def name_of(self, label_id: int) -> str:
        if label_id == EMPTY_LABEL:
            return EMPTY_NAME
        return self.labels[label_id].name

    def id_of(self, name: str) -> int:
        for lab in self.labels:
            if lab.name == name:
                return lab.id
        raise KeyError(name)

    def names(self, exclude_empty: bool = False) -> list[str]:
        return [
            lab.name
            for lab in self.labels
            if not (exclude_empty and lab.name == EMPTY_NAME)
        ]

    @property
    def empty_id(self) -> int:
        """Id used for empty predictions: the explicit empty class if present,
        otherwise the sentinel ``EMPTY_LABEL``."""
        if self.has_empty:
            return self.id_of(EMPTY_NAME)
        return EMPTY_LABEL


@dataclass(frozen=True)
class ImageRecord:
    """One camera-trap image with metadata relevant to splitting and routing."""

    image_id: str
    file_name: str
    location_id: str
    width: int
    height: int
    timestamp: datetime | None = None
    gt_label: int | None = None
    split_tag: SplitTag | None = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(
                f"image {self.image_id}: dimensions must be >= 1, "
                f"got {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class DetectionRecord:
    """One detector hit: category, confidence, normalized top-left box."""

    image_id: str
    category: DetectionCategory
    confidence: float
    bbox: tuple[float, float, float, float]  # (x, y, w, h) in [0, 1]

    def __post_init__(self) -> None:
        if self.category not in DETECTION_CATEGORIES:
            raise ValueError(f"unknown detection category: {self.category!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")
        x, y, w, h = self.bbox
        if x < 0 or y < 0:
            raise ValueError(f"bbox origin must be non-negative: {self.bbox}")
        if w <= 0 or h <= 0:
            raise ValueError(f"bbox extent must be positive: {self.bbox}")
        if x + w > 1.0 + BBOX_EPS or y + h > 1.0 + BBOX_EPS:
            raise ValueError(f"bbox exceeds unit square: {self.bbox}")


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """A labeled float32 vector for one image variant."""

    image_id: str
    variant: Variant
    vector: np.ndarray
    label: int | None = None
    location_id: str = ""

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.size == 0:
            raise ValueError(f"embedding for {self.image_id} is empty")
        if not np.isfinite(vec).all():
            raise ValueError(f"embedding for {self.image_id} contains NaN/Inf")
        object.__setattr__(self, "vector", vec)


@dataclass(eq=False)
class EmbeddingMatrix:
    """N row-major float32 vectors with parallel id/label/location arrays.

    Immutable once built; safe to share across concurrent readers.
    """

    dimension: int
    data: np.ndarray  # (N, D) float32, row-major
    ids: list[str]
    labels: list[int | None]
    locations: list[str]
    variant: Variant = "full"

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[1] != self.dimension:
            raise ValueError(
                f"data shape {self.data.shape} inconsistent with dimension {self.dimension}"
            )
        n = self.data.shape[0]
        for name, arr in (("ids", self.ids), ("labels", self.labels),
                          ("locations", self.locations)):
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} rows")
        if self.data.size and not np.isfinite(self.data).all():
            raise ValueError("embedding matrix contains NaN/Inf")
        self.data.flags.writeable = False

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_records(
        cls, records: Sequence[EmbeddingRecord], dimension: int | None = None,
        variant: Variant | None = None,
    ) -> EmbeddingMatrix:
        """Stack records into a matrix, checking dimensional homogeneity."""
        records = list(records)
        if not records:
            if dimension is None:
                raise ValueError("dimension required for an empty matrix")
            return cls(
                dimension=dimension,
                data=np.zeros((0, dimension), dtype=np.float32),
                ids=[], labels=[], locations=[],
                variant=variant or "full",
            )
        dim = dimension if dimension is not None else records[0].vector.shape[0]
        for rec in records:
            if rec.vector.shape[0] != dim:
                raise ValueError(
                    f"dimension mismatch: {rec.image_id}/{rec.variant} has "
                    f"D={rec.vector.shape[0]}, expected {dim}"
                )
        variants = {rec.variant for rec in records}
        if variant is None:
            if len(variants) > 1:
                raise ValueError(f"mixed variants in one matrix: {sorted(variants)}")
            variant = records[0].variant
        elif variants != {variant}:
            raise ValueError(f"records carry variants {sorted(variants)}, expected {variant}")
        data = np.stack([rec.vector for rec in records]).astype(np.float32)
        return cls(
            dimension=dim,
            data=data,
            ids=[rec.image_id for rec in records],
            labels=[rec.label for rec in records],
            locations=[rec.location_id for rec in records],
            variant=variant,
        )

    def records(self) -> Iterable[EmbeddingRecord]:
        for i in range(self.count):
            yield EmbeddingRecord(
                image_id=self.ids[i],
                variant=self.variant,
                vector=self.data[i].copy(),
                label=self.labels[i],
                location_id=self.locations[i],
            )
