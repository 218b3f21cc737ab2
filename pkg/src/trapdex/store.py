"""Bit-exact on-disk embedding store.

Layout of a store directory:
  manifest.json  {"dimension": D, "count": N, "dtype": "float32le", "variant": ...}
  vectors.bin    N*D little-endian float32, row-major, no per-row header
  records.jsonl  one line per row, in row order:
                 {"image_id": ..., "label": <int|null>, "location": ...}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    EMPTY_NAME,
    VARIANTS,
    EmbeddingMatrix,
    EmbeddingRecord,
    LabelSpace,
    TrapdexError,
    Variant,
)

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"
RECORDS_NAME = "records.jsonl"
DTYPE_TAG = "float32le"


class StoreError(TrapdexError):
    """Raised for inconsistent, corrupt, or unwritable embedding stores."""


@dataclass(frozen=True)
class StoreHandle:
    """Reference to a written store."""

    path: Path
    dimension: int
    count: int
    variant: Variant


def write_embedding_store(
    records: Sequence[EmbeddingRecord],
    path: str | Path,
    *,
    dimension: int | None = None,
    variant: Variant | None = None,
    label_space: LabelSpace | None = None,
    database: bool = False,
) -> StoreHandle:
    """Write records to a store directory, creating it if needed.

    ``dimension`` and ``variant`` are required only when ``records`` is empty.
    When ``database`` is set the store is a retrieval database: every row must
    be labeled and the reserved "empty" label is rejected (checked against
    ``label_space`` when given).
    """
    records = list(records)
    if not records:
        if dimension is None:
            raise StoreError("dimension must be declared for an empty store")
        dim = dimension
        var: Variant = variant or "full"
    else:
        dim = dimension if dimension is not None else records[0].vector.shape[0]
        variants = {rec.variant for rec in records}
        if variant is not None and variants - {variant}:
            raise StoreError(
                f"records carry variants {sorted(variants)}, expected {variant}"
            )
        if len(variants) > 1:
            raise StoreError(f"mixed variants in one store: {sorted(variants)}")
        var = records[0].variant

    if dim < 1:
        raise StoreError(f"dimension must be positive, got {dim}")
    if var not in VARIANTS:
        raise StoreError(f"unknown variant: {var!r}")

    seen: set[tuple[str, str]] = set()
    for rec in records:
        if rec.vector.shape[0] != dim:
            raise StoreError(
                f"dimension mismatch: {rec.image_id}/{rec.variant} has "
                f"D={rec.vector.shape[0]}, expected {dim}"
            )
        key = (rec.image_id, rec.variant)
        if key in seen:
            raise StoreError(f"duplicate record key {key}")
        seen.add(key)
        if database and rec.label is None:
            raise StoreError(f"database row {rec.image_id} is unlabeled")
        if label_space is not None and rec.label is not None:
            if not 0 <= rec.label < len(label_space):
                raise StoreError(
                    f"label {rec.label} of {rec.image_id} outside label space"
                )
            if database and label_space.name_of(rec.label) == EMPTY_NAME:
                raise StoreError(
                    f'reserved label "{EMPTY_NAME}" not allowed in a retrieval '
                    f"database (row {rec.image_id})"
                )

    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        data = (
            np.stack([rec.vector for rec in records]).astype("<f4")
            if records
            else np.zeros((0, dim), dtype="<f4")
        )
        (path / VECTORS_NAME).write_bytes(data.tobytes(order="C"))
        with (path / RECORDS_NAME).open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(
                    json.dumps(
                        {
                            "image_id": rec.image_id,
                            "label": rec.label,
                            "location": rec.location_id,
                        }
                    )
                    + "\n"
                )
        manifest = {
            "dimension": dim,
            "count": len(records),
            "dtype": DTYPE_TAG,
            "variant": var,
        }
        (path / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StoreError(f"cannot write store at {path}: {exc}") from exc
    return StoreHandle(path=path, dimension=dim, count=len(records), variant=var)


def read_embedding_store(path: str | Path) -> EmbeddingMatrix:
    """Load a store directory into an immutable EmbeddingMatrix.

    Reading back a just-written store reproduces every vector bit-exactly
    and preserves row order.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StoreError(f"missing manifest: {manifest_path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreError(f"corrupt manifest {manifest_path}: {exc}") from exc

    for key in ("dimension", "count", "dtype", "variant"):
        if key not in manifest:
            raise StoreError(f"corrupt manifest {manifest_path}: missing {key!r}")
    dim = manifest["dimension"]
    count = manifest["count"]
    if not isinstance(dim, int) or dim < 1:
        raise StoreError(f"corrupt manifest: bad dimension {dim!r}")
    if not isinstance(count, int) or count < 0:
        raise StoreError(f"corrupt manifest: bad count {count!r}")
    if manifest["dtype"] != DTYPE_TAG:
        raise StoreError(f"unsupported dtype {manifest['dtype']!r}")
    variant = manifest["variant"]
    if variant not in VARIANTS:
        raise StoreError(f"corrupt manifest: unknown variant {variant!r}")

    try:
        raw = (path / VECTORS_NAME).read_bytes()
    except OSError as exc:
        raise StoreError(f"cannot read vectors at {path}: {exc}") from exc
    expected = count * dim * 4
    if len(raw) != expected:
        raise StoreError(
            f"vectors.bin holds {len(raw)} bytes but manifest "
            f"(count={count}, dimension={dim}) requires {expected} bytes"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(count, dim)

    ids: list[str] = []
    labels: list[int | None] = []
    locations: list[str] = []
    try:
        with (path / RECORDS_NAME).open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StoreError(
                        f"corrupt records.jsonl line {lineno + 1}: {exc}"
                    ) from exc
                ids.append(str(row["image_id"]))
                labels.append(row.get("label"))
                locations.append(str(row.get("location", "")))
    except OSError as exc:
        raise StoreError(f"cannot read records at {path}: {exc}") from exc
    if len(ids) != count:
        raise StoreError(
            f"records.jsonl has {len(ids)} rows but manifest declares {count}"
        )
    if data.size and not np.isfinite(data).all():
        raise StoreError(f"NaN/Inf detected in vectors at {path}")

    return EmbeddingMatrix(
        dimension=dim,
        data=data,
        ids=ids,
        labels=labels,
        locations=locations,
        variant=variant,
    )
