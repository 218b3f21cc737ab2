"""Turning retrieval results or score files into routed species predictions.

A ScoreProvider stands in for "a trained classifier": a total lookup from
(image_id, variant) to a ranked label list. Providers are either backed by a
prediction file or by the retrieval classifier, so the detection-conditioned
routing can be exercised with stubs.

Prediction file format (JSON lines, consumed and emitted):
  {"image_id": ..., "variant": ..., "ranking": [{"label": int, "score": float}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Literal, Mapping, Sequence

import numpy as np

from .geometry import select_primary_detection
from .index import (
    CentroidSet,
    FlatIndex,
    Metric,
    Neighbor,
    search_topk,
)
from .model import (
    EMPTY_LABEL,
    DetectionRecord,
    EmbeddingMatrix,
    TrapdexError,
    Variant,
)

MatchMode = Literal["knn", "centroid"]
EmptyStrategy = Literal["declare_empty", "second_classifier"]
Arrangement = Literal["single_shared", "two_separate"]
Provenance = Literal["crop_classifier", "full_classifier", "empty_rule"]

Ranking = list[tuple[int, float]]  # (label, score), best first, labels distinct


class CoverageError(TrapdexError):
    """A provider was asked about an image/variant it does not cover."""


@dataclass(frozen=True)
class MatchingConfig:
    """Retrieval-matching knobs: metric, k-NN vs centroid, and k."""

    metric: Metric = "l2"
    mode: MatchMode = "knn"
    k: int = 1  # ignored when mode == "centroid"

    def __post_init__(self) -> None:
        if self.metric not in ("l2", "cosine"):
            raise ValueError(f"unknown metric: {self.metric!r}")
        if self.mode not in ("knn", "centroid"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class RouterConfig:
    """How images with and without detections are classified."""

    empty_strategy: EmptyStrategy = "second_classifier"
    arrangement: Arrangement = "two_separate"
    conf_threshold: float = 0.2
    crop_variant: Variant = "cropped"
    animals_only: bool = True

    def __post_init__(self) -> None:
        if self.empty_strategy not in ("declare_empty", "second_classifier"):
            raise ValueError(f"unknown empty strategy: {self.empty_strategy!r}")
        if self.arrangement not in ("single_shared", "two_separate"):
            raise ValueError(f"unknown arrangement: {self.arrangement!r}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError(f"threshold out of [0,1]: {self.conf_threshold}")


@dataclass(frozen=True)
class Prediction:
    """Routed prediction for one image."""

    image_id: str
    ranking: tuple[tuple[int, float], ...]  # best first
    provenance: Provenance

    def head(self) -> int:
        return self.ranking[0][0]

    def labels(self) -> list[int]:
        return [label for label, _ in self.ranking]


class ScoreProvider:
    """Total lookup (image_id, variant) -> ranked label list with scores."""

    def __init__(self, rankings: Mapping[tuple[str, str], Ranking]):
        self._rankings = dict(rankings)

    def covers(self, image_id: str, variant: str) -> bool:
        return (image_id, variant) in self._rankings

    def variants(self) -> set[str]:
        return {variant for _, variant in self._rankings}

    def get(self, image_id: str, variant: str) -> Ranking:
        try:
            return self._rankings[(image_id, variant)]
        except KeyError:
            raise CoverageError(
                f"provider does not cover image {image_id!r} variant {variant!r}"
            ) from None

    def __len__(self) -> int:
        return len(self._rankings)

    @classmethod
    def union(cls, *providers: ScoreProvider) -> ScoreProvider:
        """Merge coverage; later providers override overlapping keys."""
        rankings: dict[tuple[str, str], Ranking] = {}
        for provider in providers:
            rankings.update(provider._rankings)
        return cls(rankings)

    @classmethod
    def from_prediction_file(cls, source: str | Path | IO) -> ScoreProvider:
        """Load a prediction JSONL file; later duplicates override earlier ones."""
        if hasattr(source, "read"):
            lines = source.read().splitlines()
            name = "<stream>"
        else:
            lines = Path(source).read_text(encoding="utf-8").splitlines()
            name = str(source)
        rankings: dict[tuple[str, str], Ranking] = {}
        for lineno, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                key = (str(row["image_id"]), str(row.get("variant", "full")))
                ranking = [
                    (int(item["label"]), float(item["score"]))
                    for item in row["ranking"]
                ]
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise TrapdexError(
                    f"{name}: bad prediction line {lineno + 1}: {exc}"
                ) from exc
            labels = [label for label, _ in ranking]
            if len(set(labels)) != len(labels):
                raise TrapdexError(
                    f"{name}: duplicate labels in ranking at line {lineno + 1}"
                )
            rankings[key] = ranking
        return cls(rankings)


def knn_vote(
    neighbors: Sequence[Neighbor], k: int, higher_is_better: bool = False
) -> Ranking:
    """Rank classes among the first k neighbors of a best-first list.

    Comparator: vote count descending, then the class's best neighbor score
    (metric polarity given by ``higher_is_better``), then label id ascending.
    The reported score is the vote count. With k=1 the head is always the
    nearest neighbor's label.
    """
    if not neighbors:
        raise ValueError("cannot vote over an empty neighbor list")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    votes: dict[int, int] = {}
    best_score: dict[int, float] = {}
    for nb in neighbors[:k]:
        if nb.label is None:
            raise ValueError(f"neighbor row {nb.row} is unlabeled")
        votes[nb.label] = votes.get(nb.label, 0) + 1
        score = nb.score if not higher_is_better else -nb.score
        if nb.label not in best_score or score < best_score[nb.label]:
            best_score[nb.label] = score
    ranked = sorted(votes, key=lambda lab: (-votes[lab], best_score[lab], lab))
    return [(lab, float(votes[lab])) for lab in ranked]


def centroid_classify(
    centroids: CentroidSet, query: np.ndarray, metric: Metric = "l2"
) -> Ranking:
    """Rank every class by its centroid's metric score; ties by label id.

    Scores are metric-native: squared L2 distance (ascending) or cosine
    similarity (descending).
    """
    if metric not in ("l2", "cosine"):
        raise ValueError(f"unknown metric: {metric!r}")
    if not centroids.labels:
        raise ValueError("centroid set is empty")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != centroids.dimension:
        raise ValueError(
            f"query dimension {query.shape[0]} != centroid dimension "
            f"{centroids.dimension}"
        )
    if metric == "l2":
        diff = centroids.vectors - query
        scores = np.sum(diff * diff, axis=1)
        keys = scores
    else:
        qnorm = float(np.sqrt(np.sum(query * query)))
        if qnorm == 0.0:
            raise ValueError("cosine metric rejects a zero-norm query")
        norms = np.sqrt(np.sum(centroids.vectors * centroids.vectors, axis=1))
        if np.any(norms == 0.0):
            raise ValueError("cosine metric rejects zero-norm centroids")
        scores = (centroids.vectors @ query) / (norms * qnorm)
        keys = -scores
    labels = np.asarray(centroids.labels, dtype=np.int64)
    order = np.lexsort((labels, keys))
    return [(int(labels[i]), float(scores[i])) for i in order]


def retrieval_provider(
    db: FlatIndex | CentroidSet,
    queries: EmbeddingMatrix,
    cfg: MatchingConfig = MatchingConfig(),
) -> ScoreProvider:
    """Classify every query row against the database; total over query ids."""
    rankings: dict[tuple[str, str], Ranking] = {}
    if cfg.mode == "knn":
        if not isinstance(db, FlatIndex):
            raise ValueError("knn mode requires a FlatIndex database")
        if db.metric != cfg.metric:
            raise ValueError(
                f"index metric {db.metric!r} differs from config {cfg.metric!r}"
            )
        for i in range(queries.count):
            neighbors = search_topk(db, queries.data[i], cfg.k)
            if not neighbors:
                raise ValueError("cannot classify against an empty database")
            rankings[(queries.ids[i], queries.variant)] = knn_vote(
                neighbors, cfg.k, higher_is_better=(cfg.metric == "cosine")
            )
    else:
        if not isinstance(db, CentroidSet):
            raise ValueError("centroid mode requires a CentroidSet database")
        for i in range(queries.count):
            rankings[(queries.ids[i], queries.variant)] = centroid_classify(
                db, queries.data[i], cfg.metric
            )
    return ScoreProvider(rankings)


def route_and_classify(
    image_id: str,
    primary_det: DetectionRecord | None,
    crop_provider: ScoreProvider,
    full_provider: ScoreProvider | None,
    cfg: RouterConfig,
    empty_label: int = EMPTY_LABEL,
) -> Prediction:
    """Detection-conditioned routing of one image.

    Detection present: the crop provider answers (provenance crop_classifier).
    Detection absent: either the image is declared empty (empty_rule) or the
    full-image classifier answers (full_classifier). A single_shared
    arrangement uses the crop provider for both branches.
    """
    if primary_det is not None:
        ranking = crop_provider.get(image_id, cfg.crop_variant)
        return Prediction(image_id, tuple(ranking), "crop_classifier")
    if cfg.empty_strategy == "declare_empty":
        return Prediction(image_id, ((empty_label, 1.0),), "empty_rule")
    provider = crop_provider if cfg.arrangement == "single_shared" else full_provider
    if provider is None:
        raise CoverageError(
            "second_classifier strategy with two_separate arrangement "
            "requires a full-image provider"
        )
    ranking = provider.get(image_id, "full")
    return Prediction(image_id, tuple(ranking), "full_classifier")


def classify_images(
    detections: Mapping[str, Sequence[DetectionRecord]],
    crop_provider: ScoreProvider,
    full_provider: ScoreProvider | None,
    cfg: RouterConfig,
    empty_label: int = EMPTY_LABEL,
) -> list[Prediction]:
    """Route every image of a detection file through the classifier pair."""
    out = []
    for image_id in detections:
        primary = select_primary_detection(
            detections[image_id], cfg.conf_threshold, cfg.animals_only
        )
        out.append(
            route_and_classify(
                image_id, primary, crop_provider, full_provider, cfg, empty_label
            )
        )
    return out


def write_predictions(
    predictions: Iterable[Prediction], out: IO, crop_variant: Variant = "cropped"
) -> None:
    """Emit predictions as JSON lines in the prediction-file schema."""
    variant_of = {
        "crop_classifier": crop_variant,
        "full_classifier": "full",
        "empty_rule": "full",
    }
    for pred in predictions:
        out.write(
            json.dumps(
                {
                    "image_id": pred.image_id,
                    "variant": variant_of[pred.provenance],
                    "ranking": [
                        {"label": label, "score": score}
                        for label, score in pred.ranking
                    ],
                    "provenance": pred.provenance,
                }
            )
            + "\n"
        )
