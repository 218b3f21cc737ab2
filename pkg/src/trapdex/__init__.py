"""trapdex: retrieval-based and detection-routed classification of
camera-trap images from precomputed embeddings and detections."""

from .classify import (
    CoverageError,
    MatchingConfig,
    Prediction,
    RouterConfig,
    ScoreProvider,
    centroid_classify,
    classify_images,
    knn_vote,
    retrieval_provider,
    route_and_classify,
    write_predictions,
)
from .evaluation import (
    EvalReport,
    SplitAssignment,
    SplitConfig,
    grouped_report,
    macro_f1,
    make_safari_split,
    make_wct_split,
    relative_error_reduction,
    top_n_accuracy,
)
from .geometry import (
    CropPlan,
    EmptyAverageGroup,
    MaskPlacement,
    mask_center_plan,
    plan_empty_averages,
    select_primary_detection,
    square_crop_rect,
)
from .index import (
    CentroidSet,
    FlatIndex,
    Neighbor,
    build_flat_index,
    class_centroids,
    search_topk,
    search_topk_batch,
)
from .ingest import (
    AnnotationSet,
    DetectionFile,
    ParseError,
    parse_coco_cameratraps,
    parse_megadetector_json,
    serialize_megadetector_json,
)
from .model import (
    EMPTY_LABEL,
    EMPTY_NAME,
    ClassLabel,
    DetectionRecord,
    EmbeddingMatrix,
    EmbeddingRecord,
    ImageRecord,
    LabelSpace,
    TrapdexError,
)
from .prompts import (
    CaptionPrompt,
    ReplayClient,
    build_adjudication_prompt,
    caption_prompt_catalog,
    parse_answer,
    prompt_hash,
)
from .store import StoreError, StoreHandle, read_embedding_store, write_embedding_store

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet",
    "CaptionPrompt",
    "CentroidSet",
    "ClassLabel",
    "CoverageError",
    "CropPlan",
    "DetectionFile",
    "DetectionRecord",
    "EMPTY_LABEL",
    "EMPTY_NAME",
    "EmbeddingMatrix",
    "EmbeddingRecord",
    "EmptyAverageGroup",
    "EvalReport",
    "FlatIndex",
    "ImageRecord",
    "LabelSpace",
    "MaskPlacement",
    "MatchingConfig",
    "Neighbor",
    "ParseError",
    "Prediction",
    "ReplayClient",
    "RouterConfig",
    "ScoreProvider",
    "SplitAssignment",
    "SplitConfig",
    "StoreError",
    "StoreHandle",
    "TrapdexError",
    "build_adjudication_prompt",
    "build_flat_index",
    "caption_prompt_catalog",
    "centroid_classify",
    "class_centroids",
    "classify_images",
    "grouped_report",
    "knn_vote",
    "macro_f1",
    "make_safari_split",
    "make_wct_split",
    "mask_center_plan",
    "parse_answer",
    "parse_coco_cameratraps",
    "parse_megadetector_json",
    "plan_empty_averages",
    "prompt_hash",
    "read_embedding_store",
    "relative_error_reduction",
    "retrieval_provider",
    "route_and_classify",
    "search_topk",
    "search_topk_batch",
    "select_primary_detection",
    "serialize_megadetector_json",
    "square_crop_rect",
    "top_n_accuracy",
    "write_embedding_store",
    "write_predictions",
]
