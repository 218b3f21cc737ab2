"""Independent reference implementations used to check the engine.

These deliberately avoid the package's code paths: full scans with full
sorts, loop-based confusion counting, and a direct geometric checker.
"""

from __future__ import annotations

import math

import numpy as np


def naive_search(db: np.ndarray, query: np.ndarray, metric: str, k: int):
    """Full-scan, full-sort top-k. Returns [(row, score), ...]."""
    db64 = np.asarray(db, dtype=np.float64)
    q64 = np.asarray(query, dtype=np.float64)
    scored = []
    for row in range(db64.shape[0]):
        if metric == "l2":
            diff = db64[row] - q64
            score = float(np.sum(diff * diff))
            key = score
        else:
            num = float(np.dot(db64[row], q64))
            score = num / (
                math.sqrt(float(np.dot(db64[row], db64[row])))
                * math.sqrt(float(np.dot(q64, q64)))
            )
            key = -score
        scored.append((key, row, score))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(row, score) for _, row, score in scored[:k]]


def confusion_macro_f1(preds, gts):
    """Macro-F1 over ground-truth classes via explicit confusion counts."""
    classes = sorted(set(gts))
    f1s = []
    for c in classes:
        tp = sum(1 for p, g in zip(preds, gts) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, gts) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, gts) if p != c and g == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0.0:
            f1s.append(0.0)
        else:
            f1s.append(2.0 * precision * recall / (precision + recall))
    return sum(f1s) / len(f1s)


def top_n_count(preds, gts, n):
    """Hand confusion-count of rank hits."""
    hits = 0
    for ranked, gt in zip(preds, gts):
        found = False
        for label in list(ranked)[:n]:
            if label == gt:
                found = True
        if found:
            hits += 1
    return hits


def check_crop_plan(plan, bbox, img_w, img_h):
    """Assert squareness, in-bounds rect, and containment of bbox-in-image."""
    rx, ry, rw, rh = plan.rect
    pl, pt, pr, pb = plan.pad
    assert rw + pl + pr == plan.side, f"width not square: {plan}"
    assert rh + pt + pb == plan.side, f"height not square: {plan}"
    assert rx >= 0 and ry >= 0, f"rect outside image: {plan}"
    assert rx + rw <= img_w and ry + rh <= img_h, f"rect outside image: {plan}"
    # Pixel cover of bbox intersected with the image (same snap convention
    # as the planner: floor/ceil with a 1e-7 guard against decimal noise).
    x, y, w, h = bbox
    eps = 1e-7
    bx0 = max(0, math.floor(x * img_w + eps))
    by0 = max(0, math.floor(y * img_h + eps))
    bx1 = min(img_w, math.ceil((x + w) * img_w - eps))
    by1 = min(img_h, math.ceil((y + h) * img_h - eps))
    assert rx <= bx0 and bx1 <= rx + rw, f"bbox x-range escapes rect: {plan} {bbox}"
    assert ry <= by0 and by1 <= ry + rh, f"bbox y-range escapes rect: {plan} {bbox}"


def accumulate_centroids(data: np.ndarray, labels):
    """Per-class running-sum mean, one pass, float64."""
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for row, label in zip(np.asarray(data, dtype=np.float64), labels):
        if label not in sums:
            sums[label] = np.zeros(row.shape[0])
            counts[label] = 0
        sums[label] = sums[label] + row
        counts[label] += 1
    return {label: sums[label] / counts[label] for label in sums}
