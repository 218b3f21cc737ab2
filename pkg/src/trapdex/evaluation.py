"""Evaluation protocol: Top-n accuracy, macro-F1, grouped reports,
reproducible dataset splits, and relative-error-reduction arithmetic."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Hashable, Literal, Sequence

from .model import ImageRecord

SplitScheme = Literal["wct_location", "safari_first_x", "provided_cis_trans"]
SplitRole = Literal["train", "val", "test"]


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class precision/recall/F1 with supports."""

    precision: float
    recall: float
    f1: float
    support: int  # ground-truth occurrences
    predicted: int  # predicted occurrences
    in_truth: bool  # participates in the macro mean


@dataclass(frozen=True)
class MetricsBlock:
    """Top-1/Top-3 accuracy and macro-F1 over one item set."""

    count: int
    top1: float
    top3: float
    macro_f1: float
    per_class: dict[int, ClassMetrics] = field(default_factory=dict)


@dataclass(frozen=True)
class EvalReport:
    """Overall metrics plus one block per group (split tag or location).

    When a baseline Top-1 (in percent) is supplied, the report carries the
    fraction of the baseline error this run removed.
    """

    overall: MetricsBlock
    groups: dict[str, MetricsBlock] = field(default_factory=dict)
    error_reduction_vs_baseline: float | None = None

    def to_dict(self) -> dict:
        def block(b: MetricsBlock) -> dict:
            return {
                "count": b.count,
                "top1": b.top1,
                "top3": b.top3,
                "macro_f1": b.macro_f1,
                "per_class": {
                    str(label): {
                        "precision": m.precision,
                        "recall": m.recall,
                        "f1": m.f1,
                        "support": m.support,
                        "predicted": m.predicted,
                        "in_truth": m.in_truth,
                    }
                    for label, m in sorted(b.per_class.items())
                },
            }

        payload = {
            "overall": block(self.overall),
            "groups": {name: block(b) for name, b in sorted(self.groups.items())},
        }
        if self.error_reduction_vs_baseline is not None:
            payload["error_reduction_vs_baseline"] = self.error_reduction_vs_baseline
        return payload

    def format_table(self) -> str:
        """Plain-text table; accuracies in percent to one decimal place."""
        rows = [("group", "n", "top1", "top3", "macro_f1")]
        blocks = [("overall", self.overall)] + sorted(self.groups.items())
        for name, b in blocks:
            rows.append(
                (
                    name,
                    str(b.count),
                    f"{100.0 * b.top1:.1f}",
                    f"{100.0 * b.top3:.1f}",
                    f"{100.0 * b.macro_f1:.1f}",
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        ]
        return "\n".join(lines)


def top_n_accuracy(
    preds: Sequence[Sequence[int]], gts: Sequence[int], n: int
) -> float:
    """Fraction of items whose ground truth appears in the first n ranks."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} truths")
    if not gts:
        raise ValueError("cannot evaluate an empty item set")
    hits = sum(1 for ranked, gt in zip(preds, gts) if gt in list(ranked)[:n])
    return hits / len(gts)


def macro_f1(
    preds: Sequence[int], gts: Sequence[int]
) -> tuple[float, dict[int, ClassMetrics]]:
    """Unweighted mean of per-class F1 over classes present in ground truth.

    Per-class F1 = 2PR/(P+R), defined as 0 when P+R = 0. Classes that are
    predicted but absent from the truth are excluded from the mean yet
    reported in the table (in_truth=False).
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} truths")
    if not gts:
        raise ValueError("cannot evaluate an empty item set")
    tp: dict[int, int] = {}
    fp: dict[int, int] = {}
    fn: dict[int, int] = {}
    for pred, gt in zip(preds, gts):
        if pred == gt:
            tp[gt] = tp.get(gt, 0) + 1
        else:
            fp[pred] = fp.get(pred, 0) + 1
            fn[gt] = fn.get(gt, 0) + 1

    truth_classes = set(gts)
    table: dict[int, ClassMetrics] = {}
    for label in truth_classes | set(preds):
        t, f_p, f_n = tp.get(label, 0), fp.get(label, 0), fn.get(label, 0)
        precision = t / (t + f_p) if t + f_p else 0.0
        recall = t / (t + f_n) if t + f_n else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        table[label] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            support=t + f_n,
            predicted=t + f_p,
            in_truth=label in truth_classes,
        )
    macro = sum(table[label].f1 for label in truth_classes) / len(truth_classes)
    return macro, table


def _metrics_block(preds: Sequence[Sequence[int]], gts: Sequence[int]) -> MetricsBlock:
    heads = [list(ranked)[0] for ranked in preds]
    macro, table = macro_f1(heads, gts)
    return MetricsBlock(
        count=len(gts),
        top1=top_n_accuracy(preds, gts, 1),
        top3=top_n_accuracy(preds, gts, 3),
        macro_f1=macro,
        per_class=table,
    )


def grouped_report(
    preds: Sequence[Sequence[int]],
    gts: Sequence[int],
    groups: Sequence[Hashable] | None = None,
    baseline_top1_percent: float | None = None,
) -> EvalReport:
    """Overall metrics plus one block per group value.

    The overall block is computed over the union of all items, so its Top-1
    is the size-weighted mean of the group Top-1 values.
    """
    if groups is not None and len(groups) != len(gts):
        raise ValueError(f"{len(groups)} group tags for {len(gts)} items")
    overall = _metrics_block(preds, gts)
    blocks: dict[str, MetricsBlock] = {}
    if groups is not None:
        by_group: dict[str, tuple[list, list]] = {}
        for ranked, gt, group in zip(preds, gts, groups):
            name = "none" if group is None else str(group)
            by_group.setdefault(name, ([], []))[0].append(ranked)
            by_group[name][1].append(gt)
        blocks = {name: _metrics_block(p, g) for name, (p, g) in by_group.items()}
    reduction = None
    if baseline_top1_percent is not None:
        reduction = relative_error_reduction(
            baseline_top1_percent, 100.0 * overall.top1
        )
    return EvalReport(overall=overall, groups=blocks,
                      error_reduction_vs_baseline=reduction)


@dataclass(frozen=True)
class SplitConfig:
    """Split construction parameters.

    ``x`` (the first-x-locations count) applies to the safari scheme only;
    the location fractions apply to the location-held-out scheme.
    """

    scheme: SplitScheme = "wct_location"
    test_location_fraction: float = 1.0 / 3.0
    dev_train_fraction: float = 0.8
    x: int = 0
    seed: int = 0
    stratify: bool = False

    def __post_init__(self) -> None:
        for name, frac in (
            ("test_location_fraction", self.test_location_fraction),
            ("dev_train_fraction", self.dev_train_fraction),
        ):
            if not 0.0 < frac < 1.0:
                raise ValueError(f"{name} must lie in (0,1), got {frac}")
        if self.x < 0:
            raise ValueError(f"x must be non-negative, got {self.x}")


@dataclass(frozen=True)
class SplitAssignment:
    """Total, disjoint assignment of image ids to train/val/test roles."""

    roles: dict[str, SplitRole]

    def count(self, role: SplitRole) -> int:
        return sum(1 for r in self.roles.values() if r == role)

    def ids(self, role: SplitRole) -> list[str]:
        return sorted(i for i, r in self.roles.items() if r == role)

    def to_csv(self) -> str:
        lines = ["image_id,split"]
        lines.extend(f"{i},{self.roles[i]}" for i in sorted(self.roles))
        return "\n".join(lines) + "\n"


def make_wct_split(
    images: Sequence[ImageRecord], cfg: SplitConfig = SplitConfig()
) -> SplitAssignment:
    """Hold out whole locations for testing, then split the rest 80/20.

    Locations are sorted, then shuffled by a seeded RNG; the first
    ceil(L * test_location_fraction) become test locations. The remaining
    (development) images are sorted, shuffled by the same RNG, and split
    train/val by dev_train_fraction. Deterministic for fixed (input, seed);
    no location ever spans test and non-test.
    """
    for img in images:
        if not img.location_id:
            raise ValueError(f"image {img.image_id} has no location")
    locations = sorted({img.location_id for img in images})
    if len(locations) < 3:
        raise ValueError(f"need at least 3 locations, got {len(locations)}")

    rng = random.Random(cfg.seed)
    rng.shuffle(locations)
    n_test = math.ceil(len(locations) * cfg.test_location_fraction)
    test_locations = set(locations[:n_test])

    roles: dict[str, SplitRole] = {}
    dev: list[ImageRecord] = []
    for img in sorted(images, key=lambda im: im.image_id):
        if img.location_id in test_locations:
            roles[img.image_id] = "test"
        else:
            dev.append(img)

    def split_dev(items: list[ImageRecord]) -> None:
        rng.shuffle(items)
        n_train = round(len(items) * cfg.dev_train_fraction)
        for i, img in enumerate(items):
            roles[img.image_id] = "train" if i < n_train else "val"

    if cfg.stratify:
        strata: dict[int | None, list[ImageRecord]] = {}
        for img in dev:
            strata.setdefault(img.gt_label, []).append(img)
        for key in sorted(strata, key=lambda v: (v is None, v)):
            split_dev(strata[key])
    else:
        split_dev(dev)
    return SplitAssignment(roles=roles)


def make_safari_split(images: Sequence[ImageRecord], x: int) -> SplitAssignment:
    """Database = images of the x lexicographically-first locations.

    Everything else is test. x = 0 leaves the database empty; x equal to the
    location count leaves the test set empty.
    """
    locations = sorted({img.location_id for img in images})
    if x > len(locations):
        raise ValueError(f"x={x} exceeds the {len(locations)} available locations")
    database_locations = set(locations[:x])
    roles: dict[str, SplitRole] = {
        img.image_id: "train" if img.location_id in database_locations else "test"
        for img in images
    }
    return SplitAssignment(roles=roles)


def relative_error_reduction(acc_base: float, acc_new: float) -> float:
    """Fraction of the baseline error removed by the new accuracy.

    Both accuracies are percentages in [0, 100]; the baseline must leave
    some error to reduce.
    """
    for name, acc in (("acc_base", acc_base), ("acc_new", acc_new)):
        if not 0.0 <= acc <= 100.0:
            raise ValueError(f"{name} out of [0,100]: {acc}")
    if acc_base == 100.0:
        raise ValueError("baseline accuracy of 100 leaves no error to reduce")
    return ((100.0 - acc_base) - (100.0 - acc_new)) / (100.0 - acc_base)
