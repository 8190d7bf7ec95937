"""Per-image detection scoring: IoU matching, F1 and the correct/incorrect label."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

from .world import BoundingBox


class Label(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    CORRECT_DP = "correct-dp"
    CORRECT_UNLABELLED = "correct-unlabelled"
    INCORRECT_DP = "incorrect-dp"
    INCORRECT_UNLABELLED = "incorrect-unlabelled"

    @property
    def binary(self) -> "Label":
        return Label.CORRECT if self.value.startswith("correct") else Label.INCORRECT

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ImageEvaluation:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    label: Optional[Label] = None


@dataclass(frozen=True)
class LabeledExample:
    features: object  # FeatureVector
    evaluation: ImageEvaluation
    activations: Optional[tuple[float, ...]] = None
    augmented_label: Optional[Label] = None

    @property
    def label(self) -> Label:
        return self.evaluation.label

    @property
    def seed_index(self) -> int:
        return self.features.seed_index


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def scores(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp + fn == 0:
        # nothing to find and nothing reported
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # same value as the harmonic mean, but exact at ties such as 4/5 == 0.8
    f1 = 2 * tp / (2 * tp + fp + fn)
    return precision, recall, f1


def match_and_score(ground_truth: Sequence[BoundingBox], detections: Sequence,
                    iou_threshold: float = 0.5) -> ImageEvaluation:
    """Greedy IoU-descending matching; duplicates on a matched box count as FP."""
    det_boxes = [d.box if hasattr(d, "box") else d for d in detections]
    pairs = []
    for gi, g in enumerate(ground_truth):
        for di, d in enumerate(det_boxes):
            v = iou(g, d)
            if v > iou_threshold:
                pairs.append((-v, gi, di))
    pairs.sort()
    used_g, used_d = set(), set()
    for _, gi, di in pairs:
        if gi not in used_g and di not in used_d:
            used_g.add(gi)
            used_d.add(di)
    tp = len(used_g)
    fp = len(det_boxes) - tp
    fn = len(ground_truth) - tp
    return ImageEvaluation(tp, fp, fn, *scores(tp, fp, fn))


def assign_label(ev: ImageEvaluation, threshold: float = 0.8) -> Label:
    return Label.CORRECT if ev.f1 > threshold else Label.INCORRECT


def evaluate_image(ground_truth, detections, iou_threshold: float = 0.5,
                   f1_threshold: float = 0.8) -> ImageEvaluation:
    ev = match_and_score(ground_truth, detections, iou_threshold)
    return replace(ev, label=assign_label(ev, f1_threshold))


def example_record(ex: LabeledExample) -> dict:
    rec = dict(zip(ex.features.names, ex.features.values))
    rec["_seedIndex"] = ex.features.seed_index
    ev = ex.evaluation
    rec.update({"tp": ev.tp, "fp": ev.fp, "fn": ev.fn, "f1": ev.f1, "label": ev.label.value})
    if ex.activations is not None:
        rec["activations"] = list(ex.activations)
    if ex.augmented_label is not None:
        rec["augmentedLabel"] = ex.augmented_label.value
    return rec


def example_from_record(rec: dict, names, schema=None) -> LabeledExample:
    from .sampler import vector_from_record

    f = vector_from_record(rec, tuple(names), schema)
    tp, fp, fn = int(rec.get("tp", 0)), int(rec.get("fp", 0)), int(rec.get("fn", 0))
    p, r, f1 = scores(tp, fp, fn)
    ev = ImageEvaluation(tp, fp, fn, p, r, float(rec["f1"]), Label(rec["label"]))
    acts = rec.get("activations")
    aug = rec.get("augmentedLabel")
    return LabeledExample(f, ev, tuple(acts) if acts is not None else None,
                          Label(aug) if aug else None)
