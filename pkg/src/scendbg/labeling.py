"""Feature vectors to labelled examples: realize, detect, score."""

from __future__ import annotations

from typing import Iterable, Protocol

from .dsl import ScenarioProgram
from .evaluator import LabeledExample, evaluate_image
from .sampler import FeatureVector
from .world import ground_truth_boxes, realize


class Detector(Protocol):
    def detect(self, scene, f: FeatureVector): ...


def label_one(program: ScenarioProgram, f: FeatureVector, detector: Detector,
              iou_threshold: float = 0.5, f1_threshold: float = 0.8) -> LabeledExample:
    scene = realize(program, f)
    out = detector.detect(scene, f)
    ev = evaluate_image(ground_truth_boxes(scene), out.detections, iou_threshold, f1_threshold)
    return LabeledExample(f, ev, out.activations)


def label_examples(program: ScenarioProgram, vectors: Iterable[FeatureVector], detector: Detector,
                   iou_threshold: float = 0.5, f1_threshold: float = 0.8) -> list[LabeledExample]:
    return [label_one(program, f, detector, iou_threshold, f1_threshold) for f in vectors]
