"""Closing the loop: rules become program constraints, refined programs are re-validated."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dsl import ScenarioProgram, emit, parse
from .evaluator import Label
from .labeling import Detector, label_examples
from .rules import Membership, NumericGE, NumericInterval, NumericLE, Predicate, Rule
from .sampler import SamplerConfig, compile_program, derive_seed, rng_stream, sample


class UnspliceableFeature(KeyError):
    pass


_DERIVED = re.compile(r"^(dist|headingDiff)\((\w+),(\w+)\)$")


@dataclass(frozen=True)
class RefinedProgram:
    base: ScenarioProgram
    rule: Rule
    spliced: ScenarioProgram

    def text(self) -> str:
        return emit(self.spliced)


def feature_expression(p: ScenarioProgram, feature: str) -> str:
    """DSL text that evaluates to ``feature`` inside program ``p``."""
    cp = compile_program(p)
    if feature not in cp.by_name:
        raise UnspliceableFeature(feature)
    m = _DERIVED.match(feature)
    if m:
        return f"{m.group(1)}({m.group(2)}, {m.group(3)})"
    return feature


def _num(v: float) -> str:
    return repr(float(v))


def predicate_require(p: ScenarioProgram, pred: Predicate) -> str:
    f = feature_expression(p, pred.feature)
    if isinstance(pred, NumericGE):
        return f"{f} {'>' if pred.strict else '>='} {_num(pred.value)}"
    if isinstance(pred, NumericLE):
        return f"{f} {'<' if pred.strict else '<='} {_num(pred.value)}"
    if isinstance(pred, NumericInterval):
        lo = f"{f} {'>' if pred.lo_open else '>='} {_num(pred.lo)}"
        hi = f"{f} {'<=' if pred.hi_closed else '<'} {_num(pred.hi)}"
        return f"{lo} and {hi}"
    if isinstance(pred, Membership):
        vals = ", ".join(f'"{v}"' for v in pred.values)
        return f"{f} in {{{vals}}}"
    raise TypeError(pred)


def splice(p: ScenarioProgram, r: Rule, witness: bool = True,
           max_rejections: int = 100_000) -> RefinedProgram:
    """Append one require per predicate of ``r``.

    With ``witness`` the result must yield at least one sample, otherwise
    RejectionExhausted propagates.
    """
    if not r.predicates:
        return RefinedProgram(p, r, p)
    lines = [f"require {predicate_require(p, pred)}" for pred in r.predicates]
    spliced = parse(emit(p) + "\n".join(lines) + "\n")
    if witness:
        sample(spliced, 1, SamplerConfig(derive_seed(0, "witness"), max_rejections))
    return RefinedProgram(p, r, spliced)


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    n_samples: int
    incorrect_ratio: float
    cumulative_series: list[float]
    baseline_ratio: float
    correct_ratio: float = field(init=False)
    baseline_correct_ratio: float = field(init=False)
    stabilization: float = field(init=False)

    def __post_init__(self):
        self.correct_ratio = 1.0 - self.incorrect_ratio
        self.baseline_correct_ratio = 1.0 - self.baseline_ratio
        self.stabilization = stabilization(self.cumulative_series)

    def to_json(self) -> dict:
        return {
            "nSamples": self.n_samples,
            "incorrectRatio": self.incorrect_ratio,
            "correctRatio": self.correct_ratio,
            "baselineRatio": self.baseline_ratio,
            "baselineCorrectRatio": self.baseline_correct_ratio,
            "stabilization": self.stabilization,
            "cumulativeSeries": self.cumulative_series,
        }

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sampleIndex", "cumulativeIncorrectRatio", "stabilization"])
        for i, v in enumerate(self.cumulative_series):
            w.writerow([i, repr(v), repr(self.stabilization) if i == 0 else ""])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.csv_text())

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def stabilization(series, window: int = 100) -> float:
    """Largest distance of the last ``window`` running values from the final one."""
    if not len(series):
        return 0.0
    tail = np.asarray(series[-window:], float)
    return float(np.max(np.abs(tail - tail[-1])))


def incorrect_series(program: ScenarioProgram, n: int, detector: Detector, seed: int,
                     iou_threshold: float = 0.5, f1_threshold: float = 0.8,
                     max_rejections: int = 100_000) -> list[float]:
    vecs = sample(program, n, SamplerConfig(seed, max_rejections))
    data = label_examples(program, vecs, detector, iou_threshold, f1_threshold)
    bad = np.array([ex.label is Label.INCORRECT for ex in data], float)
    return (np.cumsum(bad) / np.arange(1, n + 1)).tolist()


def validate(rp: RefinedProgram, detector: Detector, n: int = 500, seed: int = 0,
             iou_threshold: float = 0.5, f1_threshold: float = 0.8,
             baseline: Optional[float] = None, max_rejections: int = 100_000) -> ValidationReport:
    """Incorrect ratio of ``n`` fresh samples from the refined program.

    Draws use a seed derived from ``(seed, "validate")`` so they never reuse
    training or test streams.  ``baseline`` skips re-running the base program.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    vseed = derive_seed(seed, "validate")
    series = incorrect_series(rp.spliced, n, detector, vseed, iou_threshold, f1_threshold,
                              max_rejections)
    if baseline is None:
        base = incorrect_series(rp.base, n, detector, vseed, iou_threshold, f1_threshold,
                                max_rejections)
        baseline = base[-1]
    return ValidationReport(n, series[-1], series, float(baseline))


def feature_space_coverage(base: ScenarioProgram, r: Rule, n_mc: int = 10_000, seed: int = 0,
                           max_rejections: int = 10_000) -> tuple[float, float]:
    """Monte Carlo share of the base program's distribution matched by ``r``.

    Returns ``(estimate, standard error)``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if not r.predicates:
        return 1.0, 0.0
    cp = compile_program(base)
    cols = cp.sample_columns(rng_stream(seed, "coverage"), n_mc, max_rejections * n_mc)
    p = float(r.mask(cols, n_mc).mean())
    return p, math.sqrt(p * (1 - p) / n_mc)
