import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import CONFIGS
from scendbg.detector import FaultModelConfig, SyntheticDetector, load_fault_config
from scendbg.dsl import emit, feature_schema, parse
from scendbg.rules import Membership, NumericGE, NumericInterval, NumericLE, Rule, matches
from scendbg.refine import (UnspliceableFeature, feature_space_coverage, splice, stabilization,
                            validate)
from scendbg.sampler import RejectionExhausted, SamplerConfig, sample

BOXES = """
param u = uniform(0, 1)
param v = uniform(0, 1)
param w = uniform(0, 1)
ego = car(x: 0, y: 0)
"""

NEAR_PRANGER = Rule.of([NumericLE("dist(ego,otherCar)", 9.0), Membership("otherCar.model", ("PRANGER",))],
                       "incorrect")


def test_spliced_program_round_trips_through_text(planted):
    rp = splice(planted, NEAR_PRANGER)
    text = rp.text()
    assert "require dist(ego, otherCar) <= 9.0" in text
    assert 'require otherCar.model in {"PRANGER"}' in text
    assert emit(parse(text)) == text
    assert rp.text().startswith(emit(planted))


def test_spliced_samples_all_satisfy_the_rule(planted):
    r = Rule.of([NumericInterval("otherCar.heading", 10.0, 80.0), NumericGE("time", 600.0, strict=True),
                 Membership("weather", ("RAIN", "SNOW")), NumericLE("otherCar.y", 12.0)], "incorrect")
    vs = sample(splice(planted, r).spliced, 500, SamplerConfig(1))
    assert all(matches(r, v) for v in vs)


def test_unsatisfiable_splice_is_reported(planted):
    r = Rule.of([NumericGE("dist(ego,otherCar)", 25.0)], "incorrect")
    with pytest.raises(RejectionExhausted):
        splice(planted, r, max_rejections=2000)


def test_unknown_feature_cannot_be_spliced(planted):
    with pytest.raises(UnspliceableFeature):
        splice(planted, Rule.of([NumericLE("otherCar.speed", 3.0)], "incorrect"))


def test_empty_rule_is_the_base_program(planted):
    assert splice(planted, Rule.of([], "correct")).spliced is planted


def test_stabilization_by_hand():
    assert stabilization([]) == 0.0
    assert stabilization([0.5, 0.4, 0.3]) == pytest.approx(0.2)
    series = [1.0] * 400 + [0.5] + [0.5] * 99
    assert stabilization(series) == 0.0
    assert stabilization([0.0] * 10 + [1.0], window=5) == 1.0


def test_validation_of_planted_region(planted):
    det = SyntheticDetector(load_fault_config(CONFIGS / "planted_detector.toml"), feature_schema(planted))
    rep = validate(splice(planted, NEAR_PRANGER), det, n=200, seed=3)
    assert rep.incorrect_ratio > 0.85 and rep.baseline_ratio < 0.2
    assert len(rep.cumulative_series) == 200 and rep.cumulative_series[-1] == rep.incorrect_ratio
    assert rep.correct_ratio == pytest.approx(1 - rep.incorrect_ratio)
    csv = rep.csv_text().splitlines()
    assert csv[0] == "sampleIndex,cumulativeIncorrectRatio,stabilization" and len(csv) == 201
    assert validate(splice(planted, NEAR_PRANGER), det, n=200, seed=3).cumulative_series == rep.cumulative_series


def test_perfect_detector_validates_to_zero(planted):
    det = SyntheticDetector(FaultModelConfig(), feature_schema(planted))
    rep = validate(splice(planted, NEAR_PRANGER), det, n=50, seed=0, baseline=0.0)
    assert rep.incorrect_ratio == 0.0 and rep.stabilization == 0.0


def box_volume(bounds):
    return math.prod(max(0.0, min(hi, 1.0) - max(lo, 0.0)) for lo, hi in bounds)


@given(st.lists(st.tuples(st.floats(-0.2, 1.2), st.floats(0.05, 1.0)), min_size=1, max_size=3),
       st.integers(0, 100))
def test_coverage_is_near_analytic_volume(spans, seed):
    p = parse(BOXES)
    bounds = [(lo, lo + w) for lo, w in spans]
    r = Rule.of([NumericInterval(f, lo, hi) for f, (lo, hi) in zip("uvw", bounds)], "incorrect")
    est, se = feature_space_coverage(p, r, 4000, seed)
    assert abs(est - box_volume(bounds)) <= max(4 * se, 0.002)
