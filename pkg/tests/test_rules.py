import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendbg.evaluator import Label
from scendbg.rules import (EmptyRuleSet, Membership, NumericGE, NumericInterval, NumericLE, Rule,
                           UnknownFeature, load_rule, matches, measure_arrays, normalize, render,
                           rule_from_json, rule_to_json, select_best)


def test_normalize_merges_bounds_per_feature():
    ps = normalize([NumericLE("d", 9.0), NumericGE("d", 2.0, strict=True), NumericLE("d", 7.5),
                    Membership("m", ("A", "B")), Membership("m", ("B", "C"))])
    assert ps == (NumericInterval("d", 2.0, 7.5, True, True), Membership("m", ("B",)))


def test_contradictions_raise():
    with pytest.raises(ValueError):
        normalize([NumericLE("d", 1.0), NumericGE("d", 2.0)])
    with pytest.raises(ValueError):
        normalize([Membership("m", ("A",)), Membership("m", ("B",))])


def test_strict_bound_wins_a_tie():
    (p,) = normalize([NumericLE("d", 3.0), NumericLE("d", 3.0, strict=True)])
    assert p == NumericLE("d", 3.0, strict=True)


def test_render_uses_math_glyphs():
    r = Rule.of([NumericLE("dist(ego,c)", 9.0), Membership("c.model", ("PRANGER",)),
                 NumericGE("time", 100.5, strict=True)], "incorrect")
    assert render(r) == "dist(ego,c) ≤ 9 ∧ c.model = PRANGER ∧ time > 100.5"
    assert render(Rule.of([], "correct")) == "(any)"


def test_matches_and_unknown_feature():
    r = Rule.of([NumericLE("d", 9.0), Membership("m", ("P",))], "incorrect")
    assert matches(r, {"d": 9.0, "m": "P"})
    assert not matches(r, {"d": 9.01, "m": "P"})
    with pytest.raises(UnknownFeature):
        matches(r, {"d": 1.0})


def test_measure_by_hand():
    cols = {"d": np.array([1.0, 2.0, 5.0, 8.0, 12.0]), "m": np.array(list("PPQPP"))}
    labels = np.array(["incorrect", "correct", "incorrect", "incorrect", "incorrect"])
    r = measure_arrays(Rule.of([NumericLE("d", 9.0), Membership("m", ("P",))], "incorrect"), cols, labels)
    assert (r.n_matched, r.n_hits) == (3, 2)
    assert math.isclose(r.precision, 2 / 3) and math.isclose(r.coverage, 3 / 5)
    none = measure_arrays(Rule.of([NumericGE("d", 100.0)], "incorrect"), cols, labels)
    assert none.precision == 0.0 and none.coverage == 0.0


def test_measure_scores_sublabels_against_binary_unless_augmented():
    cols = {"d": np.array([1.0, 2.0])}
    labels = np.array(["incorrect", "incorrect-dp"])
    r = Rule.of([NumericLE("d", 5.0)], Label.INCORRECT_DP)
    assert measure_arrays(r, cols, np.array(["incorrect", "incorrect"])).precision == 1.0
    assert measure_arrays(r, cols, labels, augmented=True).precision == 0.5


def test_select_best_order():
    def mk(p, c, n, name="a"):
        preds = [NumericLE(f"{name}{k}", 1.0) for k in range(n)]
        return Rule(normalize(preds), Label.INCORRECT, p, c, 1, 1)

    hi_prec = mk(0.9, 0.01, 3)
    assert select_best([mk(0.8, 0.5, 1), hi_prec]) is hi_prec
    wide = mk(0.9, 0.2, 3)
    assert select_best([hi_prec, wide]) is wide
    short = mk(0.9, 0.2, 1)
    assert select_best([wide, short]) is short
    assert select_best([mk(0.9, 0.2, 1, "b"), mk(0.9, 0.2, 1, "a")]).features == ("a0",)
    with pytest.raises(EmptyRuleSet):
        select_best([])


preds = st.one_of(
    st.builds(NumericGE, st.sampled_from("xyz"), st.floats(-100, 100), st.booleans()),
    st.builds(NumericLE, st.sampled_from("xyz"), st.floats(-100, 100), st.booleans()),
    st.builds(Membership, st.just("m"), st.lists(st.sampled_from("ABCD"), min_size=1).map(tuple)),
)


@given(st.lists(preds, max_size=6), st.lists(st.floats(-120, 120), min_size=3, max_size=3),
       st.sampled_from("ABCD"))
def test_normalize_preserves_meaning(ps, xyz, m):
    row = dict(zip("xyz", xyz), m=m)
    raw = all(bool(p.holds(np.array([row[p.feature]]))[0]) for p in ps)
    try:
        norm = normalize(ps)
    except ValueError:
        assert not raw
        return
    assert matches(Rule(norm, Label.INCORRECT), row) == raw
    assert len({p.feature for p in norm if not isinstance(p, Membership)}) == \
        sum(not isinstance(p, Membership) for p in norm)


@given(st.lists(preds, max_size=6))
def test_json_round_trip(ps):
    try:
        r = Rule.of(ps, "incorrect", "dt/bb")
    except ValueError:
        return
    back = rule_from_json(json.loads(json.dumps(rule_to_json(r))))
    assert back.predicates == r.predicates and back.provenance == "dt/bb"


def test_load_rule_accepts_extract_output(tmp_path):
    r = Rule.of([NumericLE("d", 9.0)], "incorrect")
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"method": "dt-bb", "best": rule_to_json(r)}))
    assert load_rule(p).predicates == r.predicates
    p.write_text(json.dumps({"kind": "activation-pattern", "target": "correct"}))
    with pytest.raises(ValueError):
        load_rule(p)
