import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendbg.dsl import (CAR_MODELS, Categorical, ScenarioSyntaxError, UniformInt, UniformReal,
                         ValidationError, emit, feature_schema, parse, tokenize)


def test_parse_two_cars(two_cars):
    p = two_cars
    assert [prm.name for prm in p.params] == ["time", "weather"]
    assert p.object_names() == ["ego", "other"]
    assert len(p.requires) == 2
    assert p.params[0].dist == UniformReal(0.0, 1440.0)
    assert p.params[1].dist == Categorical(("CLEAR", "RAIN", "SNOW"))


def test_omitted_fields_get_simulator_defaults(two_cars):
    other = two_cars.objects[1]
    assert other.model == Categorical(CAR_MODELS)
    assert other.color == (UniformInt(0, 255),) * 3


def test_schema_order_and_kinds(two_cars):
    schema = feature_schema(two_cars)
    names = [d.name for d in schema]
    assert names[:2] == ["time", "weather"]
    assert names[-2:] == ["dist(ego,other)", "headingDiff(ego,other)"]
    by = {d.name: d for d in schema}
    assert by["weather"].kind == "categorical"
    assert by["other.colorR"].kind == "integer" and by["other.colorR"].domain == (0, 255)
    assert by["other.x"].domain == (-2.0, 2.0)
    assert by["dist(ego,other)"].derived and not by["other.y"].derived
    assert by["headingDiff(ego,other)"].domain == (0.0, 180.0)


def test_emit_is_a_fixed_point(two_cars):
    text = emit(two_cars)
    again = parse(text)
    assert emit(again) == text
    assert again.params == two_cars.params
    assert again.objects == two_cars.objects
    assert again.requires == two_cars.requires


def test_interval_shorthand_and_constant_folding():
    p = parse('param s = (-1, 1)\n'
              'ego = car(x: 0, y: 0, heading: 0)\n'
              'c = car(x: s, y: uniform(2 * 3, 10 + 5), heading: 90 - 45)\n')
    assert p.params[0].dist == UniformReal(-1.0, 1.0)
    assert p.objects[1].y.dist == UniformReal(6.0, 15.0)


def test_comments_and_blank_lines_are_ignored():
    p = parse("# header\n\nego = car(x: 0, y: 0)  # trailing\n\n")
    assert p.object_names() == ["ego"]


@pytest.mark.parametrize("src, line, col", [
    ("param x = \n", 1, 11),
    ("ego = car(x: 0, y: 0)\nrequire dist(ego, ) > 1\n", 2, 19),
    ("ego = car(x: 0, y: 0)\nc = car(x: 0, y: 0, wings: 2)\n", 2, 21),
    ("param p = uniform(3, 1)\n", 1, 11),
    ("param p = range(0.5, 3)\n", 1, 11),
    ('param p = choice("A", "A")\n', 1, 11),
    ("ego = car(y: 0)\n", 1, 1),
    ("ego = car(x: 0, y: 0) extra\n", 1, 23),
    ("param $ = 1\n", 1, 7),
])
def test_syntax_errors_carry_position(src, line, col):
    with pytest.raises(ScenarioSyntaxError) as err:
        parse(src)
    assert (err.value.line, err.value.column) == (line, col)


@pytest.mark.parametrize("src, needle", [
    ("c = car(x: 0, y: 0)\n", "ego"),
    ("ego = car(x: 0, y: 0)\nego = car(x: 1, y: 1)\n", "duplicate"),
    ('param a = uniform(0, 1)\nparam a = uniform(0, 2)\nego = car(x: 0, y: 0)\n', "duplicate"),
    ('param w = choice("A", "B")\nego = car(x: w, y: 0)\n', "x"),
    ('ego = car(x: 0, y: 0)\nrequire ego.x + 1\n', "require"),
    ('ego = car(x: 0, y: 0)\nrequire ghost.x > 1\n', "ghost"),
    ('ego = car(x: 0, y: 0, model: 3)\n', "model"),
])
def test_validation_errors(src, needle):
    with pytest.raises(ValidationError) as err:
        parse(src)
    assert needle in str(err.value)


def test_forward_reference_rejected():
    with pytest.raises(ValidationError):
        parse("ego = car(x: 0, y: 0)\nc = car(x: d.x, y: 5)\nd = car(x: 0, y: 9)\n")


def test_tokenizer_tracks_lines():
    toks = tokenize("param a = uniform(0, 1)\n  require a > 0\n")
    req = [t for t in toks if t.text == "require"][0]
    assert (req.line, req.column) == (2, 3)


# property: any program built from random uniform bounds round-trips through text
bounds = st.tuples(st.floats(-1e4, 1e4, allow_nan=False), st.floats(1e-3, 1e4, allow_nan=False))


@given(bounds, bounds, st.lists(st.sampled_from(CAR_MODELS), min_size=1, max_size=5, unique=True),
       st.integers(0, 200), st.integers(0, 55))
def test_round_trip_random_programs(bx, by, models, clo, cspan):
    lo_x, w_x = bx
    lo_y, w_y = by
    choice = ", ".join(f'"{m}"' for m in models)
    src = (f"param t = uniform({lo_x!r}, {lo_x + w_x!r})\n"
           f"ego = car(x: 0, y: 0, heading: 0)\n"
           f"c = car(x: uniform({lo_x!r}, {lo_x + w_x!r}), y: uniform({lo_y!r}, {lo_y + w_y!r}), "
           f"model: choice({choice}), color: (range({clo}, {clo + cspan}), 0, 0))\n"
           f"require dist(ego, c) > 1 and c.model in {{{choice}}}\n")
    if not lo_x < lo_x + w_x or not lo_y < lo_y + w_y:
        return  # float rounding swallowed the width
    p = parse(src)
    q = parse(emit(p))
    assert q.params == p.params and q.objects == p.objects and q.requires == p.requires
    for d in feature_schema(q):
        if d.kind != "categorical" and not d.derived:
            assert d.domain[0] <= d.domain[1] or math.isinf(d.domain[1])


