import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendbg.dsl import parse
from scendbg.sampler import SamplerConfig, sample
from scendbg.world import (FRAME_H, FRAME_W, Camera, CarInstance, Scene, UnknownObject, bearing,
                           ground_truth_boxes, realize, visible, visible_from)


def scene_with(*cars, heading=0.0):
    return Scene(Camera(0.0, 0.0, heading), tuple(cars))


def test_bearing_conventions():
    assert bearing(0, 0, 0, 0, 10) == 0
    assert bearing(0, 0, 0, 10, 0) == 90
    assert bearing(0, 0, 90, 0, 10) == -90
    assert bearing(0, 0, 0, 0, -10) == 180


def test_visibility_cone_edges_inclusive():
    edge = math.tan(math.radians(30.0)) * 10
    assert visible(0, 0, 0, edge - 1e-9, 10)
    assert not visible(0, 0, 0, edge + 1e-6, 10)
    assert visible(0, 0, 0, 0, 60) and not visible(0, 0, 0, 0, 60.001)
    assert not visible(0, 0, 0, 0, 0)


def test_box_of_centred_car_is_symmetric():
    s = scene_with(CarInstance("c", 0.0, 10.0, 0.0))
    (b,) = ground_truth_boxes(s)
    assert math.isclose(b.x_min + b.x_max, FRAME_W, rel_tol=1e-9)
    assert b.y_max > FRAME_H / 2 and b.object_name == "c"


def test_nearer_cars_get_bigger_boxes_and_come_first():
    near, far = CarInstance("near", 0.5, 8.0, 90.0), CarInstance("far", -0.5, 25.0, 90.0)
    boxes = ground_truth_boxes(scene_with(far, near))
    assert [b.object_name for b in boxes] == ["near", "far"]
    assert boxes[0].area > boxes[1].area


def test_hidden_cars_have_no_box():
    behind = CarInstance("b", 0.0, -10.0, 0.0)
    assert ground_truth_boxes(scene_with(behind)) == []
    assert not visible_from(scene_with(behind), "b")
    with pytest.raises(UnknownObject):
        scene_with(behind).car("zzz")


def test_realize_copies_fields(two_cars):
    v = sample(two_cars, 1, SamplerConfig(0))[0]
    s = realize(two_cars, v)
    c = s.car("other")
    assert (c.x, c.y, c.heading, c.model) == (v["other.x"], v["other.y"], v["other.heading"], v["other.model"])
    assert s.to_json()["cars"][0]["name"] == "other"


@given(st.floats(-1.5, 1.5), st.floats(5, 20), st.floats(0, 360, exclude_max=True))
def test_boxes_stay_in_frame(x, y, h):
    if not visible(0, 0, 0, x, y):
        return
    for b in ground_truth_boxes(scene_with(CarInstance("c", x, y, h))):
        assert 0 <= b.x_min < b.x_max <= FRAME_W
        assert 0 <= b.y_min < b.y_max <= FRAME_H


@given(st.floats(-1.5, 1.5), st.floats(5, 20), st.floats(0, 360, exclude_max=True),
       st.floats(0, 360, exclude_max=True))
def test_box_invariant_to_joint_rotation(x, y, h, rot):
    # turning camera and scene together leaves the image unchanged
    s1 = scene_with(CarInstance("c", x, y, h))
    r = math.radians(rot)
    xr = x * math.cos(r) + y * math.sin(r)
    yr = -x * math.sin(r) + y * math.cos(r)
    s2 = scene_with(CarInstance("c", xr, yr, (h + rot) % 360), heading=rot)
    b1, b2 = ground_truth_boxes(s1), ground_truth_boxes(s2)
    assert len(b1) == len(b2)
    for p, q in zip(b1, b2):
        assert np.allclose(p.as_list(), q.as_list(), atol=1e-6)


def test_dsl_builtin_agrees_with_scene_visibility():
    p = parse("ego = car(x: 0, y: 0, heading: 0)\nc = car(x: uniform(-20, 20), y: uniform(-5, 40))\n"
              "require visibleFrom(ego, c)\n")
    for v in sample(p, 50, SamplerConfig(4)):
        assert visible_from(realize(p, v), "c")
