import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scendbg.detector import Detection
from scendbg.evaluator import (ImageEvaluation, Label, assign_label, evaluate_image, iou,
                               match_and_score, scores)
from scendbg.world import BoundingBox

from oracles import brute_force_matching, distinct_ious, one_detection_per_truth, random_instance

B = BoundingBox


def test_iou_hand_values():
    a = B(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, B(10, 0, 20, 10)) == 0.0
    assert math.isclose(iou(a, B(5, 0, 15, 10)), 50 / 150)
    assert math.isclose(iou(a, B(2, 2, 4, 4)), 4 / 100)


@given(st.lists(st.floats(0, 100), min_size=8, max_size=8))
def test_iou_symmetric_and_bounded(v):
    x0, x1 = sorted(v[:2]); y0, y1 = sorted(v[2:4])
    u0, u1 = sorted(v[4:6]); w0, w1 = sorted(v[6:8])
    if x0 == x1 or y0 == y1 or u0 == u1 or w0 == w1:
        return
    a, b = B(x0, y0, x1, y1), B(u0, w0, u1, w1)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, b) == pytest.approx(iou(b, a))


def test_scores_edge_cases():
    assert scores(0, 0, 0) == (1.0, 1.0, 1.0)
    assert scores(0, 2, 0) == (0.0, 0.0, 0.0)
    p, r, f = scores(3, 1, 2)
    assert (p, r) == (0.75, 0.6) and math.isclose(f, 2 * p * r / (p + r))


def test_duplicates_count_as_false_positives():
    g = B(0, 0, 10, 10)
    ev = match_and_score([g], [Detection(B(0, 0, 10, 10)), Detection(B(0.5, 0, 10, 10), 0.5)])
    assert (ev.tp, ev.fp, ev.fn) == (1, 1, 0)


def test_threshold_is_strict():
    g = B(0, 0, 10, 10)
    half = B(0, 0, 10, 5)  # IoU exactly 0.5
    assert match_and_score([g], [half], 0.5).tp == 0
    assert match_and_score([g], [half], 0.49).tp == 1


def test_greedy_picks_highest_iou_first():
    g1, g2 = B(0, 0, 10, 10), B(100, 0, 110, 10)
    d_good, d_ok = B(0, 0, 10, 10), B(1, 0, 11, 10)
    ev = match_and_score([g1, g2], [d_ok, d_good])
    assert (ev.tp, ev.fp, ev.fn) == (1, 1, 1)


def test_label_threshold_strict():
    ev = ImageEvaluation(4, 1, 1, *scores(4, 1, 1))  # f1 = 0.8 exactly
    assert assign_label(ev, 0.8) is Label.INCORRECT
    assert assign_label(ev, 0.79) is Label.CORRECT


def test_two_matches_and_a_duplicate_sit_on_the_threshold():
    g1, g2 = B(0, 0, 10, 10), B(50, 0, 60, 10)
    ev = evaluate_image([g1, g2], [g1, g2, B(0.2, 0, 10, 10)])
    assert (ev.tp, ev.fp, ev.fn) == (2, 1, 0)
    assert ev.f1 == 0.8 and ev.label is Label.INCORRECT


def test_empty_image_is_correct():
    assert evaluate_image([], []).label is Label.CORRECT
    assert evaluate_image([], [B(0, 0, 1, 1)]).label is Label.INCORRECT


def test_binary_labels():
    assert Label.INCORRECT_DP.binary is Label.INCORRECT
    assert Label.CORRECT_UNLABELLED.binary is Label.CORRECT


def test_greedy_matches_oracle_when_each_truth_has_one_candidate():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 300:
        gt, dets = random_instance(rng)
        if not (distinct_ious(gt, dets) and one_detection_per_truth(gt, dets)):
            continue
        ev = match_and_score(gt, dets)
        assert (ev.tp, ev.fp, ev.fn) == brute_force_matching(gt, dets)
        checked += 1


def test_known_chain_where_greedy_loses_a_pair():
    # g1 prefers d1, but d1 is g2's only partner: greedy finds one pair, the optimum two
    g1, g2 = B(0, 0, 10, 10), B(3, 0, 13, 10)
    d1, d2 = B(1, 0, 11, 10), B(-2.5, 0, 7.5, 10)
    assert iou(g1, d1) > iou(g1, d2) > 0.5 and iou(g2, d1) > 0.5 and iou(g2, d2) <= 0.5
    ev = match_and_score([g1, g2], [d1, d2])
    assert ev.tp == 1
    assert brute_force_matching([g1, g2], [d1, d2])[0] == 2
