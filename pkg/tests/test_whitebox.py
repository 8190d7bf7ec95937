import numpy as np
import pytest

from scendbg.evaluator import ImageEvaluation, Label, LabeledExample
from scendbg.sampler import FeatureVector
from scendbg.whitebox import (ActivationPattern, NoActivations, augment_labels, binarize, mine_pattern,
                              support)


def example(i, label, acts):
    fv = FeatureVector(("x",), (float(i),), i)
    return LabeledExample(fv, ImageEvaluation(0, 0, 0, 0, 0, 0, label), tuple(acts))


def planted_data(n=400, seed=0, noise=0.0):
    # channel 2 fires on failures, channel 0 is off on most successes, the rest is noise
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        bad = rng.random() < 0.2
        a = rng.normal(0, 1, 6)
        a[2] = (1 if bad else -1) * abs(a[2]) * (-1 if rng.random() < noise else 1)
        a[0] = -abs(a[0]) if (not bad and rng.random() < 0.9) else abs(a[0])
        out.append(example(i, Label.INCORRECT if bad else Label.CORRECT, a))
    return out


def test_binarize_zero_is_on():
    assert binarize([-0.1, 0.0, 0.3]).tolist() == [0, 1, 1]


def test_pattern_mask_and_render():
    p = ActivationPattern(((2, True), (0, False)), Label.INCORRECT, 0.5)
    bits = np.array([[0, 0, 1], [1, 0, 1], [0, 0, 0]])
    assert p.mask(bits).tolist() == [True, False, False]
    assert p.render() == "a2 on ∧ a0 off"
    assert p.satisfied_by([-1, 5, 0.2])
    assert ActivationPattern.from_json(p.to_json()) == p
    with pytest.raises(ValueError):
        ActivationPattern(((1, True), (1, False)), Label.INCORRECT, 0.5)


def test_mining_finds_the_planted_channel():
    data = planted_data()
    p = mine_pattern(data, Label.INCORRECT)
    assert (2, True) in p.constraints
    assert p.support == 1.0 and p.precision == 1.0
    assert support(p, data) == p.support
    c = mine_pattern(data, Label.CORRECT)
    assert c.support >= 0.8 and c.precision > 0.95


def test_noisy_channel_support_tracks_noise():
    p = mine_pattern(planted_data(noise=0.2, seed=3), Label.INCORRECT)
    assert 0.6 <= p.support <= 0.9


def test_missing_class_gives_unsatisfiable_pattern():
    data = [example(i, Label.CORRECT, [1.0, -1.0]) for i in range(10)]
    p = mine_pattern(data, Label.INCORRECT)
    assert not p.found and p.support == 0.0
    assert not p.mask(np.ones((3, 2))).any()


def test_no_activations_raise():
    data = [LabeledExample(FeatureVector(("x",), (0.0,), 0), ImageEvaluation(1, 0, 0, 1, 1, 1, Label.CORRECT))]
    with pytest.raises(NoActivations):
        mine_pattern(data, Label.CORRECT)


def test_augmentation_refines_but_keeps_binary_labels():
    data = planted_data(noise=0.2, seed=1)
    aug = augment_labels(data, mine_pattern(data, Label.CORRECT), mine_pattern(data, Label.INCORRECT))
    assert all(a.augmented_label.binary is d.label for a, d in zip(aug, data))
    kinds = {a.augmented_label for a in aug}
    assert len(kinds) == 4
