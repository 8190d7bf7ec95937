"""Decision patterns over binarized detector activations and label augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .evaluator import Label, LabeledExample
from .trees import TreeConfig, balanced_weights, fit_tree, order_classes


class NoActivations(ValueError):
    pass


@dataclass(frozen=True)
class ActivationPattern:
    constraints: tuple[tuple[int, bool], ...]
    source_label: Label
    support: float
    precision: float = 0.0
    found: bool = True

    def __post_init__(self):
        chans = [c for c, _ in self.constraints]
        if len(set(chans)) != len(chans):
            raise ValueError("pattern constrains a channel twice")
        if not 0.0 <= self.support <= 1.0:
            raise ValueError("support must lie in [0, 1]")

    def mask(self, bits: np.ndarray) -> np.ndarray:
        """Rows of the 0/1 matrix ``bits`` that satisfy the pattern."""
        bits = np.atleast_2d(bits)
        if not self.found:
            return np.zeros(len(bits), bool)
        out = np.ones(len(bits), bool)
        for ch, active in self.constraints:
            out &= bits[:, ch] == (1 if active else 0)
        return out

    def satisfied_by(self, activations) -> bool:
        return bool(self.mask(binarize(activations)[None, :])[0])

    def render(self) -> str:
        if not self.found:
            return "(none)"
        if not self.constraints:
            return "(any)"
        return " ∧ ".join(f"a{ch} {'on' if on else 'off'}" for ch, on in self.constraints)

    def to_json(self) -> dict:
        return {
            "kind": "activation-pattern",
            "sourceLabel": self.source_label.value,
            "constraints": [{"channel": c, "active": a} for c, a in self.constraints],
            "support": self.support,
            "precision": self.precision,
            "found": self.found,
            "text": self.render(),
        }

    @classmethod
    def from_json(cls, d) -> "ActivationPattern":
        return cls(tuple((int(c["channel"]), bool(c["active"])) for c in d["constraints"]),
                   Label(d["sourceLabel"]), float(d["support"]), float(d.get("precision", 0.0)),
                   bool(d.get("found", True)))


def binarize(activations) -> np.ndarray:
    """1 where the activation is >= 0, else 0."""
    return (np.asarray(activations, float) >= 0).astype(np.int8)


def activation_bits(data: Sequence[LabeledExample]) -> np.ndarray:
    if any(ex.activations is None for ex in data):
        raise NoActivations("every example needs activations for white-box analysis")
    if not data:
        return np.zeros((0, 0), np.int8)
    return binarize(np.array([ex.activations for ex in data], float))


def support(pattern: ActivationPattern, data: Sequence[LabeledExample]) -> float:
    bits = activation_bits(data)
    is_target = np.array([ex.label.binary == pattern.source_label.binary for ex in data])
    if not is_target.any():
        return 0.0
    return float((pattern.mask(bits) & is_target).sum() / is_target.sum())


def mine_pattern(data: Sequence[LabeledExample], target: Label | str,
                 cfg: Optional[TreeConfig] = None, seed: int = 0) -> ActivationPattern:
    """Best single tree path to a ``target`` leaf over binarized channels.

    Paths are ranked by support, then precision, then length.  When no leaf
    predicts the target an unsatisfiable pattern with support 0 comes back.
    """
    target = Label(target).binary
    bits = activation_bits(data)
    labels = np.array([ex.label.binary.value for ex in data])
    is_target = labels == target.value
    none = ActivationPattern((), target, 0.0, 0.0, found=False)
    if not is_target.any():
        return none
    if cfg is None:
        cfg = TreeConfig(label_weights=balanced_weights(labels))
    classes = order_classes(labels)
    y = np.array([classes.index(v) for v in labels])
    names = tuple(f"a{j}" for j in range(bits.shape[1]))
    tree = fit_tree(bits.astype(float), y, classes, cfg, seed, names=names)
    best, best_key = None, None
    for leaf in tree.leaves():
        if tree.leaf_label(leaf) != target.value:
            continue
        cons = tuple((int(tree.feature[nd]), not is_left) for nd, is_left in tree.path(leaf))
        cons = tuple(dict(cons).items())  # a channel can only be tested once on 0/1 data
        pat = ActivationPattern(cons, target, 0.0)
        m = pat.mask(bits)
        sup = float((m & is_target).sum() / is_target.sum())
        prec = float((m & is_target).sum() / m.sum()) if m.any() else 0.0
        key = (sup, prec, -len(cons))
        if best_key is None or key > best_key:
            best, best_key = replace(pat, support=sup, precision=prec), key
    return best if best is not None else none


def augment_labels(data: Sequence[LabeledExample], correct_pattern: ActivationPattern,
                   incorrect_pattern: ActivationPattern) -> list[LabeledExample]:
    """Split each binary label into pattern / unlabelled sub-classes."""
    bits = activation_bits(data)
    in_c = correct_pattern.mask(bits) if len(data) else np.zeros(0, bool)
    in_i = incorrect_pattern.mask(bits) if len(data) else np.zeros(0, bool)
    out = []
    for ex, c, i in zip(data, in_c, in_i):
        if ex.label.binary is Label.CORRECT:
            aug = Label.CORRECT_DP if c else Label.CORRECT_UNLABELLED
        else:
            aug = Label.INCORRECT_DP if i else Label.INCORRECT_UNLABELLED
        out.append(replace(ex, augmented_label=aug))
    return out
