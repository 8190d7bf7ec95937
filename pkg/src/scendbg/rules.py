"""Conjunctive rules over semantic features: matching, measuring, selecting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .evaluator import Label, LabeledExample


class UnknownFeature(KeyError):
    pass


class EmptyRuleSet(ValueError):
    pass


@dataclass(frozen=True)
class NumericGE:
    """``feature >= value`` (``>`` when strict)."""
    feature: str
    value: float
    strict: bool = False

    def holds(self, x):
        x = np.asarray(x, float)
        return x > self.value if self.strict else x >= self.value


@dataclass(frozen=True)
class NumericLE:
    """``feature <= value`` (``<`` when strict)."""
    feature: str
    value: float
    strict: bool = False

    def holds(self, x):
        x = np.asarray(x, float)
        return x < self.value if self.strict else x <= self.value


@dataclass(frozen=True)
class NumericInterval:
    feature: str
    lo: float
    hi: float
    lo_open: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval on {self.feature}: {self.lo} .. {self.hi}")

    def holds(self, x):
        x = np.asarray(x, float)
        lo_ok = x > self.lo if self.lo_open else x >= self.lo
        hi_ok = x <= self.hi if self.hi_closed else x < self.hi
        return lo_ok & hi_ok


@dataclass(frozen=True)
class Membership:
    feature: str
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError(f"empty membership set on {self.feature}")
        object.__setattr__(self, "values", tuple(sorted(set(self.values))))

    def holds(self, x):
        return np.isin(np.asarray(x).astype(str), self.values)


Predicate = Union[NumericGE, NumericLE, NumericInterval, Membership]


def _bounds(p: Predicate):
    """(lower, upper) as ``(value, strict)`` pairs or None."""
    if isinstance(p, NumericGE):
        return (p.value, p.strict), None
    if isinstance(p, NumericLE):
        return None, (p.value, p.strict)
    return (p.lo, p.lo_open), (p.hi, not p.hi_closed)


def normalize(predicates: Iterable[Predicate]) -> tuple[Predicate, ...]:
    """Merge predicates per feature: one interval-type and/or one membership each.

    Feature order follows first appearance.  Raises ValueError when the
    conjunction is contradictory.
    """
    order: list[str] = []
    lower: dict[str, tuple] = {}
    upper: dict[str, tuple] = {}
    member: dict[str, set] = {}
    for p in predicates:
        if p.feature not in order:
            order.append(p.feature)
        if isinstance(p, Membership):
            member[p.feature] = member[p.feature] & set(p.values) if p.feature in member else set(p.values)
            if not member[p.feature]:
                raise ValueError(f"contradictory membership on {p.feature}")
            continue
        lo, hi = _bounds(p)
        if lo is not None:
            cur = lower.get(p.feature)
            if cur is None or lo[0] > cur[0] or (lo[0] == cur[0] and lo[1]):
                lower[p.feature] = lo
        if hi is not None:
            cur = upper.get(p.feature)
            if cur is None or hi[0] < cur[0] or (hi[0] == cur[0] and hi[1]):
                upper[p.feature] = hi
    out: list[Predicate] = []
    for f in order:
        lo, hi = lower.get(f), upper.get(f)
        if lo and hi:
            if not lo[0] < hi[0]:
                if lo[0] == hi[0] and not lo[1] and not hi[1]:
                    out.append(NumericInterval(f, math.nextafter(lo[0], -math.inf), hi[0], True, True))
                else:
                    raise ValueError(f"contradictory bounds on {f}")
            else:
                out.append(NumericInterval(f, lo[0], hi[0], lo[1], not hi[1]))
        elif lo:
            out.append(NumericGE(f, lo[0], lo[1]))
        elif hi:
            out.append(NumericLE(f, hi[0], hi[1]))
        if f in member:
            out.append(Membership(f, tuple(member[f])))
    return tuple(out)


@dataclass(frozen=True)
class Rule:
    predicates: tuple[Predicate, ...]
    target: Label
    precision: Optional[float] = None
    coverage: Optional[float] = None
    n_matched: Optional[int] = None
    n_hits: Optional[int] = None
    provenance: str = ""

    @classmethod
    def of(cls, predicates: Iterable[Predicate], target: Label | str, provenance: str = "") -> "Rule":
        return cls(normalize(predicates), Label(target), provenance=provenance)

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(p.feature for p in self.predicates))

    def key(self) -> tuple:
        return (self.target.value,) + tuple(sorted(repr(p) for p in self.predicates))

    def mask(self, cols: Mapping[str, np.ndarray], n: Optional[int] = None) -> np.ndarray:
        if n is None:
            n = len(next(iter(cols.values()))) if cols else 0
        out = np.ones(n, bool)
        for p in self.predicates:
            if p.feature not in cols:
                raise UnknownFeature(p.feature)
            out &= p.holds(cols[p.feature])
        return out

    def render(self) -> str:
        return render(self)


def matches(r: Rule, f) -> bool:
    """True iff every predicate of ``r`` holds on feature vector ``f``."""
    for p in r.predicates:
        try:
            v = f[p.feature]
        except KeyError:
            raise UnknownFeature(p.feature) from None
        if not bool(np.asarray(p.holds(np.array([v])))[0]):
            return False
    return True


def labels_of(data: Sequence[LabeledExample], augmented: bool = False) -> np.ndarray:
    if augmented:
        return np.array([ex.augmented_label.value for ex in data])
    return np.array([ex.label.value for ex in data])


def measure_arrays(r: Rule, cols: Mapping[str, np.ndarray], labels: np.ndarray,
                   augmented: bool = False) -> Rule:
    n = len(labels)
    m = r.mask(cols, n)
    matched = int(m.sum())
    target = r.target.value if augmented else r.target.binary.value
    hits = int((m & (labels == target)).sum())
    precision = hits / matched if matched else 0.0
    coverage = matched / n if (n and matched) else 0.0
    return replace(r, precision=precision, coverage=coverage, n_matched=matched, n_hits=hits)


def measure(r: Rule, data: Sequence[LabeledExample], augmented: bool = False) -> Rule:
    """Precision/coverage of ``r`` on ``data`` against the binary label.

    With ``augmented`` the rule target is compared with the augmented labels.
    """
    if not data:
        raise ValueError("measure needs data")
    from .sampler import vectors_to_columns

    names = data[0].features.names
    cols = vectors_to_columns([ex.features for ex in data], names)
    return measure_arrays(r, cols, labels_of(data, augmented), augmented)


def select_key(r: Rule):
    return (-(r.precision or 0.0), -(r.coverage or 0.0), len(r.predicates), render(r))


def select_best(rules: Sequence[Rule]) -> Rule:
    """Highest precision, then coverage, then fewest predicates, then text order."""
    if not rules:
        raise EmptyRuleSet("no rules to select from")
    return min(rules, key=select_key)


def dedupe(rules: Iterable[Rule]) -> list[Rule]:
    seen, out = set(), []
    for r in rules:
        k = r.key()
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out


# ---------------------------------------------------------------- rendering / json

def _num(v: float) -> str:
    return f"{v:.6g}"


def render_predicate(p: Predicate) -> str:
    f = p.feature
    if isinstance(p, NumericGE):
        return f"{f} {'>' if p.strict else '≥'} {_num(p.value)}"
    if isinstance(p, NumericLE):
        return f"{f} {'<' if p.strict else '≤'} {_num(p.value)}"
    if isinstance(p, NumericInterval):
        return (f"{_num(p.lo)} {'<' if p.lo_open else '≤'} {f} "
                f"{'≤' if p.hi_closed else '<'} {_num(p.hi)}")
    if len(p.values) == 1:
        return f"{f} = {p.values[0]}"
    return f"{f} ∈ {{{', '.join(p.values)}}}"


def render(r: Rule) -> str:
    if not r.predicates:
        return "(any)"
    return " ∧ ".join(render_predicate(p) for p in r.predicates)


def predicate_to_json(p: Predicate) -> dict:
    if isinstance(p, NumericGE):
        return {"op": "gt" if p.strict else "ge", "feature": p.feature, "value": p.value}
    if isinstance(p, NumericLE):
        return {"op": "lt" if p.strict else "le", "feature": p.feature, "value": p.value}
    if isinstance(p, NumericInterval):
        return {"op": "interval", "feature": p.feature, "lo": p.lo, "hi": p.hi,
                "loOpen": p.lo_open, "hiClosed": p.hi_closed}
    return {"op": "in", "feature": p.feature, "values": list(p.values)}


def predicate_from_json(d: Mapping) -> Predicate:
    op, f = d["op"], d["feature"]
    if op in ("ge", "gt"):
        return NumericGE(f, float(d["value"]), op == "gt")
    if op in ("le", "lt"):
        return NumericLE(f, float(d["value"]), op == "lt")
    if op == "interval":
        return NumericInterval(f, float(d["lo"]), float(d["hi"]),
                               bool(d.get("loOpen", True)), bool(d.get("hiClosed", True)))
    if op == "in":
        return Membership(f, tuple(d["values"]))
    raise ValueError(f"unknown predicate op {op!r}")


def rule_to_json(r: Rule) -> dict:
    out = {
        "kind": "rule",
        "target": r.target.value,
        "predicates": [predicate_to_json(p) for p in r.predicates],
        "text": render(r),
        "provenance": r.provenance,
    }
    if r.precision is not None:
        out.update(precision=r.precision, coverage=r.coverage,
                   matched=r.n_matched, hits=r.n_hits)
    return out


def rule_from_json(d: Mapping) -> Rule:
    preds = tuple(predicate_from_json(p) for p in d.get("predicates", ()))
    return Rule(normalize(preds), Label(d["target"]), d.get("precision"), d.get("coverage"),
                d.get("matched"), d.get("hits"), d.get("provenance", ""))


def load_rule(path) -> Rule:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "best" in d:
        d = d["best"]
    if d.get("kind") == "activation-pattern":
        raise ValueError("activation patterns cannot be used as feature rules")
    return rule_from_json(d)
