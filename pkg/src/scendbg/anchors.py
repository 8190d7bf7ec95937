"""Anchors: high-precision local rules found by beam search with KL-LUCB.

The perturbation distribution is the scenario program itself: a candidate
anchor is turned into extra constraints (each anchored feature must stay in
the instance's quantile bin) and scenes are re-drawn by rejection.  The
surrogate forest labels the draws, and precision is the fraction that keeps
the target label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dsl import ScenarioProgram
from .evaluator import Label, LabeledExample
from .rules import Membership, NumericGE, NumericInterval, NumericLE, Predicate, Rule, dedupe, matches
from .sampler import (Columns, FeatureVector, RejectionExhausted, compile_program, rng_stream,
                      vectors_to_columns)
from .trees import RandomForest


class SurrogateDisagrees(ValueError):
    pass


@dataclass(frozen=True)
class AnchorConfig:
    precision_threshold: float = 0.95
    delta: float = 0.05
    epsilon: float = 0.1
    epsilon_stop: float = 0.05
    beam_width: int = 10
    batch_size: int = 32
    max_anchor_size: Optional[int] = 6
    max_covered_per_label: int = 50
    n_bins: int = 4
    coverage_samples: int = 10_000
    min_coverage: float = 0.001
    max_samples_per_candidate: int = 256
    max_rejections: int = 10_000
    perturbation: str = "bins"  # "bins" or "exact"

    def __post_init__(self):
        if not 0 < self.precision_threshold < 1:
            raise ValueError("precision_threshold must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.epsilon <= 0 or self.beam_width < 1:
            raise ValueError("epsilon must be > 0 and beam_width >= 1")
        if self.perturbation not in ("bins", "exact"):
            raise ValueError("perturbation must be 'bins' or 'exact'")


# ---------------------------------------------------------------- KL bounds

def kl_bernoulli(p, q):
    """KL divergence between Bernoulli(p) and Bernoulli(q); works elementwise."""
    p = np.minimum(np.maximum(p, 1e-7), 1 - 1e-7)
    q = np.minimum(np.maximum(q, 1e-7), 1 - 1e-7)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def _bisect(p, level, upper: bool):
    p = np.minimum(np.maximum(np.asarray(p, float), 1e-7), 1 - 1e-7)
    level = np.broadcast_to(np.asarray(level, float), p.shape)
    # KL(p, q) = neg_entropy - p log q - (1 - p) log(1 - q)
    neg_entropy = p * np.log(p) + (1 - p) * np.log(1 - p)
    width = np.sqrt(level / 2.0)
    if upper:
        lo, hi = p.copy(), np.minimum(1.0, p + width)
    else:
        lo, hi = np.maximum(0.0, p - width), p.copy()
    for _ in range(16):
        mid = np.minimum(np.maximum((lo + hi) / 2, 1e-7), 1 - 1e-7)
        over = neg_entropy - p * np.log(mid) - (1 - p) * np.log1p(-mid) > level
        if upper:
            hi, lo = np.where(over, mid, hi), np.where(over, lo, mid)
        else:
            lo, hi = np.where(over, mid, lo), np.where(over, hi, mid)
    out = hi if upper else lo
    return float(out) if out.ndim == 0 else out


def kl_upper(p, level):
    """Largest q >= p with KL(p, q) <= level."""
    return _bisect(p, level, True)


def kl_lower(p, level):
    """Smallest q <= p with KL(p, q) <= level."""
    return _bisect(p, level, False)


def exploration_rate(n_arms: int, t: int, delta: float) -> float:
    alpha, k = 1.1, 405.5
    temp = math.log(k * n_arms * t ** alpha / delta)
    return temp + math.log(temp)


# ---------------------------------------------------------------- discretization

@dataclass
class Discretizer:
    """Quantile bin edges per numeric feature; categorical features kept as-is."""
    edges: dict[str, np.ndarray]
    categorical: dict[str, bool]

    @classmethod
    def fit(cls, cols: Columns, schema, n_bins: int = 4) -> "Discretizer":
        edges, cat = {}, {}
        qs = np.arange(1, n_bins) / n_bins
        for d in schema:
            x = cols[d.name]
            if d.kind == "categorical":
                cat[d.name] = True
                edges[d.name] = np.unique(x.astype(str))
            else:
                cat[d.name] = False
                e = np.unique(np.quantile(x.astype(float), qs))
                # edges equal to the max would leave an empty top bin
                edges[d.name] = e[e < np.max(x)] if len(x) else e
        return cls(edges, cat)

    def varies(self, name: str) -> bool:
        return len(self.edges[name]) > (1 if self.categorical[name] else 0)

    def predicate(self, name: str, value) -> Predicate:
        if self.categorical[name]:
            return Membership(name, (str(value),))
        e = self.edges[name]
        k = int(np.searchsorted(e, float(value), side="left"))
        if k == 0:
            return NumericLE(name, float(e[0]))
        if k == len(e):
            return NumericGE(name, float(e[-1]), strict=True)
        return NumericInterval(name, float(e[k - 1]), float(e[k]), True, True)


# ---------------------------------------------------------------- search

@dataclass
class AnchorResult:
    rule: Rule
    precision: float
    lower: float
    upper: float
    n_samples: int
    coverage: float
    trace: list = field(default_factory=list)


class _Search:
    def __init__(self, instance: FeatureVector, target: str, surrogate: RandomForest,
                 program: ScenarioProgram, cfg: AnchorConfig, disc: Discretizer, seed: int,
                 coverage_cols: Columns):
        self.instance = instance
        self.target = str(target)
        self.forest = surrogate
        self.cp = compile_program(program)
        self.cfg = cfg
        self.rng = rng_stream(seed, "anchor", instance.seed_index, self.target)
        self.target_index = list(surrogate.classes).index(self.target)
        names = [n for n in self.cp.names if n in disc.edges and disc.varies(n)]
        self.features = names
        self.preds = [disc.predicate(n, instance[n]) for n in names]
        self.enc = surrogate.enc_template
        col_of = {n: j for j, n in enumerate(self.enc.names)}
        self.col = [col_of[n] for n in names]
        self.cov_X = self.enc.encode(coverage_cols)
        self.cov_masks = [self._holds(k, self.cov_X) for k in range(len(names))]
        # per-anchor samples (encoded rows, target hits) and unused labelled surplus
        self.X: dict[tuple, list] = {}
        self.hit: dict[tuple, list] = {}
        self.counts: dict[tuple, list] = {}
        self.pool: dict[tuple, tuple] = {}
        self.trace: list = []

    def _holds(self, k: int, X: np.ndarray) -> np.ndarray:
        p = self.preds[k]
        x = X[:, self.col[k]]
        if isinstance(p, Membership):
            codes = [self.enc.levels[self.col[k]].index(v) for v in p.values
                     if v in self.enc.levels[self.col[k]]]
            return np.isin(x, codes)
        return p.holds(x)

    def coverage(self, anchor: tuple) -> float:
        if not anchor:
            return 1.0
        m = np.ones(len(self.cov_X), bool)
        for k in anchor:
            m &= self.cov_masks[k]
        return float(m.mean())

    def rule(self, anchor: tuple, provenance: str) -> Rule:
        return Rule.of([self.preds[k] for k in sorted(anchor)], self.target, provenance)

    def _restriction(self, anchor: tuple) -> dict:
        out = {}
        for k in anchor:
            p, name = self.preds[k], self.features[k]
            if name not in self.cp.declared:
                continue
            if isinstance(p, Membership):
                out[name] = frozenset(p.values)
            elif isinstance(p, NumericGE):
                out[name] = (p.value, math.inf)
            elif isinstance(p, NumericLE):
                out[name] = (-math.inf, p.value)
            else:
                out[name] = (p.lo, p.hi)
        return out

    def _label(self, cols: Columns) -> tuple[np.ndarray, np.ndarray]:
        X = self.enc.encode(cols)
        return X, self.forest.predict_index(X) == self.target_index

    def _draw(self, anchor: tuple, n: int) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        if cfg.perturbation == "exact":
            overrides = {self.features[k]: self.instance[self.features[k]] for k in anchor}
            if any(self.features[k] not in self.cp.declared for k in anchor):
                raise ValueError("exact perturbation cannot pin derived features")
            return self._label(self.cp.sample_columns(self.rng, n, cfg.max_rejections * n,
                                                      overrides=overrides))
        X, hit = self.pool.get(anchor, (None, None))
        if X is None or len(X) < n:
            # draw generously; the labelled surplus serves later requests
            want = n + cfg.batch_size
            rule = Rule(tuple(self.preds[k] for k in anchor), Label.INCORRECT)
            cols = self.cp.sample_columns(self.rng, want, cfg.max_rejections * want,
                                          condition=rule.mask, chunk=max(2 * want, 512),
                                          restrict=self._restriction(anchor))
            X2, hit2 = self._label(cols)
            X = X2 if X is None else np.vstack([X, X2])
            hit = hit2 if hit is None else np.concatenate([hit, hit2])
        self.pool[anchor] = (X[n:], hit[n:])
        return X[:n], hit[:n]

    def _add(self, anchor: tuple, X: np.ndarray, hit: np.ndarray) -> None:
        self.X.setdefault(anchor, []).append(X)
        self.hit.setdefault(anchor, []).append(hit)
        c = self.counts.setdefault(anchor, [0, 0])
        c[0] += len(hit)
        c[1] += int(hit.sum())

    def sample(self, anchor: tuple, n: int) -> int:
        X, hit = self._draw(anchor, n)
        self._add(anchor, X, hit)
        return int(hit.sum())

    def stats(self, anchor: tuple) -> tuple[int, int]:
        c = self.counts.get(anchor)
        return (0, 0) if c is None else (c[0], c[1])

    def inherit(self, parent: tuple, k: int) -> tuple:
        """Child anchor seeded with the parent's samples that also satisfy predicate ``k``."""
        child = tuple(sorted(parent + (k,)))
        if child not in self.counts and parent in self.counts:
            X = np.vstack(self.X[parent])
            hit = np.concatenate(self.hit[parent])
            self.X[parent], self.hit[parent] = [X], [hit]
            m = self._holds(k, X)
            if m.any():
                self._add(child, X[m], hit[m])
        return child

    # KL-LUCB over a list of anchors; returns indices of the top ``top_n``
    def lucb(self, anchors: list[tuple], top_n: int) -> list[int]:
        cfg = self.cfg
        n_arms = len(anchors)
        for a in anchors:
            if self.stats(a)[0] == 0:
                self.sample(a, 1)
        if n_arms <= top_n:
            return list(range(n_arms))
        n = np.array([self.stats(a)[0] for a in anchors], float)
        pos = np.array([self.stats(a)[1] for a in anchors], float)
        ub, lb = np.zeros(n_arms), np.zeros(n_arms)
        t = 1

        def bounds():
            means = pos / n
            order = np.argsort(means, kind="stable")
            beta = exploration_rate(n_arms, t, cfg.delta)
            J, notJ = order[-top_n:], order[:-top_n]
            ub[notJ] = kl_upper(means[notJ], beta / n[notJ])
            lb[J] = kl_lower(means[J], beta / n[J])
            ut = notJ[int(np.argmax(ub[notJ]))]
            lt = J[int(np.argmin(lb[J]))]
            return ut, lt, J

        ut, lt, J = bounds()
        budget = cfg.max_samples_per_candidate * n_arms
        while ub[ut] - lb[lt] > cfg.epsilon and n.sum() < budget:
            for f in (ut, lt):
                pos[f] += self.sample(anchors[f], cfg.batch_size)
                n[f] += cfg.batch_size
            t += 1
            ut, lt, J = bounds()
        return [int(j) for j in J]

    def bounds_of(self, anchor: tuple, beta: float) -> tuple[float, float, float]:
        n, p = self.stats(anchor)
        mean = p / n
        return mean, kl_lower(mean, beta / n), kl_upper(mean, beta / n)

    def run(self, provenance: str) -> AnchorResult:
        cfg = self.cfg
        tau = cfg.precision_threshold
        n_feat = len(self.preds)
        max_size = n_feat if cfg.max_anchor_size is None else min(cfg.max_anchor_size, n_feat)

        # empty anchor: accept only with a lower bound above the threshold
        self.sample((), cfg.batch_size)
        beta0 = math.log(1.0 / cfg.delta)
        mean, lb, ub = self.bounds_of((), beta0)
        while mean >= tau and lb <= tau and self.stats(())[0] < cfg.max_samples_per_candidate:
            self.sample((), cfg.batch_size)
            mean, lb, ub = self.bounds_of((), beta0)
        self.trace.append({"anchor": [], "mean": mean, "lower": lb, "samples": self.stats(())[0]})
        if lb > tau:
            return self._result((), mean, lb, ub, provenance)

        best_of_size: dict[int, list[tuple]] = {0: [()]}
        best, best_cov, best_bounds = None, -1.0, None
        size = 1
        while size <= max_size:
            cands = []
            seen = set()
            for parent in best_of_size[size - 1]:
                for k in range(n_feat):
                    if k in parent:
                        continue
                    child = tuple(sorted(parent + (k,)))
                    if child in seen:
                        continue
                    seen.add(child)
                    cov = self.coverage(child)
                    # near-empty regions cannot be sampled by rejection in reasonable time
                    if cov <= best_cov or cov < cfg.min_coverage:
                        continue
                    cands.append(self.inherit(parent, k))
            if not cands:
                break
            chosen = self.lucb(cands, min(cfg.beam_width, len(cands)))
            best_of_size[size] = [cands[i] for i in chosen]
            beta = math.log(1.0 / (cfg.delta / (1 + (cfg.beam_width - 1) * n_feat)))
            stop = False
            for i in chosen:
                a = cands[i]
                mean, lb, ub = self.bounds_of(a, beta)
                while ((mean >= tau and lb < tau - cfg.epsilon_stop)
                       or (mean < tau and ub >= tau + cfg.epsilon_stop)) \
                        and self.stats(a)[0] < cfg.max_samples_per_candidate:
                    self.sample(a, cfg.batch_size)
                    mean, lb, ub = self.bounds_of(a, beta)
                cov = self.coverage(a)
                self.trace.append({"anchor": [self.features[k] for k in a], "mean": mean,
                                   "lower": lb, "upper": ub, "samples": self.stats(a)[0],
                                   "coverage": cov})
                if mean >= tau and lb > tau - cfg.epsilon_stop and cov > best_cov:
                    best, best_cov, best_bounds = a, cov, (mean, lb, ub)
                    if cov == 1.0:
                        stop = True
            if best is not None or stop:
                break
            size += 1

        if best is None:
            # nothing reached the threshold: highest lower bound among the largest anchors
            beta = math.log(1.0 / (cfg.delta / (1 + (cfg.beam_width - 1) * max(n_feat, 1))))
            last = best_of_size[max(best_of_size)]
            scored = [(self.bounds_of(a, beta), a) for a in last]
            best_bounds, best = max(scored, key=lambda t: (t[0][1], t[0][0]))
        return self._result(best, *best_bounds, provenance)

    def _result(self, anchor, mean, lb, ub, provenance) -> AnchorResult:
        return AnchorResult(self.rule(anchor, provenance), mean, lb, ub,
                            self.stats(anchor)[0], self.coverage(anchor), self.trace)


class AnchorExplainer:
    """Explains surrogate predictions over a scenario program's features."""

    def __init__(self, surrogate: RandomForest, program: ScenarioProgram, train_cols: Columns,
                 cfg: AnchorConfig = AnchorConfig(), seed: int = 0):
        self.surrogate = surrogate
        self.program = program
        self.cfg = cfg
        self.seed = seed
        cp = compile_program(program)
        self.disc = Discretizer.fit(train_cols, cp.schema, cfg.n_bins)
        self.coverage_cols = cp.sample_columns(rng_stream(seed, "anchor-coverage"),
                                               cfg.coverage_samples,
                                               cfg.max_rejections * cfg.coverage_samples)

    def explain(self, instance: FeatureVector, target: str, provenance: str = "anchor/bb") -> AnchorResult:
        pred = self.surrogate.predict_columns(vectors_to_columns([instance], instance.names))[0]
        if str(pred) != str(target):
            raise SurrogateDisagrees(f"surrogate labels sample {instance.seed_index} {pred}, not {target}")
        return _Search(instance, target, self.surrogate, self.program, self.cfg, self.disc,
                       self.seed, self.coverage_cols).run(provenance)


def explain_instance(instance: FeatureVector, target: str, surrogate: RandomForest,
                     program: ScenarioProgram, cfg: AnchorConfig = AnchorConfig(),
                     train_cols: Columns | None = None, seed: int = 0) -> Rule:
    """Anchor rule for one instance (bins fitted on ``train_cols`` or fresh samples)."""
    if train_cols is None:
        cp = compile_program(program)
        train_cols = cp.sample_columns(rng_stream(seed, "anchor-bins"), 1000, cfg.max_rejections * 1000)
    return AnchorExplainer(surrogate, program, train_cols, cfg, seed).explain(instance, target).rule


def extract_anchor_rules(train: Sequence[LabeledExample], target: str, explainer: AnchorExplainer,
                         label_of=None, provenance: str = "anchor/bb",
                         traces: list | None = None) -> list[Rule]:
    """Anchors for target-labelled instances in sample order until 50 are covered."""
    label_of = label_of or (lambda ex: ex.label.value)
    target = str(target)
    pool = sorted((ex for ex in train if label_of(ex) == target), key=lambda ex: ex.seed_index)
    covered: set[int] = set()
    rules: list[Rule] = []
    for ex in pool:
        if len(covered) >= explainer.cfg.max_covered_per_label:
            break
        if ex.seed_index in covered:
            continue
        try:
            res = explainer.explain(ex.features, target, provenance)
        except SurrogateDisagrees:
            continue
        except RejectionExhausted:
            continue
        rules.append(res.rule)
        covered |= {e.seed_index for e in pool if matches(res.rule, e.features)}
        if traces is not None:
            traces.append({"seedIndex": ex.seed_index, "rule": res.rule.render(),
                           "precision": res.precision, "lower": res.lower, "upper": res.upper,
                           "samples": res.n_samples, "coverage": res.coverage,
                           "candidates": res.trace})
    return dedupe(rules)
