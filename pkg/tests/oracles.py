"""Slow, obviously-correct reference implementations used by the tests."""

import itertools
import math

import numpy as np

from scendbg.evaluator import iou
from scendbg.world import BoundingBox


def brute_force_matching(gt, dets, iou_threshold=0.5):
    """Best assignment by enumeration: most matched pairs, then largest total IoU.

    Returns ``(tp, fp, fn)``.
    """
    best = (0, 0.0)
    n, m = len(gt), len(dets)
    for k in range(1, min(n, m) + 1):
        for gs in itertools.combinations(range(n), k):
            for ds in itertools.permutations(range(m), k):
                vals = [iou(gt[g], dets[d]) for g, d in zip(gs, ds)]
                if all(v > iou_threshold for v in vals):
                    best = max(best, (k, sum(vals)))
    tp = best[0]
    return tp, m - tp, n - tp


def random_instance(rng, max_boxes=4, frame=100.0):
    """Ground truths and detections; most detections are jittered copies."""
    def box(cx, cy, w, h):
        return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    ng, nd = rng.integers(0, max_boxes + 1, 2)
    gt = [box(*rng.uniform(0.2 * frame, 0.8 * frame, 2), *rng.uniform(0.1 * frame, 0.4 * frame, 2))
          for _ in range(ng)]
    dets = []
    for _ in range(nd):
        if gt and rng.random() < 0.8:
            g = gt[rng.integers(len(gt))]
            cx, cy = (g.x_min + g.x_max) / 2, (g.y_min + g.y_max) / 2
            dets.append(box(cx + rng.normal(0, 0.05 * frame), cy + rng.normal(0, 0.05 * frame),
                            g.width * rng.uniform(0.7, 1.3), (g.y_max - g.y_min) * rng.uniform(0.7, 1.3)))
        else:
            dets.append(box(*rng.uniform(0.2 * frame, 0.8 * frame, 2),
                            *rng.uniform(0.1 * frame, 0.4 * frame, 2)))
    return gt, dets


def distinct_ious(gt, dets, tol=1e-9):
    vals = sorted(iou(g, d) for g in gt for d in dets)
    return all(b - a > tol for a, b in zip(vals, vals[1:]) if b > 0)


def one_detection_per_truth(gt, dets, iou_threshold=0.5):
    return all(sum(iou(g, d) > iou_threshold for d in dets) <= 1 for g in gt)


def gini_decrease(y, w, left_mask):
    """Weighted Gini decrease of one split, straight from the definition."""
    def impurity(mask):
        total = float(w[mask].sum())
        if total == 0:
            return 0.0, 0.0
        cls = np.unique(y)
        return total, 1.0 - sum((w[mask & (y == c)].sum() / total) ** 2 for c in cls)

    everything = np.ones(len(y), bool)
    W, g = impurity(everything)
    wl, gl = impurity(left_mask)
    wr, gr = impurity(~left_mask)
    return g - (wl * gl + wr * gr) / W


def best_root_split(X, y, w, categorical, min_bucket=1):
    """Exhaustive search over every threshold and every level subset."""
    best = -math.inf
    for j in range(X.shape[1]):
        x = X[:, j]
        if categorical[j]:
            levels = sorted(set(x.tolist()))
            for r in range(1, len(levels)):
                for subset in itertools.combinations(levels, r):
                    mask = np.isin(x, subset)
                    if min(mask.sum(), (~mask).sum()) >= min_bucket:
                        best = max(best, gini_decrease(y, w, mask))
        else:
            vals = sorted(set(x.tolist()))
            for a, b in zip(vals, vals[1:]):
                mask = x <= (a + b) / 2
                if min(mask.sum(), (~mask).sum()) >= min_bucket:
                    best = max(best, gini_decrease(y, w, mask))
    return best


def random_dataset(rng, max_rows=200, max_features=5):
    """Small mixed-type dataset with class weights; coarse grids make ties common."""
    n = int(rng.integers(4, max_rows + 1))
    F = int(rng.integers(1, max_features + 1))
    categorical = rng.random(F) < 0.4
    X = np.empty((n, F))
    for j in range(F):
        if categorical[j]:
            X[:, j] = rng.integers(0, rng.integers(2, 6), n)
        elif rng.random() < 0.5:
            X[:, j] = rng.integers(0, 8, n) / 2
        else:
            X[:, j] = rng.normal(0, 1, n)
    C = int(rng.integers(2, 4))
    y = rng.integers(0, C, n)
    return X, y, categorical, rng.uniform(0.5, 3.0, C)


def root_gain_matches_oracle(rng, **kw):
    """Fit one unpruned tree and compare its root gain with the exhaustive optimum."""
    from scendbg.trees import TreeConfig, fit_tree

    X, y, cat, cw = random_dataset(rng, **kw)
    classes = [f"c{k}" for k in range(len(cw))]
    cfg = TreeConfig(2, 1, 0.0, label_weights=dict(zip(classes, cw)))
    t = fit_tree(X, y, classes, cfg, categorical=cat)
    best = best_root_split(X, y, cw[y], cat)
    if t.is_leaf(0):
        return best == -math.inf or abs(best) <= 1e-12
    return abs(t.gain[0] - best) <= 1e-12


CATEGORICAL_PROGRAM = """
param a = choice("A0", "A1", "A2", "A3")
param b = choice("B0", "B1", "B2", "B3")
param c = choice("C0", "C1", "C2", "C3")
param d = choice("D0", "D1", "D2", "D3")
ego = car(x: 0, y: 0, heading: 0, model: "BLISTA", color: (0, 0, 0))
"""


class RuleSurrogate:
    """Stands in for a forest: predicts "incorrect" exactly on a conjunction of
    categorical levels, except that a fixed fraction of those calls flip.

    With ``noise = 1 - p`` every anchor that implies the conjunction has
    precision exactly ``p``.
    """
    classes = ("incorrect", "correct")

    def __init__(self, enc, rule, noise=0.0, seed=0):
        self.enc_template = enc
        self.rule = tuple(rule)
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        self.col = {n: j for j, n in enumerate(enc.names)}

    def predict_index(self, X):
        m = np.ones(len(X), bool)
        for name, level in self.rule:
            j = self.col[name]
            m &= X[:, j] == self.enc_template.levels[j].index(level)
        if self.noise:
            m &= self.rng.random(len(X)) >= self.noise
        return np.where(m, 0, 1)

    def predict_columns(self, cols):
        return np.asarray(self.classes)[self.predict_index(self.enc_template.encode(cols))]


def anchor_runs(rule, noise, cfg, n_runs):
    """Explain ``n_runs`` target instances, one fresh surrogate and seed per run."""
    from scendbg.anchors import AnchorExplainer, SurrogateDisagrees
    from scendbg.dsl import parse
    from scendbg.sampler import compile_program, rng_stream
    from scendbg.trees import encode_columns

    program = parse(CATEGORICAL_PROGRAM)
    cp = compile_program(program)
    cols = cp.sample_columns(rng_stream(0, "bins"), 500, 10**6)
    enc = encode_columns(cols, cp.schema)
    pool = cp.sample_columns(rng_stream(0, "instances"), 2000, 10**7)
    inside = [i for i in range(2000) if all(pool[k][i] == v for k, v in rule)]
    out = []
    for s in range(n_runs):
        explainer = AnchorExplainer(RuleSurrogate(enc, rule, noise, s), program, cols, cfg, seed=s)
        fv = cp.row(pool, inside[s % len(inside)], s)
        while True:
            # a noisy surrogate may disown the instance on one call; ask again
            try:
                out.append(explainer.explain(fv, "incorrect"))
                break
            except SurrogateDisagrees:
                pass
    return out
