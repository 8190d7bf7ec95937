"""CART-style classification trees (weighted Gini) and a bagged forest.

Numeric splits send ``x <= threshold`` left, with thresholds at midpoints of
consecutive distinct values.  Categorical splits send a subset of levels
left: every subset is tried for up to 12 levels present at the node, and
one-vs-rest beyond that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dsl import FeatureDescriptor
from .rules import Membership, NumericGE, NumericLE, Rule

MAX_EXHAUSTIVE_LEVELS = 12

# Incorrect-flavoured classes come first so argmax ties favour them.
CLASS_PRIORITY = ("incorrect", "incorrect-dp", "incorrect-unlabelled",
                  "correct", "correct-dp", "correct-unlabelled")


class EmptyData(ValueError):
    pass


@dataclass(frozen=True)
class TreeConfig:
    min_split: int = 20
    min_bucket: int = 7
    complexity_penalty: float = 0.01
    max_depth: int = 30
    label_weights: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.min_bucket > self.min_split:
            raise ValueError("min_bucket must not exceed min_split")
        if self.complexity_penalty < 0:
            raise ValueError("complexity_penalty must be >= 0")


def balanced_weights(labels: Sequence[str]) -> dict[str, float]:
    """Inverse-frequency weights, scaled so the total weight equals ``len(labels)``."""
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    k = len(values)
    return {str(v): len(labels) / (k * c) for v, c in zip(values, counts)}


def order_classes(labels) -> tuple[str, ...]:
    present = set(map(str, labels))
    known = [c for c in CLASS_PRIORITY if c in present]
    return tuple(known + sorted(present - set(known)))


@dataclass
class Encoded:
    """Feature matrix; categorical columns hold integer level codes."""
    X: np.ndarray
    names: tuple[str, ...]
    categorical: tuple[bool, ...]
    levels: tuple[Optional[tuple[str, ...]], ...]

    @property
    def n_features(self) -> int:
        return len(self.names)

    def encode(self, cols: Mapping[str, np.ndarray]) -> np.ndarray:
        n = len(cols[self.names[0]]) if self.names else 0
        X = np.empty((n, len(self.names)))
        for j, name in enumerate(self.names):
            if self.categorical[j]:
                lv = np.asarray(self.levels[j], dtype=str)
                order = np.argsort(lv)
                v = np.asarray(cols[name]).astype(str)
                pos = np.clip(np.searchsorted(lv[order], v), 0, len(lv) - 1)
                hit = lv[order][pos] == v
                X[:, j] = np.where(hit, order[pos], -1)
            else:
                X[:, j] = np.asarray(cols[name], float)
        return X


def encode_columns(cols: Mapping[str, np.ndarray], schema: Sequence[FeatureDescriptor] | None = None,
                   names: Sequence[str] | None = None) -> Encoded:
    if schema is not None:
        names = [d.name for d in schema]
        cat = [d.kind == "categorical" for d in schema]
        levels = [tuple(d.domain) if d.kind == "categorical" else None for d in schema]
    else:
        names = list(names if names is not None else cols)
        cat = [cols[n].dtype.kind in "USO" for n in names]
        levels = [tuple(sorted(set(map(str, cols[n])))) if c else None for n, c in zip(names, cat)]
    enc = Encoded(np.empty((0, 0)), tuple(names), tuple(cat), tuple(levels))
    enc.X = enc.encode(cols)
    return enc


# ---------------------------------------------------------------- tree

@dataclass
class DecisionTree:
    feature: np.ndarray      # -1 at leaves
    threshold: np.ndarray
    cat_mask: np.ndarray     # bitmask of level codes routed left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # weighted class totals per node
    count: np.ndarray        # unweighted class counts per node
    gain: np.ndarray         # Gini decrease of the node's split (0 at leaves)
    depth: np.ndarray
    classes: tuple[str, ...]
    names: tuple[str, ...]
    categorical: tuple[bool, ...]
    levels: tuple

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaf_label(self, node: int) -> str:
        return self.classes[int(np.argmax(self.value[node]))]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            f = self.feature[nd]
            x = X[active, f]
            cat = np.asarray(self.categorical)[f]
            go_left = np.where(
                cat,
                (self.cat_mask[nd] >> np.clip(x, 0, 62).astype(np.int64)) & 1 & (x >= 0),
                x <= self.threshold[nd],
            ).astype(bool)
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes)[self.predict_index(X)]

    def path(self, leaf: int) -> list[tuple[int, bool]]:
        parent = {}
        for nd in range(self.n_nodes):
            if self.feature[nd] >= 0:
                parent[int(self.left[nd])] = (nd, True)
                parent[int(self.right[nd])] = (nd, False)
        out = []
        while leaf in parent:
            nd, is_left = parent[leaf]
            out.append((nd, is_left))
            leaf = nd
        return out[::-1]

    def leaves(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.feature[i] < 0]

    def to_json(self) -> dict:
        return {
            "classes": list(self.classes), "features": list(self.names),
            "categorical": list(self.categorical),
            "levels": [list(lv) if lv else None for lv in self.levels],
            "nodes": [
                {"feature": int(self.feature[i]), "threshold": None if math.isnan(self.threshold[i]) else float(self.threshold[i]),
                 "catMask": int(self.cat_mask[i]), "left": int(self.left[i]),
                 "right": int(self.right[i]), "value": [float(v) for v in self.value[i]],
                 "count": [int(c) for c in self.count[i]], "gain": float(self.gain[i])}
                for i in range(self.n_nodes)
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph tree {", "  node [shape=box];"]
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                lab = f"{self.leaf_label(i)}\\n{[int(c) for c in self.count[i]]}"
            else:
                lab = _split_text(self, i, True)
            lines.append(f'  n{i} [label="{lab}"];')
            if self.feature[i] >= 0:
                lines.append(f'  n{i} -> n{int(self.left[i])} [label="yes"];')
                lines.append(f'  n{i} -> n{int(self.right[i])} [label="no"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _split_text(t: DecisionTree, nd: int, is_left: bool) -> str:
    f = int(t.feature[nd])
    name = t.names[f]
    if t.categorical[f]:
        left = [lv for k, lv in enumerate(t.levels[f]) if (int(t.cat_mask[nd]) >> k) & 1]
        return f"{name} in {{{', '.join(left)}}}" if is_left else f"{name} not in {{{', '.join(left)}}}"
    return f"{name} <= {t.threshold[nd]:.6g}" if is_left else f"{name} > {t.threshold[nd]:.6g}"


def gini_mass(class_w: np.ndarray) -> np.ndarray:
    """Weight times Gini impurity, ``W - sum(w_c^2) / W`` (0 for empty)."""
    W = class_w.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = W - (class_w ** 2).sum(axis=-1) / W
    return np.where(W > 0, out, 0.0)


def gini(class_w: np.ndarray) -> float:
    W = float(np.sum(class_w))
    if W <= 0:
        return 0.0
    p = np.asarray(class_w, float) / W
    return float(1.0 - np.sum(p * p))


@dataclass
class _Candidate:
    gain: float
    feature: int
    threshold: float = math.nan
    mask: int = 0


def _numeric_candidates(x, yk, wk, n_classes, total, min_bucket):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(xs)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), yk[order]] = wk[order]
    cum = np.cumsum(onehot, axis=0)[:-1]
    pos = np.arange(1, n)  # rows on the left
    ok = (xs[:-1] < xs[1:]) & (pos >= min_bucket) & (n - pos >= min_bucket)
    if not ok.any():
        return None
    left = cum[ok]
    right = total - left
    W = total.sum()
    gain = (gini_mass(total) - gini_mass(left) - gini_mass(right)) / W
    i = np.flatnonzero(ok)
    thr = (xs[i] + xs[i + 1]) / 2.0
    return gain, thr


def _categorical_candidates(x, yk, wk, n_classes, total, min_bucket):
    codes = x.astype(np.int64)
    present = np.unique(codes)
    m = len(present)
    if m < 2:
        return None
    idx = np.searchsorted(present, codes)
    S = np.zeros((m, n_classes))
    np.add.at(S, (idx, yk), wk)
    cnt = np.bincount(idx, minlength=m).astype(float)
    if m <= MAX_EXHAUSTIVE_LEVELS:
        subsets = np.arange(1, 1 << (m - 1), dtype=np.int64)
        B = ((subsets[:, None] >> np.arange(m)) & 1).astype(float)
    else:
        B = np.eye(m)
    nl = B @ cnt
    ok = (nl >= min_bucket) & (len(codes) - nl >= min_bucket)
    if not ok.any():
        return None
    B = B[ok]
    left = B @ S
    right = total - left
    gain = (gini_mass(total) - gini_mass(left) - gini_mass(right)) / total.sum()
    masks = (B.astype(np.int64) * (np.int64(1) << present.astype(np.int64))).sum(axis=1)
    return gain, masks


def best_split(X, y, w, rows, n_classes, categorical, min_bucket, features, rng=None):
    """Best Gini-decrease split of ``rows`` over ``features`` (ties broken by ``rng``)."""
    yk = y[rows]
    wk = w[rows]
    total = np.bincount(yk, weights=wk, minlength=n_classes).astype(float)
    cands: list[_Candidate] = []
    best = -math.inf
    for j in features:
        x = X[rows, j]
        if categorical[j]:
            res = _categorical_candidates(x, yk, wk, n_classes, total, min_bucket)
            if res is None:
                continue
            gain, masks = res
            k = int(np.argmax(gain))
            g = float(gain[k])
            ties = np.flatnonzero(gain >= g - 1e-12)
            cand = [_Candidate(float(gain[t]), j, mask=int(masks[t])) for t in ties]
        else:
            res = _numeric_candidates(x, yk, wk, n_classes, total, min_bucket)
            if res is None:
                continue
            gain, thr = res
            g = float(gain.max())
            ties = np.flatnonzero(gain >= g - 1e-12)
            cand = [_Candidate(float(gain[t]), j, threshold=float(thr[t])) for t in ties]
        if g > best + 1e-12:
            best = g
            cands = [c for c in cand if c.gain >= best - 1e-12]
        elif g >= best - 1e-12:
            best = max(best, g)
            cands = [c for c in cands + cand if c.gain >= best - 1e-12]
    if not cands:
        return None, total
    if len(cands) > 1 and rng is not None:
        return cands[int(rng.integers(len(cands)))], total
    return cands[0], total


def fit_tree(X: np.ndarray, y: np.ndarray, classes: Sequence[str], cfg: TreeConfig = TreeConfig(),
             seed: int = 0, *, categorical: Sequence[bool] | None = None, names=None, levels=None,
             rows: np.ndarray | None = None, max_features: int | None = None) -> DecisionTree:
    """Grow a tree on class indices ``y`` (indices into ``classes``).

    ``rows`` may repeat indices (bootstrap); ``max_features`` draws a random
    feature subset per split.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0 or (rows is not None and len(rows) == 0):
        raise EmptyData("cannot fit a tree on no data")
    n_features = X.shape[1]
    categorical = tuple(categorical) if categorical is not None else (False,) * n_features
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(n_features))
    levels = tuple(levels) if levels is not None else (None,) * n_features
    C = len(classes)
    weights = cfg.label_weights or {}
    w = np.array([float(weights.get(classes[k], 1.0)) for k in range(C)])[y]
    rows = np.arange(len(y)) if rows is None else np.asarray(rows, dtype=np.int64)
    rng = np.random.default_rng(seed)

    feat, thr, msk, lft, rgt, val, cnt, gns, dep = [], [], [], [], [], [], [], [], []

    def new_node(r, depth):
        feat.append(-1); thr.append(math.nan); msk.append(0); lft.append(-1); rgt.append(-1)
        val.append(np.bincount(y[r], weights=w[r], minlength=C).astype(float))
        cnt.append(np.bincount(y[r], minlength=C))
        gns.append(0.0); dep.append(depth)
        return len(feat) - 1

    root_mass = None
    stack = [(new_node(rows, 0), rows, 0)]
    while stack:
        nd, r, depth = stack.pop()
        total = val[nd]
        mass = float(gini_mass(total))
        if root_mass is None:
            root_mass = mass
        if len(r) < cfg.min_split or depth >= cfg.max_depth or mass <= 1e-12 * max(1.0, total.sum()):
            continue
        if max_features is not None and max_features < n_features:
            features = np.sort(rng.choice(n_features, size=max_features, replace=False))
        else:
            features = range(n_features)
        cand, _ = best_split(X, y, w, r, C, categorical, cfg.min_bucket, features, rng)
        if cand is None:
            continue
        x = X[r, cand.feature]
        if categorical[cand.feature]:
            go_left = ((cand.mask >> np.clip(x, 0, 62).astype(np.int64)) & 1).astype(bool) & (x >= 0)
        else:
            go_left = x <= cand.threshold
        rl, rr = r[go_left], r[~go_left]
        tl = np.bincount(y[rl], weights=w[rl], minlength=C).astype(float)
        tr = np.bincount(y[rr], weights=w[rr], minlength=C).astype(float)
        gain = float((gini_mass(total) - gini_mass(tl) - gini_mass(tr)) / total.sum())
        if root_mass <= 0 or gain * total.sum() / root_mass < cfg.complexity_penalty:
            continue
        feat[nd] = cand.feature
        thr[nd] = cand.threshold
        msk[nd] = cand.mask
        gns[nd] = gain
        li = new_node(rl, depth + 1)
        ri = new_node(rr, depth + 1)
        lft[nd], rgt[nd] = li, ri
        stack.append((ri, rr, depth + 1))
        stack.append((li, rl, depth + 1))

    return DecisionTree(
        np.array(feat, dtype=np.int64), np.array(thr), np.array(msk, dtype=np.int64),
        np.array(lft, dtype=np.int64), np.array(rgt, dtype=np.int64),
        np.array(val), np.array(cnt), np.array(gns), np.array(dep, dtype=np.int64),
        tuple(classes), names, categorical, levels,
    )


def fit_tree_encoded(enc: Encoded, labels: Sequence[str], cfg: TreeConfig = TreeConfig(),
                     seed: int = 0, classes: Sequence[str] | None = None) -> DecisionTree:
    labels = [str(v) for v in labels]
    if not labels:
        raise EmptyData("cannot fit a tree on no data")
    classes = tuple(classes) if classes is not None else order_classes(labels)
    lut = {c: i for i, c in enumerate(classes)}
    y = np.array([lut[v] for v in labels], dtype=np.int64)
    return fit_tree(enc.X, y, classes, cfg, seed, categorical=enc.categorical,
                    names=enc.names, levels=enc.levels)


def extract_rules(t: DecisionTree, target: str, provenance: str = "dt") -> list[Rule]:
    """One rule per leaf predicting ``target``: the conjunction of its path decisions."""
    out = []
    for leaf in t.leaves():
        if t.leaf_label(leaf) != str(target):
            continue
        preds = []
        for nd, is_left in t.path(leaf):
            f = int(t.feature[nd])
            name = t.names[f]
            if t.categorical[f]:
                lv = t.levels[f]
                inside = [lv[k] for k in range(len(lv)) if ((int(t.cat_mask[nd]) >> k) & 1) == is_left]
                preds.append(Membership(name, tuple(inside)))
            elif is_left:
                preds.append(NumericLE(name, float(t.threshold[nd])))
            else:
                preds.append(NumericGE(name, float(t.threshold[nd]), strict=True))
        out.append(Rule.of(preds, target, provenance))
    return out


# ---------------------------------------------------------------- forest

@dataclass
class RandomForest:
    trees: list[DecisionTree]
    classes: tuple[str, ...]
    feature_subset_size: int
    enc_template: Optional[Encoded] = None
    _flat: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _flatten(self):
        if self._flat is None:
            offs, acc = [], 0
            for t in self.trees:
                offs.append(acc)
                acc += t.n_nodes
            cat_cols = np.asarray(self.trees[0].categorical)
            f = np.concatenate([t.feature for t in self.trees])
            left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offs)])
            right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offs)])
            is_cat = np.where(f >= 0, cat_cols[np.maximum(f, 0)], False)
            # numeric nodes test x <= thr; categorical ones look their code up in the mask
            thr = np.concatenate([t.threshold for t in self.trees])
            self._flat = (
                np.array(offs, dtype=np.int64), f, thr,
                np.concatenate([t.cat_mask for t in self.trees]).astype(np.int64),
                np.stack([left, right], axis=1).ravel(),
                np.concatenate([np.argmax(t.value, axis=1) for t in self.trees]),
                is_cat, bool(is_cat.any()),
            )
        return self._flat

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(n, n_classes) vote counts."""
        offs, feat, thr, msk, child, leaf_cls, is_cat, any_cat = self._flatten()
        X = np.ascontiguousarray(X, dtype=float)
        n, T = len(X), len(self.trees)
        F = X.shape[1]
        flatX = X.ravel()
        node = np.tile(offs, n)
        base = np.repeat(np.arange(n, dtype=np.int64) * F, T)
        active = np.flatnonzero(feat[node] >= 0)
        while len(active):
            nd = node[active]
            x = flatX[base[active] + feat[nd]]
            go_right = x > thr[nd]
            if any_cat:
                c = is_cat[nd]
                if c.any():
                    xc = x[c]
                    bit = (msk[nd[c]] >> np.clip(xc, 0, 62).astype(np.int64)) & 1
                    go_right[c] = ~((bit == 1) & (xc >= 0))
            nxt = child[2 * nd + go_right]
            node[active] = nxt
            active = active[feat[nxt] >= 0]
        cls = leaf_cls[node].reshape(n, T)
        out = np.zeros((n, len(self.classes)), dtype=np.int64)
        for k in range(len(self.classes)):
            out[:, k] = (cls == k).sum(axis=1)
        return out

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        # argmax takes the first maximum: ties go to the incorrect-flavoured class
        return np.argmax(self.votes(np.asarray(X, float)), axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes)[self.predict_index(X)]

    def predict_columns(self, cols: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.predict(self.enc_template.encode(cols))

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "featureSubsetSize": self.feature_subset_size,
                "trees": [t.to_json() for t in self.trees]}


FOREST_TREE_CONFIG = TreeConfig(min_split=4, min_bucket=2, complexity_penalty=0.0, max_depth=30)


def fit_forest(enc: Encoded, labels: Sequence[str], n_trees: int = 100, seed: int = 0,
               cfg: TreeConfig = FOREST_TREE_CONFIG, bootstrap: bool = True,
               max_features: int | None = None, classes: Sequence[str] | None = None) -> RandomForest:
    """Bagged trees with a random feature subset of size ceil(sqrt(F)) per split."""
    from .sampler import derive_seed

    labels = [str(v) for v in labels]
    if not labels:
        raise EmptyData("cannot fit a forest on no data")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    classes = tuple(classes) if classes is not None else order_classes(labels)
    lut = {c: i for i, c in enumerate(classes)}
    y = np.array([lut[v] for v in labels], dtype=np.int64)
    F = enc.n_features
    k = max_features if max_features is not None else max(1, math.ceil(math.sqrt(F)))
    trees = []
    for t in range(n_trees):
        tseed = derive_seed(seed, "tree", t)
        rng = np.random.default_rng(tseed)
        rows = rng.integers(0, len(y), len(y)) if bootstrap else None
        trees.append(fit_tree(enc.X, y, classes, cfg, tseed, categorical=enc.categorical,
                              names=enc.names, levels=enc.levels, rows=rows,
                              max_features=k if k < F else None))
    template = Encoded(np.empty((0, F)), enc.names, enc.categorical, enc.levels)
    return RandomForest(trees, classes, k, template)
