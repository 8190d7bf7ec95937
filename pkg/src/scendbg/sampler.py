"""Rejection sampling of feature vectors from a scenario program.

Expressions are evaluated column-wise over numpy arrays so that a batch of
candidate scenes costs one pass over the AST.  Each vector of :func:`sample`
owns its own Philox stream keyed by ``(seed, index)``, which makes vector
``i`` reproducible on its own and independent of how work is split.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from . import world
from .dsl import (
    And, BinOp, Call, Categorical, Compare, Constant, Draw, FeatureDescriptor, InSet,
    Neg, Num, Ref, ScenarioProgram, Str, UniformInt, UniformReal, feature_schema,
)

Columns = dict[str, np.ndarray]

_MASK64 = (1 << 64) - 1


class RejectionExhausted(RuntimeError):
    def __init__(self, sample_index: int, attempts: int):
        super().__init__(f"sample {sample_index}: no draw satisfied the requires "
                         f"after {attempts} attempts")
        self.sample_index = sample_index
        self.attempts = attempts


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    max_rejections_per_sample: int = 10_000

    def __post_init__(self):
        if self.max_rejections_per_sample < 1:
            raise ValueError("max_rejections_per_sample must be >= 1")


@dataclass(frozen=True)
class FeatureVector:
    """One sampled scene description, aligned with the program's feature schema."""
    names: tuple[str, ...]
    values: tuple
    seed_index: int

    def __getitem__(self, name: str):
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def get(self, name: str, default=None):
        return self[name] if name in self.names else default

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Counter-style generator for the stream named by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([_key(seed)] + [_key(k) for k in keys])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys) -> int:
    ss = np.random.SeedSequence([_key(seed)] + [_key(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------- evaluation

def draw_dist(d, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(d, UniformReal):
        return rng.uniform(d.lo, d.hi, n)
    if isinstance(d, UniformInt):
        return rng.integers(d.lo, d.hi + 1, n).astype(float)
    if isinstance(d, Categorical):
        return np.asarray(d.values)[rng.integers(0, len(d.values), n)]
    if isinstance(d, Constant):
        if isinstance(d.value, str):
            return np.full(n, d.value)
        return np.full(n, float(d.value))
    raise TypeError(d)


def truncate(d, bound):
    """``d`` restricted to ``bound``: a ``(lo, hi)`` closed interval or a set of values.

    The result may cover slightly more than the bound (integer rounding,
    open ends); callers still check the exact condition.  None means empty.
    """
    if isinstance(bound, (set, frozenset)):
        if not isinstance(d, Categorical):
            return d
        vals = tuple(v for v in d.values if v in bound)
        return Categorical(vals) if vals else None
    lo, hi = bound
    if isinstance(d, UniformReal):
        a, b = max(d.lo, lo), min(d.hi, hi)
        return UniformReal(a, b) if a <= b else None
    if isinstance(d, UniformInt):
        a = max(d.lo, int(np.ceil(lo)) if np.isfinite(lo) else d.lo)
        b = min(d.hi, int(np.floor(hi)) if np.isfinite(hi) else d.hi)
        return UniformInt(a, b) if a <= b else None
    return d


class EmptyRestriction(ValueError):
    pass


def heading_diff(a, b):
    d = np.mod(np.abs(np.asarray(a, float) - np.asarray(b, float)), 360.0)
    return np.minimum(d, 360.0 - d)


def evaluate(e, cols: Mapping[str, np.ndarray], rng: Optional[np.random.Generator], n: int):
    """Vectorized value of expression ``e`` over ``n`` rows of ``cols``."""
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Str):
        return e.value
    if isinstance(e, Ref):
        return cols[e.name]
    if isinstance(e, Draw):
        if rng is None:
            raise ValueError("expression draws need a generator")
        return draw_dist(e.dist, rng, n)
    if isinstance(e, Neg):
        return -evaluate(e.operand, cols, rng, n)
    if isinstance(e, BinOp):
        a = evaluate(e.left, cols, rng, n)
        b = evaluate(e.right, cols, rng, n)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.asarray(b, float)
            return np.where(b == 0, np.nan, np.asarray(a, float) / np.where(b == 0, 1.0, b))
    if isinstance(e, Call):
        a, b = e.args
        if e.func == "dist":
            return np.hypot(cols[f"{a}.x"] - cols[f"{b}.x"], cols[f"{a}.y"] - cols[f"{b}.y"])
        if e.func == "headingDiff":
            return heading_diff(cols[f"{a}.heading"], cols[f"{b}.heading"])
        return world.visible(cols[f"{a}.x"], cols[f"{a}.y"], cols[f"{a}.heading"],
                             cols[f"{b}.x"], cols[f"{b}.y"])
    if isinstance(e, Compare):
        a = evaluate(e.left, cols, rng, n)
        b = evaluate(e.right, cols, rng, n)
        if e.op == "==":
            return np.asarray(a == b)
        with np.errstate(invalid="ignore"):
            if e.op == "<":
                return np.asarray(a < b)
            if e.op == "<=":
                return np.asarray(a <= b)
            if e.op == ">":
                return np.asarray(a > b)
            return np.asarray(a >= b)
    if isinstance(e, InSet):
        return np.isin(evaluate(e.operand, cols, rng, n), list(e.values))
    if isinstance(e, And):
        out = np.ones(n, bool)
        for t in e.terms:
            out &= evaluate(t, cols, rng, n)
        return out
    raise TypeError(e)


class CompiledProgram:
    """A program plus its schema, able to draw and check column batches."""

    def __init__(self, program: ScenarioProgram):
        self.program = program
        self.schema: list[FeatureDescriptor] = feature_schema(program)
        self.names = tuple(d.name for d in self.schema)
        self.by_name = {d.name: d for d in self.schema}
        self.declared = tuple(d.name for d in self.schema if not d.derived)
        self.derived = tuple(d.name for d in self.schema if d.derived)

    def draw(self, rng: np.random.Generator, n: int,
             overrides: Optional[Mapping[str, object]] = None,
             restrict: Optional[Mapping[str, object]] = None) -> Columns:
        """Draw ``n`` rows ignoring requires.

        ``overrides`` pins declared features; ``restrict`` truncates the
        distributions of independently drawn declared features (see
        :func:`truncate`).
        """
        overrides = overrides or {}
        restrict = restrict or {}
        cols: Columns = {}

        def cut(name, d, within=None):
            if name not in restrict:
                return d
            if within is not None and not (isinstance(d, (UniformReal, UniformInt))
                                           and within[0] <= d.lo and d.hi <= within[1]):
                return d
            t = truncate(d, restrict[name])
            if t is None:
                raise EmptyRestriction(name)
            return t

        def cut_expr(name, e, within=None):
            if isinstance(e, Draw) and name in restrict:
                return Draw(cut(name, e.dist, within))
            return e

        def put(name, fn):
            if name in overrides:
                v = overrides[name]
                cols[name] = np.full(n, v) if isinstance(v, str) else np.full(n, float(v))
            else:
                v = fn()
                cols[name] = v if isinstance(v, np.ndarray) and v.shape == (n,) else np.full(n, v)

        for prm in self.program.params:
            put(prm.name, lambda: draw_dist(cut(prm.name, prm.dist), rng, n))
        for obj in self.program.objects:
            o = obj.name
            put(f"{o}.x", lambda: evaluate(cut_expr(f"{o}.x", obj.x), cols, rng, n))
            put(f"{o}.y", lambda: evaluate(cut_expr(f"{o}.y", obj.y), cols, rng, n))
            # wrapping makes truncation unsafe unless the draw already lies in [0, 360]
            put(f"{o}.heading", lambda: np.mod(evaluate(cut_expr(f"{o}.heading", obj.heading, (0.0, 360.0)),
                                                        cols, rng, n), 360.0))
            put(f"{o}.model", lambda: draw_dist(cut(f"{o}.model", obj.model), rng, n))
            for chan, d in zip("RGB", obj.color):
                put(f"{o}.color{chan}", lambda: draw_dist(cut(f"{o}.color{chan}", d), rng, n))
        self.add_derived(cols)
        return cols

    def add_derived(self, cols: Columns) -> Columns:
        for obj in self.program.objects[1:]:
            o = obj.name
            cols[f"dist(ego,{o})"] = np.hypot(cols[f"{o}.x"] - cols["ego.x"],
                                              cols[f"{o}.y"] - cols["ego.y"])
            cols[f"headingDiff(ego,{o})"] = heading_diff(cols["ego.heading"], cols[f"{o}.heading"])
        return cols

    def accept_mask(self, cols: Columns) -> np.ndarray:
        n = len(cols[self.names[0]]) if self.names else 0
        mask = np.ones(n, bool)
        for d in self.schema:
            if d.kind != "categorical":
                mask &= np.isfinite(cols[d.name].astype(float))
        for req in self.program.requires:
            mask &= np.asarray(evaluate(req, cols, None, n), bool)
        return mask

    def row(self, cols: Columns, i: int, seed_index: int) -> FeatureVector:
        values = []
        for d in self.schema:
            v = cols[d.name][i]
            if d.kind == "categorical":
                values.append(str(v))
            elif d.kind == "integer":
                values.append(int(round(float(v))))
            else:
                values.append(float(v))
        return FeatureVector(self.names, tuple(values), seed_index)

    def sample_columns(self, rng: np.random.Generator, n: int, max_attempts: int,
                       condition: Optional[Callable[[Columns], np.ndarray]] = None,
                       overrides: Optional[Mapping[str, object]] = None,
                       chunk: int = 1024,
                       restrict: Optional[Mapping[str, object]] = None) -> Columns:
        """``n`` accepted rows drawn from one generator (no per-index streams).

        ``restrict`` must describe a superset of the region ``condition``
        accepts; it only makes rejection cheaper.
        """
        parts: list[Columns] = []
        got = attempts = 0
        while got < n:
            if attempts >= max_attempts:
                raise RejectionExhausted(got, attempts)
            size = min(chunk, max(max_attempts - attempts, 1))
            try:
                cols = self.draw(rng, size, overrides, restrict)
            except EmptyRestriction:
                raise RejectionExhausted(got, attempts) from None
            mask = self.accept_mask(cols)
            if condition is not None:
                mask &= np.asarray(condition(cols), bool)
            attempts += size
            idx = np.flatnonzero(mask)[: n - got]
            if len(idx):
                parts.append({k: v[idx] for k, v in cols.items()})
                got += len(idx)
        if not parts:
            return {k: np.empty(0) for k in self.names}
        return {k: np.concatenate([p[k] for p in parts]) for k in self.names}


@lru_cache(maxsize=64)
def compile_program(program: ScenarioProgram) -> CompiledProgram:
    return CompiledProgram(program)


# ---------------------------------------------------------------- public ops

_CHUNKS = (4, 16, 64, 256, 1024)


def _sample_one(cp: CompiledProgram, rng: np.random.Generator, index: int, max_attempts: int,
                overrides=None, check: Optional[Callable] = None) -> FeatureVector:
    attempts = 0
    k = 0
    while attempts < max_attempts:
        size = min(_CHUNKS[min(k, len(_CHUNKS) - 1)], max_attempts - attempts)
        k += 1
        cols = cp.draw(rng, size, overrides)
        mask = cp.accept_mask(cols)
        if check is not None:
            mask &= check(cols)
        hits = np.flatnonzero(mask)
        if len(hits):
            return cp.row(cols, int(hits[0]), index)
        attempts += size
    raise RejectionExhausted(index, attempts)


def sample(p: ScenarioProgram, n: int, cfg: SamplerConfig, start: int = 0) -> list[FeatureVector]:
    """Draw ``n`` vectors; vector ``i`` uses stream ``(cfg.seed, start + i)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    cp = compile_program(p)
    return [_sample_one(cp, rng_stream(cfg.seed, start + i), start + i, cfg.max_rejections_per_sample)
            for i in range(n)]


def sample_index(p: ScenarioProgram, index: int, cfg: SamplerConfig) -> FeatureVector:
    return sample(p, 1, cfg, start=index)[0]


def derive_features(p: ScenarioProgram, raw: FeatureVector | Mapping) -> FeatureVector:
    """Recompute distance and heading-difference features from declared values."""
    cp = compile_program(p)
    src = raw.as_dict() if isinstance(raw, FeatureVector) else dict(raw)
    seed_index = raw.seed_index if isinstance(raw, FeatureVector) else int(src.get("_seedIndex", 0))
    cols = {}
    for name in cp.declared:
        v = src[name]
        cols[name] = np.array([v]) if isinstance(v, str) else np.array([float(v)])
    cp.add_derived(cols)
    return cp.row(cols, 0, seed_index)


def conditional_resample(p: ScenarioProgram, base: FeatureVector, fixed: Iterable[str],
                         cfg: SamplerConfig, draw_index: int = 0) -> FeatureVector:
    """Resample every feature outside ``fixed``; requires are re-enforced.

    Declared features in ``fixed`` are pinned before dependent expressions are
    evaluated.  A fixed derived feature is enforced by rejection on equality,
    which only succeeds when its inputs are pinned as well.
    """
    cp = compile_program(p)
    fixed = set(fixed)
    unknown = fixed - set(cp.names)
    if unknown:
        raise KeyError(f"unknown features {sorted(unknown)}")
    overrides = {k: base[k] for k in fixed if k in cp.declared}
    fixed_derived = [k for k in fixed if k not in cp.declared]

    def check(cols):
        mask = np.ones(len(cols[cp.names[0]]), bool)
        for k in fixed_derived:
            mask &= np.isclose(cols[k], base[k], rtol=1e-12, atol=1e-9)
        return mask

    rng = rng_stream(cfg.seed, "conditional", base.seed_index, draw_index)
    return _sample_one(cp, rng, base.seed_index, cfg.max_rejections_per_sample, overrides, check)


def satisfies(p: ScenarioProgram, f: FeatureVector) -> bool:
    cp = compile_program(p)
    return bool(cp.accept_mask(vectors_to_columns([f], cp.names))[0])


# ---------------------------------------------------------------- columns / io

def vectors_to_columns(vectors: list[FeatureVector], names: Iterable[str]) -> Columns:
    out: Columns = {}
    for name in names:
        idx = vectors[0].names.index(name) if vectors else 0
        vals = [v.values[idx] for v in vectors]
        if vals and isinstance(vals[0], str):
            out[name] = np.array(vals, dtype=object).astype(str)
        else:
            out[name] = np.array(vals, dtype=float)
    return out


def vector_record(f: FeatureVector) -> dict:
    rec = dict(zip(f.names, f.values))
    rec["_seedIndex"] = f.seed_index
    return rec


def vector_from_record(rec: Mapping, names: tuple[str, ...], schema=None) -> FeatureVector:
    kinds = {d.name: d.kind for d in schema} if schema else {}
    values = []
    for name in names:
        v = rec[name]
        if kinds.get(name) == "integer":
            v = int(v)
        elif kinds.get(name) == "real":
            v = float(v)
        values.append(v)
    return FeatureVector(names, tuple(values), int(rec["_seedIndex"]))


def write_jsonl(vectors: Iterable[FeatureVector], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in vectors:
            fh.write(json.dumps(vector_record(f)) + "\n")


def read_jsonl(path, p: ScenarioProgram) -> list[FeatureVector]:
    cp = compile_program(p)
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(vector_from_record(json.loads(line), cp.names, cp.schema))
    return out
