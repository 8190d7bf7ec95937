"""End-to-end debugging run: sample, label, extract, select, refine, validate."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anchors import AnchorConfig, AnchorExplainer, extract_anchor_rules
from .detector import ExternalDetector, FaultModelConfig, SyntheticDetector, fault_config_from_dict, \
    load_external_detections, load_fault_config
from .dsl import ScenarioProgram, load
from .evaluator import Label, LabeledExample, example_record
from .labeling import label_examples
from .refine import feature_space_coverage, splice, validate
from .rules import Rule, dedupe, measure_arrays, rule_to_json, select_key
from .sampler import SamplerConfig, compile_program, derive_seed, sample, vectors_to_columns
from .trees import TreeConfig, balanced_weights, encode_columns, extract_rules, fit_forest, \
    fit_tree_encoded
from .whitebox import augment_labels, mine_pattern

METHODS = ("dt-bb", "dt-wb", "anchor-bb", "anchor-wb")
TARGETS = ("incorrect", "correct")
REST = "rest"  # the other class of a one-vs-rest surrogate


class ConfigError(ValueError):
    pass


class MethodFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    scenario_path: str
    detector_config_path: Optional[str] = None
    external_detections_path: Optional[str] = None
    detector: Optional[FaultModelConfig] = None
    train_size: int = 950
    test_size: int = 950
    validate_size: int = 500
    f1_threshold: float = 0.8
    iou_threshold: float = 0.5
    methods: tuple[str, ...] = ("dt-bb", "anchor-bb")
    targets: tuple[str, ...] = TARGETS
    seed: int = 0
    output_dir: str = "out"
    n_trees: int = 50
    min_matched: int = 1
    coverage_samples: int = 10_000
    max_rejections: int = 10_000
    tree: TreeConfig = TreeConfig()
    anchor: AnchorConfig = AnchorConfig()
    jobs: int = 1

    def __post_init__(self):
        if min(self.train_size, self.test_size, self.validate_size) < 1:
            raise ConfigError("sample sizes must be >= 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if any(t not in TARGETS for t in self.targets):
            raise ConfigError(f"targets must be drawn from {list(TARGETS)}")
        sources = [self.detector_config_path, self.external_detections_path, self.detector]
        if sum(s is not None for s in sources) != 1:
            raise ConfigError("give exactly one of a detector config or external detections")


def load_pipeline_config(path, **overrides) -> PipelineConfig:
    """Read a TOML run description; relative paths resolve against its folder."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    base = Path(path).parent
    kw: dict = {}
    for key in ("scenario_path", "detector_config_path", "external_detections_path"):
        if key in d:
            kw[key] = str(base / d.pop(key))
    if "detector" in d:
        kw["detector"] = fault_config_from_dict(d.pop("detector"))
    if "tree" in d:
        kw["tree"] = TreeConfig(**d.pop("tree"))
    if "anchor" in d:
        kw["anchor"] = AnchorConfig(**d.pop("anchor"))
    for key in ("methods", "targets"):
        if key in d:
            kw[key] = tuple(d.pop(key))
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw.update(d)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


# ---------------------------------------------------------------- io helpers

def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def write_examples(data: Sequence[LabeledExample], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in data:
            fh.write(json.dumps(example_record(ex), ensure_ascii=False) + "\n")


def make_detector(cfg: PipelineConfig, program: ScenarioProgram):
    if cfg.external_detections_path:
        return ExternalDetector(load_external_detections(cfg.external_detections_path))
    fault = cfg.detector if cfg.detector is not None else load_fault_config(cfg.detector_config_path)
    return SyntheticDetector(fault, compile_program(program).schema)


def columns_of(data: Sequence[LabeledExample]):
    names = data[0].features.names
    return vectors_to_columns([ex.features for ex in data], names)


# ---------------------------------------------------------------- extraction

@dataclass
class Extraction:
    method: str
    target: str
    rules: list[Rule]
    best: Optional[Rule] = None
    note: str = ""
    traces: list = field(default_factory=list)


def _sub_targets(method: str, target: str) -> list[str]:
    if method.endswith("-wb"):
        return [f"{target}-dp", f"{target}-unlabelled"]
    return [target]


def extract(method: str, target: str, train: Sequence[LabeledExample], program: ScenarioProgram,
            cfg: PipelineConfig, cache: dict) -> list[Rule]:
    """Candidate rules of one method for one binary target."""
    wb = method.endswith("-wb")
    labels = [(ex.augmented_label if wb else ex.label).value for ex in train]
    enc_key = "enc"
    if enc_key not in cache:
        cache[enc_key] = encode_columns(columns_of(train), compile_program(program).schema)
    enc = cache[enc_key]
    provenance = f"{method.split('-')[0]}/{method.split('-')[1]}"
    rules: list[Rule] = []
    if method.startswith("dt"):
        key = ("tree", wb)
        if key not in cache:
            tcfg = replace(cfg.tree, label_weights=cfg.tree.label_weights or balanced_weights(labels))
            cache[key] = fit_tree_encoded(enc, labels, tcfg, derive_seed(cfg.seed, "tree", method))
        for sub in _sub_targets(method, target):
            rules += extract_rules(cache[key], sub, provenance)
    else:
        label_of = (lambda ex: ex.augmented_label.value) if wb else None
        traces = cache.setdefault("traces", {}).setdefault((method, target), [])
        for sub in _sub_targets(method, target):
            # sub-labels get a one-vs-rest surrogate: a four-way forest spends its
            # splits separating the pattern classes and starves the rare ones
            key = ("forest", sub if wb else 0)
            if key not in cache:
                ys = [v if v == sub else REST for v in labels] if wb else labels
                forest = fit_forest(enc, ys, cfg.n_trees, derive_seed(cfg.seed, "forest", key[1]))
                cache[key] = AnchorExplainer(forest, program, columns_of(train), cfg.anchor,
                                             derive_seed(cfg.seed, "anchor", int(wb)))
            rules += extract_anchor_rules(train, sub, cache[key], label_of, provenance, traces)
    return dedupe(rules)


def select(rules: Sequence[Rule], min_matched: int) -> Optional[Rule]:
    """Best measured rule; rules matching fewer than ``min_matched`` held-out
    examples only compete when nothing else is left."""
    if not rules:
        return None
    solid = [r for r in rules if (r.n_matched or 0) >= min_matched]
    return min(solid or rules, key=select_key)


# ---------------------------------------------------------------- run

@dataclass
class PipelineReport:
    output_dir: Path
    summary: dict
    exit_code: int = 0


def _rate(data, label: Label) -> float:
    return float(np.mean([ex.label is label for ex in data])) if data else 0.0


def _method_job(task) -> tuple[dict, list, list]:
    """Extract, select, refine and validate one method for every target.

    Returns summary entries, (file name, content) pairs and log lines.
    """
    method, train, test, program, cfg, detector, base_ratio = task
    test_cols = columns_of(test)
    test_labels = np.array([ex.label.value for ex in test])
    cache: dict = {}
    entries: dict = {}
    files: list = []
    messages: list = []
    for target in cfg.targets:
        tag = f"{method}_{target}"
        if not any(ex.label is Label(target) for ex in train):
            entries[target] = {"note": f"no {target} examples"}
            files.append((f"rules_{tag}.json", {"method": method, "target": target, "rules": [],
                                                "best": None, "note": f"no {target} examples"}))
            messages.append(f"{tag}: no {target} examples")
            continue
        rules = extract(method, target, train, program, cfg, cache)
        rules = [measure_arrays(r, test_cols, test_labels) for r in rules]
        rules.sort(key=select_key)
        best = select(rules, cfg.min_matched)
        entry: dict = {"nRules": len(rules)}
        record = {"method": method, "target": target,
                  "rules": [rule_to_json(r) for r in rules],
                  "best": rule_to_json(best) if best else None}
        traces = cache.get("traces", {}).get((method, target))
        if traces:
            record["anchorTraces"] = traces
        files.append((f"rules_{tag}.json", record))
        if best is None:
            entry["note"] = "no rules extracted"
            entries[target] = entry
            messages.append(f"{tag}: no rules")
            continue
        rp = splice(program, best, max_rejections=cfg.max_rejections * 10)
        files.append((f"refined_{tag}.scn", rp.text()))
        entry.update(rule=best.render(), precision=best.precision, coverage=best.coverage,
                     matched=best.n_matched)
        if base_ratio is not None:
            rep = validate(rp, detector, cfg.validate_size, cfg.seed, cfg.iou_threshold,
                           cfg.f1_threshold, baseline=base_ratio,
                           max_rejections=cfg.max_rejections * 10)
            files.append((f"validation_{tag}.csv", rep.csv_text()))
            files.append((f"validation_{tag}.json", rep.to_json()))
            entry.update(refinedIncorrectRatio=rep.incorrect_ratio,
                         refinedCorrectRatio=rep.correct_ratio,
                         stabilization=rep.stabilization)
        cov, se = feature_space_coverage(program, best, cfg.coverage_samples,
                                         derive_seed(cfg.seed, "coverage"), cfg.max_rejections)
        entry.update(featureSpaceCoverage=cov, coverageStderr=se)
        entries[target] = entry
        messages.append(f"{tag}: {best.render()}  precision {best.precision:.3f}")
    return entries, files, messages



def run(cfg: PipelineConfig, log=None) -> PipelineReport:
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    program = load(cfg.scenario_path)
    detector = make_detector(cfg, program)

    scfg = SamplerConfig(cfg.seed, cfg.max_rejections)
    train_v = sample(program, cfg.train_size, scfg)
    test_v = sample(program, cfg.test_size, scfg, start=cfg.train_size)
    train = label_examples(program, train_v, detector, cfg.iou_threshold, cfg.f1_threshold)
    test = label_examples(program, test_v, detector, cfg.iou_threshold, cfg.f1_threshold)
    log(f"labelled {len(train)} train / {len(test)} test samples")

    summary: dict = {
        "scenario": os.path.basename(cfg.scenario_path),
        "seed": cfg.seed,
        "sizes": {"train": cfg.train_size, "test": cfg.test_size, "validate": cfg.validate_size},
        "baseline": {"trainIncorrectRatio": _rate(train, Label.INCORRECT),
                     "testIncorrectRatio": _rate(test, Label.INCORRECT),
                     "testCorrectRatio": _rate(test, Label.CORRECT)},
        "methods": {},
    }

    wb_methods = [m for m in cfg.methods if m.endswith("-wb")]
    if wb_methods:
        if any(ex.activations is None for ex in train):
            raise MethodFailure(f"{', '.join(wb_methods)} need detector activations, none were recorded")
        patterns = {t: mine_pattern(train, t, seed=derive_seed(cfg.seed, "pattern", t)) for t in TARGETS}
        train = augment_labels(train, patterns["correct"], patterns["incorrect"])
        _dump({t: patterns[t].to_json() for t in TARGETS}, out / "patterns.json")
        summary["patterns"] = {t: {"support": patterns[t].support, "precision": patterns[t].precision,
                                   "text": patterns[t].render()} for t in TARGETS}
        log("decision patterns: " + "; ".join(f"{t} {p.render()} support {p.support:.3f}"
                                              for t, p in patterns.items()))
    write_examples(train, out / "labels_train.jsonl")
    write_examples(test, out / "labels_test.jsonl")

    base_ratio = None
    if not isinstance(detector, ExternalDetector):
        base = validate(splice(program, Rule((), Label.INCORRECT)), detector, cfg.validate_size,
                        cfg.seed, cfg.iou_threshold, cfg.f1_threshold, baseline=0.0,
                        max_rejections=cfg.max_rejections * 10)
        base_ratio = base.incorrect_ratio
        summary["baseline"]["validateIncorrectRatio"] = base_ratio

    tasks = [(m, train, test, program, cfg, detector, base_ratio) for m in cfg.methods]
    if cfg.jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as pool:
            results = list(pool.map(_method_job, tasks))
    else:
        results = [_method_job(t) for t in tasks]
    # files are written here, in config order, whatever the worker count
    for method, (entries, files, messages) in zip(cfg.methods, results):
        summary["methods"][method] = entries
        for name, content in files:
            if isinstance(content, str):
                (out / name).write_text(content, encoding="utf-8")
            else:
                _dump(content, out / name)
        for msg in messages:
            log(msg)
    _dump(summary, out / "summary.json")
    with open(out / "summary.md", "w", encoding="utf-8") as fh:
        fh.write(summary_markdown(summary))
    log(f"done in {time.perf_counter() - t0:.1f}s")
    return PipelineReport(out, summary, 0)


def _fmt(v, digits: int = 3) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def summary_markdown(s: dict) -> str:
    b = s["baseline"]
    lines = [f"# Run summary: {s['scenario']} (seed {s['seed']})", "",
             f"Train/test/validate sizes: {s['sizes']['train']}/{s['sizes']['test']}/{s['sizes']['validate']}", "",
             "| quantity | value |", "|---|---|",
             f"| baseline incorrect ratio (test) | {_fmt(b['testIncorrectRatio'])} |",
             f"| baseline correct ratio (test) | {_fmt(b['testCorrectRatio'])} |",
             f"| baseline incorrect ratio (validation draw) | {_fmt(b.get('validateIncorrectRatio'))} |",
             ""]
    for target, head in (("correct", "Correct rules"), ("incorrect", "Incorrect rules")):
        lines += [f"## {head}", "",
                  "| method | rule | test precision | test coverage | refined correct ratio "
                  "| refined incorrect ratio | feature-space coverage |",
                  "|---|---|---|---|---|---|---|"]
        # summary.json sorts its keys; tables follow the canonical method order
        for m in sorted(s["methods"], key=lambda m: METHODS.index(m) if m in METHODS else len(METHODS)):
            e = s["methods"][m].get(target)
            if e is None:
                continue
            if "rule" not in e:
                lines.append(f"| {m} | {e.get('note', '')} | | | | | |")
                continue
            cov = f"{_fmt(e['featureSpaceCoverage'])} ± {_fmt(e['coverageStderr'])}"
            lines.append(f"| {m} | {e['rule']} | {_fmt(e['precision'])} | {_fmt(e['coverage'])} | "
                         f"{_fmt(e.get('refinedCorrectRatio'))} | {_fmt(e.get('refinedIncorrectRatio'))} | {cov} |")
        lines.append("")
    if "patterns" in s:
        lines += ["## Decision patterns", "", "| label | pattern | support | precision |", "|---|---|---|---|"]
        for t, p in s["patterns"].items():
            lines.append(f"| {t} | {p['text']} | {_fmt(p['support'])} | {_fmt(p['precision'])} |")
        lines.append("")
    return "\n".join(lines)
