"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 unsatisfiable
program, 4 method failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .detector import DetectionsParseError, ExternalDetector, MissingSample, SyntheticDetector, \
    load_external_detections, load_fault_config
from .dsl import ScenarioSyntaxError, ValidationError, emit, feature_schema, load
from .evaluator import Label, example_from_record, example_record
from .labeling import label_examples
from .refine import UnspliceableFeature, feature_space_coverage, splice, validate
from .rules import EmptyRuleSet, UnknownFeature, load_rule, measure_arrays, rule_to_json, select_key
from .sampler import RejectionExhausted, SamplerConfig, compile_program, read_jsonl, sample, \
    vector_record
from .whitebox import NoActivations, augment_labels, mine_pattern

EXIT_CONFIG, EXIT_UNSAT, EXIT_METHOD = 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    env = os.environ.get("SCENDBG_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"SCENDBG_SEED must be an integer, got {env!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8"), True


def _detector(args, program):
    if getattr(args, "detections", None):
        return ExternalDetector(load_external_detections(args.detections))
    if not getattr(args, "detector", None):
        raise CliError(EXIT_CONFIG, "a --detector config or --detections file is required")
    return SyntheticDetector(load_fault_config(args.detector), compile_program(program).schema)


def _read_labels(path, program):
    names = tuple(d.name for d in feature_schema(program))
    schema = feature_schema(program)
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(example_from_record(json.loads(line), names, schema))
    return out


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = pipeline.load_pipeline_config(args.config, seed=_seed(args) if args.seed is not None
                                        or "SCENDBG_SEED" in os.environ else None,
                                        output_dir=args.out, jobs=args.jobs)
    if args.methods:
        cfg = replace(cfg, methods=tuple(args.methods.split(",")))
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    rep = pipeline.run(cfg, log=log)
    print(pipeline.summary_markdown(rep.summary))
    return rep.exit_code


def cmd_parse(args) -> int:
    p = load(args.scenario)
    if args.schema:
        for d in feature_schema(p):
            kind = "derived " if d.derived else ""
            print(f"{d.name}\t{kind}{d.kind}\t{list(d.domain)}")
    else:
        sys.stdout.write(emit(p))
    return 0


def cmd_sample(args) -> int:
    p = load(args.scenario)
    vecs = sample(p, args.n, SamplerConfig(_seed(args), args.max_rejections), start=args.start)
    fh, close = _open_out(args.output)
    try:
        for v in vecs:
            fh.write(json.dumps(vector_record(v), ensure_ascii=False) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def cmd_evaluate(args) -> int:
    p = load(args.scenario)
    vecs = read_jsonl(args.samples, p)
    data = label_examples(p, vecs, _detector(args, p), args.iou, args.f1)
    fh, close = _open_out(args.output)
    try:
        for ex in data:
            fh.write(json.dumps(example_record(ex), ensure_ascii=False) + "\n")
    finally:
        if close:
            fh.close()
    bad = sum(ex.label is Label.INCORRECT for ex in data)
    print(f"{len(data)} images, {bad} incorrect ({bad / max(len(data), 1):.3f})", file=sys.stderr)
    return 0


def cmd_extract(args) -> int:
    p = load(args.scenario)
    train = _read_labels(args.labels, p)
    test = _read_labels(args.test, p) if args.test else train
    if not train:
        raise CliError(EXIT_CONFIG, f"{args.labels} holds no examples")
    # labels are already attached, so the detector source is only a placeholder
    cfg = pipeline.PipelineConfig(scenario_path=args.scenario, external_detections_path=args.labels,
                                  seed=_seed(args), methods=(args.method,), n_trees=args.trees)
    if args.method.endswith("-wb"):
        pats = {t: mine_pattern(train, t) for t in pipeline.TARGETS}
        train = augment_labels(train, pats["correct"], pats["incorrect"])
    if not any(ex.label.value == args.target for ex in train):
        print(f"no {args.target} examples", file=sys.stderr)
        rules, best = [], None
    else:
        rules = pipeline.extract(args.method, args.target, train, p, cfg, {})
        cols = pipeline.columns_of(test)
        labels = np.array([ex.label.value for ex in test])
        rules = sorted((measure_arrays(r, cols, labels) for r in rules), key=select_key)
        best = pipeline.select(rules, cfg.min_matched)
    doc = {"method": args.method, "target": args.target, "rules": [rule_to_json(r) for r in rules],
           "best": rule_to_json(best) if best else None}
    fh, close = _open_out(args.output)
    try:
        fh.write(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    finally:
        if close:
            fh.close()
    if best is not None:
        print(f"best: {best.render()}  precision {best.precision:.3f}", file=sys.stderr)
    return 0


def cmd_refine(args) -> int:
    p = load(args.scenario)
    rp = splice(p, load_rule(args.rule))
    fh, close = _open_out(args.output)
    try:
        fh.write(rp.text())
    finally:
        if close:
            fh.close()
    return 0


def cmd_validate(args) -> int:
    p = load(args.scenario)
    rp = splice(p, load_rule(args.rule))
    det = _detector(args, p)
    if isinstance(det, ExternalDetector):
        raise CliError(EXIT_METHOD, "validation needs a synthetic detector config")
    rep = validate(rp, det, args.n, _seed(args), args.iou, args.f1)
    if args.csv:
        rep.write_csv(args.csv)
    if args.json:
        rep.write_json(args.json)
    print(f"incorrect ratio {rep.incorrect_ratio:.4f} (baseline {rep.baseline_ratio:.4f}), "
          f"stabilization {rep.stabilization:.4f}")
    return 0


def cmd_coverage(args) -> int:
    p = load(args.scenario)
    est, se = feature_space_coverage(p, load_rule(args.rule), args.n, _seed(args))
    print(f"{est:.4f} ± {se:.4f}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.directory) / "summary.json"
    with open(path, encoding="utf-8") as fh:
        s = json.load(fh)
    text = pipeline.summary_markdown(s)
    if args.write:
        (Path(args.directory) / "summary.md").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scendbg", description="Debug a perception module with "
                                 "scenario programs: sample, label, extract rules, refine.")
    sub = ap.add_subparsers(dest="command", required=True)

    def seed_flag(p):
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: $SCENDBG_SEED or 0)")

    def det_flags(p):
        p.add_argument("--detector", help="fault-model config (TOML or JSON)")
        p.add_argument("--detections", help="external detections (JSON Lines)")
        p.add_argument("--iou", type=float, default=0.5)
        p.add_argument("--f1", type=float, default=0.8)

    p = sub.add_parser("run", help="full pipeline from a TOML run config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--methods", default=None, help="comma-separated subset of " + ",".join(pipeline.METHODS))
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    seed_flag(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("parse", help="check a scenario and print its canonical form")
    p.add_argument("scenario")
    p.add_argument("--schema", action="store_true", help="print the feature schema instead")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("sample", help="draw feature vectors as JSON Lines")
    p.add_argument("scenario")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--start", type=int, default=0, help="first sample index")
    p.add_argument("--max-rejections", type=int, default=10_000)
    p.add_argument("-o", "--output", default=None)
    seed_flag(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("evaluate", help="label sampled vectors with a detector")
    p.add_argument("scenario")
    p.add_argument("samples")
    det_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("extract", help="extract and rank rules from labelled data")
    p.add_argument("scenario")
    p.add_argument("labels")
    p.add_argument("--test", help="held-out labels used for ranking (default: training labels)")
    p.add_argument("--method", choices=pipeline.METHODS, default="dt-bb")
    p.add_argument("--target", choices=pipeline.TARGETS, default="incorrect")
    p.add_argument("--trees", type=int, default=50, help="forest size for anchor methods")
    p.add_argument("-o", "--output", default=None)
    seed_flag(p)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("refine", help="splice a rule into a scenario")
    p.add_argument("scenario")
    p.add_argument("rule")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("validate", help="incorrect ratio of a refined scenario")
    p.add_argument("scenario")
    p.add_argument("rule")
    det_flags(p)
    p.add_argument("-n", type=int, default=500)
    p.add_argument("--csv")
    p.add_argument("--json")
    seed_flag(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("coverage", help="share of the scenario's feature space matched by a rule")
    p.add_argument("scenario")
    p.add_argument("rule")
    p.add_argument("-n", type=int, default=10_000)
    seed_flag(p)
    p.set_defaults(fn=cmd_coverage)

    p = sub.add_parser("report", help="render summary.md from a run directory")
    p.add_argument("directory")
    p.add_argument("--write", action="store_true", help="rewrite summary.md as well")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ScenarioSyntaxError as e:
        print(f"{getattr(args, 'scenario', '')}:{e.line}:{e.column}: {e.message}", file=sys.stderr)
        return EXIT_CONFIG
    except RejectionExhausted as e:
        print(f"error: program looks unsatisfiable: {e}", file=sys.stderr)
        return EXIT_UNSAT
    # several of these subclass ValueError, so they must be caught first
    except (pipeline.MethodFailure, NoActivations, UnspliceableFeature, MissingSample,
            EmptyRuleSet) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_METHOD
    except (ValidationError, pipeline.ConfigError, DetectionsParseError, FileNotFoundError,
            UnknownFeature, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

if __name__ == "__main__":
    sys.exit(main())
