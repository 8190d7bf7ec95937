"""Time anchor-bb extraction on the planted setup under different search budgets.

    python scripts/budget_sweep.py '{}' '{"max_samples_per_candidate": 512}' '{"n_trees": 30}'

Each argument is a JSON object of AnchorConfig overrides (plus ``n_trees``).
Prints wall time, rule count, the selected rule and its refined incorrect ratio.
"""

import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from scendbg import pipeline
from scendbg.dsl import load
from scendbg.labeling import label_examples
from scendbg.refine import splice, validate
from scendbg.rules import measure_arrays, select_key
from scendbg.sampler import SamplerConfig, sample

ROOT = Path(__file__).resolve().parents[1]


def main(specs):
    cfg = pipeline.load_pipeline_config(ROOT / "configs" / "planted.toml")
    program = load(cfg.scenario_path)
    det = pipeline.make_detector(cfg, program)
    draw = SamplerConfig(cfg.seed)
    train = label_examples(program, sample(program, cfg.train_size, draw), det)
    test = label_examples(program, sample(program, cfg.test_size, draw, start=cfg.train_size), det)
    cols = pipeline.columns_of(test)
    labels = np.array([e.label.value for e in test])
    for spec in specs or ["{}"]:
        kw = json.loads(spec)
        n_trees = kw.pop("n_trees", cfg.n_trees)
        run_cfg = replace(cfg, anchor=replace(cfg.anchor, **kw), n_trees=n_trees)
        t = time.perf_counter()
        rules = pipeline.extract("anchor-bb", "incorrect", train, program, run_cfg, {})
        secs = time.perf_counter() - t
        ranked = sorted((measure_arrays(r, cols, labels) for r in rules), key=select_key)
        best = pipeline.select(ranked, cfg.min_matched)
        rep = validate(splice(program, best), det, cfg.validate_size, cfg.seed)
        print(f"{spec:40s} {secs:6.1f}s  {len(rules):3d} rules  refined {rep.incorrect_ratio:.3f}  "
              f"{best.render()}", flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
