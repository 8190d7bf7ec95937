"""Run the shipped configs and print the headline numbers side by side.

    python scripts/run_experiments.py            # planted, coupled, null
    python scripts/run_experiments.py planted    # just one
"""

import json
import sys
import time
from pathlib import Path

from scendbg.pipeline import load_pipeline_config, run

ROOT = Path(__file__).resolve().parents[1]


def main(names):
    for name in names or ["planted", "coupled", "null"]:
        cfg = load_pipeline_config(ROOT / "configs" / f"{name}.toml")
        t = time.perf_counter()
        rep = run(cfg)
        secs = time.perf_counter() - t
        s = json.loads((Path(cfg.output_dir) / "summary.json").read_text())
        b = s["baseline"]
        print(f"== {name}: {secs:.1f}s, exit {rep.exit_code}, baseline incorrect "
              f"{b['testIncorrectRatio']:.3f} (test) / {b.get('validateIncorrectRatio', float('nan')):.3f} (validation)")
        for m, per in s["methods"].items():
            for target, e in per.items():
                if "rule" not in e:
                    print(f"  {m:9s} {target:9s} {e.get('note', '')}")
                    continue
                print(f"  {m:9s} {target:9s} prec {e['precision']:.3f}  refined incorrect "
                      f"{e['refinedIncorrectRatio']:.3f}  cov {e['featureSpaceCoverage']:.4f}  {e['rule']}")
        for t, p in s.get("patterns", {}).items():
            print(f"  pattern {t}: {p['text']} support {p['support']:.3f}")


if __name__ == "__main__":
    main(sys.argv[1:])
