"""Regenerate the frozen golden fixture under tests/data/golden.

Run by hand only after an intentional change to the generator or report format:

    python3 tests/make_golden.py
"""

import json
import shutil
import sys
from pathlib import Path

from alertpilot.llm import ScriptedLlm
from alertpilot.pipeline import PipelineConfig, run_diagnose
from alertpilot.promql import load_alert
from alertpilot.synth import default_spec, gen_synth

GOLDEN = Path(__file__).parent / "data" / "golden"
SPEC = dict(n_requests=40, n_patterns=2, seed=7, silent_patterns=(1,))


def golden_config(workers=1):
    components = json.loads((GOLDEN / "components.json").read_text())
    return PipelineConfig(component_info=components, workers=workers)


def run_golden(out_dir, workers=1, llm=None):
    llm = llm or ScriptedLlm.from_file(GOLDEN / "scenarios.json")
    alert = load_alert(GOLDEN / "alert.json")
    return run_diagnose(alert, GOLDEN / "logs.jsonl", llm, out_dir, GOLDEN / "sops", golden_config(workers))


def main():
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    gen_synth(default_spec(**SPEC), GOLDEN)
    out = GOLDEN / "expected"
    run_golden(out)
    (out / "tool_cache.json").unlink()
    (out / "metrics.json").unlink()
    print(f"wrote {GOLDEN}", file=sys.stderr)


if __name__ == "__main__":
    main()
