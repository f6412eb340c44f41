"""The full command-line pipeline on a small simulated dataset.

Runs every ``permrank`` stage in a scratch directory and prints the
evaluation report. About a minute on one core.

    python demos/end_to_end.py [WORKDIR]
"""

import json
import sys
import tempfile
from pathlib import Path

from permrank.cli import main

SMALL = ["--set", "logging.sessions=3000", "--set", "run.eval_sessions=200"]
STAGES = ["gen-data", "train-ctr", "train-next", "train-dpwn", "rerank",
          "evaluate", "sweep-alpha", "oracle-check", "bench"]

workdir = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="permrank-"))
for stage in STAGES:
    code = main([stage, "--workdir", str(workdir), *SMALL])
    if code:
        sys.exit(code)

report = json.loads((workdir / "report.json").read_text())
print(f"\nartifacts in {workdir}:")
for p in sorted(workdir.iterdir()):
    print(f"  {p.name:<18} {p.stat().st_size:>9} bytes")
print("\nreport:")
for key, value in report.items():
    print(f"  {key:<18} {value:.4f}" if isinstance(value, float) else f"  {key:<18} {value}")
first = json.loads((workdir / "rerank.jsonl").read_text().splitlines()[0])
print(f"\nsession 0: user {first['user']} gets items {first['item_ids']} (from the {first['source']} list)")
