"""Fixture trainer: records that it ran and checks the manifest parses."""
import json
import sys
from pathlib import Path

train, out_dir = sys.argv[1], Path(sys.argv[2])
n = sum(1 for line in open(train, encoding="utf-8") if line.strip() and json.loads(line))
(out_dir / "trained.txt").write_text(f"{n}\n")
