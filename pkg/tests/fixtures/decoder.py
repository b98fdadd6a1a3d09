"""Fixture decoder.

usage: decoder.py MODE TEST_MANIFEST OUT_DIR

MODE echo writes every reference prompt back; MODE substitute replaces the
first word of each prompt with a token that never appears in a prompt;
MODE fail exits with status 4; MODE garbage writes a malformed line.
"""
import json
import sys
from pathlib import Path

mode, test, out_dir = sys.argv[1], sys.argv[2], Path(sys.argv[3])
if mode == "fail":
    sys.stderr.write("decoder crashed\n")
    sys.exit(4)
lines = []
for line in open(test, encoding="utf-8"):
    if not line.strip():
        continue
    rec = json.loads(line)
    words = rec["prompt"].split()
    if mode == "substitute":
        words[0] = "zzzplanted"
    lines.append(f"{rec['utterance_id']}\t{' '.join(words)}\n")
if mode == "garbage":
    lines.append("no tab on this line\n")
(out_dir / "hypotheses.tsv").write_text("".join(lines), encoding="utf-8")
