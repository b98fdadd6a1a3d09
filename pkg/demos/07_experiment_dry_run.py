"""
Planning an augmentation sweep
==============================

Write every LOSO training manifest of an 8-speaker, 11-ratio sweep
without calling any trainer. The commands that would run are stored in
``plan.json`` next to the manifests.
"""

# %%
import json
import tempfile
from pathlib import Path

from dysdiff.augmentation import ExperimentConfig, run_experiment
from dysdiff.corpus import TORGO_DYSARTHRIC, UtteranceRecord, save_manifest

work = Path(tempfile.mkdtemp())
speakers = sorted(TORGO_DYSARTHRIC)
real = [UtteranceRecord(f"{s}-{k}", s, f"prompt number {k}", "head", f"{s}/{k}.mel") for s in speakers for k in range(5)]
syn = [UtteranceRecord(f"syn-{s}-{k}", s, f"prompt number {k}", "head", f"syn/{s}/{k}.mel", origin="synthetic",
                       generator={"model": "ASp", "betaT": 10.0, "seed": 0}) for s in speakers for k in range(40)]
save_manifest(real, work / "real.jsonl")
save_manifest(syn, work / "syn.jsonl")

# %%
config = ExperimentConfig.from_dict({
    "speakers": speakers, "ratios": list(range(0, 101, 10)), "seed": 0,
    "trainer_cmd": "my-trainer --train {train_manifest} --out {out_dir}",
    "decoder_cmd": "my-decoder --test {test_manifest} --out {out_dir}",
    "workdir": "work", "real_manifest": "real.jsonl", "synthetic_manifest": "syn.jsonl", "dry_run": True,
}, base_dir=work)
result = run_experiment(config)
print(f"{len(result.cells)} cells planned, {result.n_invocations} commands run")

# %%
cell = result.cell("F01", 50)
print("F01 at 50%:", Path(cell.train_manifest).read_text().count("\n"), "training records")
print("command:", " ".join(cell.commands[0]))
print(json.loads((work / "work" / "plan.json").read_text())[0]["status"])
