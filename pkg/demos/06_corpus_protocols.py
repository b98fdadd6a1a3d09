"""
Splitting a two-microphone corpus
=================================

Pair the array and head recordings of each prompt, split every speaker
80/10/10 without separating a pair, and build leave-one-speaker-out folds
and the three TTS training conditions.
"""

# %%
from dysdiff.corpus import (
    TORGO_DYSARTHRIC,
    UtteranceRecord,
    loso_records,
    make_splits,
    pair_microphones,
    select_tts_condition,
)

records = []
for spk in sorted(TORGO_DYSARTHRIC):
    for k in range(12):
        for mic in ("array", "head"):
            if mic == "array" and k == 11:
                continue  # one prompt only has a head recording
            records.append(UtteranceRecord(f"{spk}-{mic}-{k}", spk, f"prompt {k}", mic, f"{spk}/{mic}/{k}.wav",
                                           instance=f"s1-{k}"))

pairing = pair_microphones(records)
print(f"{len(pairing.units)} units, {pairing.n_unpaired} without a second microphone")

# %%
plan = make_splits(pairing, seed=7)
print("per-speaker counts for F01:", plan.counts()["F01"])
records = plan.apply(records)

# %%
speakers = sorted(TORGO_DYSARTHRIC)
train, test = loso_records(records, speakers, "M05")
print(f"LOSO fold for M05: {len(train)} training records from {len({r.speaker for r in train})} speakers, "
      f"{len(test)} test records")

# %%
for mode in ("ASp", "SSp:M05", "DSpG:G1", "DSpG:G2"):
    sel = select_tts_condition(records, mode)
    print(f"{mode:8s} {len(sel):4d} records from {sorted({r.speaker for r in sel})}")
