"""
Scoring synthesis and recognition
=================================

MCD between two mel-spectrograms, WER with its error breakdown, the two
ways of averaging over speakers, and Kendall's tau.
"""

# %%
import numpy as np

from dysdiff.metrics import aggregate_wer, kendall_tau, mcd, normalize_text, report_to_csv, wer

rng = np.random.default_rng(0)
ref = rng.normal(size=(80, 40))
slow = np.repeat(ref, 2, axis=1) + rng.normal(0, 0.05, size=(80, 80))
print(f"MCD of a time-stretched, slightly noisy copy: {mcd(ref, slow):.3f} dB")
print(f"MCD against unrelated frames:                {mcd(ref, rng.normal(size=(80, 40))):.3f} dB")

# %%
r = normalize_text("The quick brown fox, jumps!")
h = normalize_text("the quack brown jumps over")
b = wer(r, h)
print(f"S={b.substitutions} D={b.deletions} I={b.insertions} N={b.reference_words}  WER {100 * b.wer:.2f}%")

# %%
# Averaging per speaker and pooling the counts give different answers when
# speakers have different amounts of test data.
per = {"F01": wer(["a"] * 5, ["b"] * 5 + ["c"] * 3), "F04": wer(["a"] * 50, ["a"] * 49)}
rep = aggregate_wer(per, {"F01": "severe", "F04": "mild"})
print(f"Avg. {100 * rep.avg:.2f}%   Ovl. {100 * rep.ovl:.2f}%")
print(report_to_csv(rep))

# %%
print("tau", kendall_tau([2.63, 2.55, 1.35, 1.05], [5.72, 7.09, 5.88, 6.44]))
