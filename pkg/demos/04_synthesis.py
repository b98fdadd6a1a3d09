"""
From text to a mel-spectrogram
==============================

The stub encoder turns characters into per-frame means, the reverse ODE
adds speaker-specific detail, and the result is written for a vocoder.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from dysdiff import GaussianScore, NoiseSchedule
from dysdiff.synthesis import EncoderTable, encode_text_stub, read_mel, synthesize
from dysdiff.synthesis import vocoder_handoff

sched = NoiseSchedule(0.05, 10.0)
table = EncoderTable.default(n_speakers=8, seed=0)
enc = encode_text_stub("hello world", speaker=2, table=table)
print("encoder output", enc.mu.shape, "frames per character", enc.durations[:5], "...")

# %%
# The score assumes data scattered with variance 0.1 around the encoder mean.
class CenteredScore:
    def __call__(self, x, t, mu, speaker=None):
        return GaussianScore(sched, mu, 0.1)(x, t, mu, speaker)


mel = synthesize("hello world", 2, CenteredScore(), sched, 50, np.random.default_rng(0), table=table)
print("mel shape", mel.shape, "distance to encoder mean", float(np.sqrt(np.mean((mel.data - enc.mu) ** 2))))

# %%
out = Path(tempfile.mkdtemp())
rec = vocoder_handoff(mel, out, out / "vocoder.tsv", speaker="M05", text="hello world")
print((out / "vocoder.tsv").read_text().strip())
assert np.array_equal(read_mel(rec.mel_path).data, mel.data.astype(np.float32))
