"""Diffusion-based text-to-dysarthric-speech augmentation toolkit.

Submodules:

* :mod:`dysdiff.diffusion` -- noise schedule, forward marginals, Euler-Maruyama,
  probability-flow ODE sampler
* :mod:`dysdiff.score` -- analytic Gaussian score and a trainable toy score net
* :mod:`dysdiff.synthesis` -- lookup text encoder, synthesis, mel file format,
  vocoder hand-off
* :mod:`dysdiff.metrics` -- DTW, MCD, text normalization, WER, Kendall's tau
* :mod:`dysdiff.corpus` -- manifests, microphone pairing, splits, LOSO,
  TTS training conditions
* :mod:`dysdiff.augmentation` -- synthetic-data mixing, SpecAugment, the
  experiment runner and report rendering
"""

from .diffusion import (
    DiffusionState,
    GaussianMarginal,
    NoiseSchedule,
    beta_at,
    forward_marginal,
    integrated_beta,
    reverse_generate,
    sample_forward_em,
)
from .score import GaussianScore, ToyScoreNet, TrainConfig, analytic_gaussian_score, dsm_loss, train_toy_score
from .synthesis import MelSpectrogram, read_mel, synthesize, write_mel
from .metrics import aggregate_wer, dtw_align, kendall_tau, mcd, normalize_text, wer

__version__ = "0.1.0"
