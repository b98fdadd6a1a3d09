"""Score estimators: an exact Gaussian oracle and a small trainable network.

Every estimator is a callable ``est(x, t, mu, speaker) -> array`` returning
an array shaped like ``x``. The network operates column-wise: the leading
axis of ``x`` is the feature axis (mel bands), trailing axes are frames or
independent samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .diffusion import DiffusionError, NoiseSchedule, integrated_beta

log = logging.getLogger(__name__)

__all__ = [
    "ScoreEstimator",
    "ScoreSingularityError",
    "TrainingDivergedError",
    "analytic_gaussian_score",
    "GaussianScore",
    "ToyScoreNet",
    "TrainConfig",
    "time_embedding",
    "dsm_loss",
    "train_toy_score",
]

TIME_EMBED_DIM = 8
SPEAKER_EMBED_DIM = 4


class ScoreEstimator(Protocol):
    def __call__(self, x: np.ndarray, t: float, mu: np.ndarray, speaker: Optional[int]) -> np.ndarray: ...


class ScoreSingularityError(DiffusionError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, last_finite_loss: float):
        super().__init__(f"training diverged at step {step}; last finite loss {last_finite_loss:.6g}")
        self.step = step
        self.last_finite_loss = last_finite_loss


def _gaussian_marginal_params(t, mu, data_mean, data_var, sched):
    decay2 = np.exp(-np.asarray(integrated_beta(sched, t)))
    m_t = mu + (data_mean - mu) * np.sqrt(decay2)
    v_t = 1.0 - decay2 + data_var * decay2
    return m_t, v_t


def analytic_gaussian_score(x, t, mu, data_mean, data_var, sched: NoiseSchedule, tol: float = 1e-12):
    """Exact score of ``p_t`` when the data are ``N(data_mean, data_var * I)``.

    The forward kernel maps that Gaussian to ``N(m_t, v_t * I)`` with
    ``m_t = mu + (data_mean - mu) * exp(-B/2)`` and
    ``v_t = 1 - exp(-B) + data_var * exp(-B)``, so the score is
    ``-(x - m_t) / v_t``.
    """
    if data_var < 0:
        raise ValueError(f"data_var must be nonnegative, got {data_var}")
    x = np.asarray(x, dtype=np.float64)
    m_t, v_t = _gaussian_marginal_params(t, np.asarray(mu, dtype=np.float64),
                                         np.asarray(data_mean, dtype=np.float64), data_var, sched)
    if np.any(v_t <= tol):
        raise ScoreSingularityError(f"marginal variance {np.min(v_t):.3g} at t={t} is below tolerance")
    return -(x - m_t) / v_t


@dataclass(frozen=True)
class GaussianScore:
    """Estimator wrapping :func:`analytic_gaussian_score`.

    ``speaker_means`` optionally overrides ``data_mean`` per speaker index.
    """

    sched: NoiseSchedule
    data_mean: np.ndarray | float = 0.0
    data_var: float = 1.0
    speaker_means: Optional[dict] = None

    def __call__(self, x, t, mu, speaker=None):
        mean = self.data_mean
        if self.speaker_means is not None and speaker is not None:
            mean = self.speaker_means[speaker]
        return analytic_gaussian_score(x, t, mu, mean, self.data_var, self.sched)


def time_embedding(t) -> np.ndarray:
    """Sinusoidal embedding of diffusion time, shape ``(..., 8)``."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    freqs = np.pi * 2.0 ** np.arange(TIME_EMBED_DIM // 2)
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)], axis=-1)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 512
    n_steps: int = 12000
    seed: int = 0
    hidden: int = 64
    t_min: float = 1e-3
    # Decay of the exponential moving average of the weights that is returned;
    # 0 returns the raw SGD iterate.
    ema_decay: float = 0.999


PARAM_NAMES = ("W1", "b1", "W2", "b2", "speaker_embedding")


class ToyScoreNet:
    """Two affine layers with a tanh in between, predicting the score directly.

    Input per column: state, prior mean, time embedding, speaker embedding.
    """

    def __init__(self, dim: int, n_speakers: int = 1, hidden: int = 64, rng: Optional[np.random.Generator] = None):
        if dim < 1 or n_speakers < 1 or hidden < 1:
            raise ValueError("dim, n_speakers and hidden must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim = dim
        self.n_speakers = n_speakers
        self.hidden = hidden
        in_dim = self.in_dim
        self.params = {
            "W1": rng.normal(0.0, 1.0 / np.sqrt(in_dim), (hidden, in_dim)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, 0.1 / np.sqrt(hidden), (dim, hidden)),
            "b2": np.zeros(dim),
            "speaker_embedding": rng.normal(0.0, 0.1, (n_speakers, SPEAKER_EMBED_DIM)),
        }

    @property
    def in_dim(self) -> int:
        return 2 * self.dim + TIME_EMBED_DIM + SPEAKER_EMBED_DIM

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    @classmethod
    def from_params(cls, params: dict) -> "ToyScoreNet":
        hidden, in_dim = params["W1"].shape
        dim = params["W2"].shape[0]
        n_speakers = params["speaker_embedding"].shape[0]
        if in_dim != 2 * dim + TIME_EMBED_DIM + SPEAKER_EMBED_DIM:
            raise ValueError(f"inconsistent parameter shapes: W1 {params['W1'].shape}, W2 {params['W2'].shape}")
        net = cls(dim, n_speakers, hidden)
        net.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        return net

    def copy(self) -> "ToyScoreNet":
        return ToyScoreNet.from_params(self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for k in PARAM_NAMES:
            p = self.params[k]
            self.params[k] = np.asarray(flat[offset:offset + p.size], dtype=np.float64).reshape(p.shape)
            offset += p.size

    def _features(self, x, t, mu, speakers):
        spk = np.asarray(speakers, dtype=np.int64)
        if np.any(spk < 0) or np.any(spk >= self.n_speakers):
            raise IndexError(f"speaker index out of range for {self.n_speakers} registered speakers")
        temb = time_embedding(np.broadcast_to(t, x.shape[:1]))
        semb = self.params["speaker_embedding"][np.broadcast_to(spk, x.shape[:1])]
        return np.concatenate([x, mu, temb, semb], axis=1)

    def _forward(self, z):
        h = np.tanh(z @ self.params["W1"].T + self.params["b1"])
        return h @ self.params["W2"].T + self.params["b2"], h

    def predict_rows(self, x, t, mu, speakers) -> np.ndarray:
        """Batched evaluation on ``(N, dim)`` rows with per-row ``t`` and speaker."""
        x = np.asarray(x, dtype=np.float64)
        mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), x.shape)
        out, _ = self._forward(self._features(x, t, mu, speakers))
        return out

    def __call__(self, x, t, mu, speaker=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError(f"leading axis must be the state dimension {self.dim}, got shape {x.shape}")
        mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), x.shape)
        rows = x.reshape(self.dim, -1).T
        mu_rows = mu.reshape(self.dim, -1).T
        out = self.predict_rows(rows, t, mu_rows, 0 if speaker is None else speaker)
        return out.T.reshape(x.shape)

    def loss_and_grad(self, x_t, t, mu, speakers, target, weight):
        """Weighted squared error ``mean(weight * ||out - target||^2)`` and its gradient."""
        n = x_t.shape[0]
        spk = np.broadcast_to(np.asarray(speakers, dtype=np.int64), (n,))
        z = self._features(x_t, t, mu, spk)
        W1, W2 = self.params["W1"], self.params["W2"]
        with np.errstate(over="ignore", invalid="ignore"):
            out, h = self._forward(z)
            resid = out - target
            loss = float(np.mean(weight * np.sum(resid**2, axis=1)))
            g_out = (2.0 / n) * weight[:, None] * resid
            g_h = g_out @ W2
            g_a = g_h * (1.0 - h**2)
            g_z = g_a @ W1
            g_spk = np.zeros_like(self.params["speaker_embedding"])
            np.add.at(g_spk, spk, g_z[:, -SPEAKER_EMBED_DIM:])
            grads = {
                "W1": g_a.T @ z,
                "b1": g_a.sum(axis=0),
                "W2": g_out.T @ h,
                "b2": g_out.sum(axis=0),
                "speaker_embedding": g_spk,
            }
        return loss, grads


def _dsm_draw(x0_batch, mu, t_batch, sched, rng):
    x0 = np.asarray(x0_batch, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    t = np.asarray(t_batch, dtype=np.float64)
    if t.shape != x0.shape[:1]:
        raise ValueError(f"t_batch shape {t.shape} does not match batch size {x0.shape[0]}")
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), x0.shape)
    decay2 = np.exp(-np.asarray(integrated_beta(sched, t)))
    bshape = (-1,) + (1,) * (x0.ndim - 1)
    v = (1.0 - decay2)
    m = mu + (x0 - mu) * np.sqrt(decay2).reshape(bshape)
    eps = rng.standard_normal(x0.shape)
    sqrt_v = np.sqrt(v).reshape(bshape)
    return m + sqrt_v * eps, -eps / sqrt_v, v, mu


def dsm_loss(est, x0_batch, mu, t_batch, sched: NoiseSchedule, rng: np.random.Generator, speakers=None) -> float:
    """Denoising score-matching loss with weighting ``lambda(t) = v_t``.

    ``x0_batch`` has the batch on its first axis. Estimators exposing
    ``predict_rows`` are evaluated in one batched call; any other callable is
    evaluated item by item as ``est(x_t[n], t[n], mu[n], speakers[n])``.
    """
    x_t, target, v, mu_b = _dsm_draw(x0_batch, mu, t_batch, sched, rng)
    n = x_t.shape[0]
    spk = np.zeros(n, dtype=np.int64) if speakers is None else np.broadcast_to(np.asarray(speakers), (n,))
    t = np.asarray(t_batch, dtype=np.float64)
    if hasattr(est, "predict_rows"):
        out = est.predict_rows(x_t.reshape(n, -1), t, mu_b.reshape(n, -1), spk)
    else:
        out = np.stack([np.asarray(est(x_t[i], t[i], mu_b[i], int(spk[i]))) for i in range(n)]).reshape(n, -1)
    resid = out - target.reshape(n, -1)
    return float(np.mean(v * np.sum(resid**2, axis=1)))


def dsm_loss_and_grad(net: ToyScoreNet, x0_batch, mu, t_batch, sched, rng, speakers=None):
    x_t, target, v, mu_b = _dsm_draw(x0_batch, mu, t_batch, sched, rng)
    n = x_t.shape[0]
    spk = np.zeros(n, dtype=np.int64) if speakers is None else speakers
    return net.loss_and_grad(x_t.reshape(n, -1), np.asarray(t_batch, dtype=np.float64),
                             mu_b.reshape(n, -1), spk, target.reshape(n, -1), v)


def _stack_data(data, dim_hint=None):
    x0s, spks, mus = [], [], []
    for item in data:
        if len(item) == 2:
            x0, s = item
            m = None
        else:
            x0, s, m = item
        x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        x0s.append(x0)
        spks.append(int(s))
        mus.append(np.zeros_like(x0) if m is None else np.broadcast_to(np.asarray(m, dtype=np.float64), x0.shape))
    if not x0s:
        raise ValueError("training data is empty")
    return np.stack(x0s), np.asarray(spks, dtype=np.int64), np.stack(mus)


def train_toy_score(
    config: TrainConfig,
    data: Iterable[Sequence],
    sched: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    n_speakers: Optional[int] = None,
) -> ToyScoreNet:
    """Fit a :class:`ToyScoreNet` by plain SGD on the DSM loss.

    The returned weights are the exponential moving average of the SGD
    iterates (``config.ema_decay``), which suppresses the gradient noise
    that the DSM objective carries at any fixed learning rate.

    ``data`` yields ``(x0, speaker)`` or ``(x0, speaker, mu)`` items, each
    ``x0`` a state vector. Without ``rng`` a generator seeded from
    ``config.seed`` is used, so identical configs give identical nets.
    """
    if config.n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    x0, spk, mu = _stack_data(data)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if n_speakers is None:
        n_speakers = int(spk.max()) + 1
    net = ToyScoreNet(x0.shape[1], n_speakers, config.hidden, rng)
    ema = {k: v.copy() for k, v in net.params.items()}
    decay = config.ema_decay
    last = float("nan")
    for step in range(config.n_steps):
        idx = rng.integers(0, x0.shape[0], config.batch_size)
        t = rng.uniform(config.t_min, sched.T, config.batch_size)
        loss, grads = dsm_loss_and_grad(net, x0[idx], mu[idx], t, sched, rng, spk[idx])
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDivergedError(step, last)
        last = loss
        for k, g in grads.items():
            net.params[k] -= config.learning_rate * g
            if decay:
                ema[k] *= decay
                ema[k] += (1.0 - decay) * net.params[k]
        if step % 500 == 0:
            log.debug("step %d dsm loss %.5f", step, loss)
    if decay:
        net.params = ema
    return net
