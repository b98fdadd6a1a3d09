"""Continuous-time diffusion on mel-spectrogram matrices.

The forward process is the mean-reverting variance-preserving SDE

    dX = 0.5 * (mu - X) * beta(t) dt + sqrt(beta(t)) dW_t

with a linear schedule ``beta(t) = beta0 + (betaT - beta0) * t`` on ``[0, T]``,
``T = 1``. Sampling integrates the matching probability-flow ODE backwards
with a uniform first-order Euler grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DiffusionError",
    "DomainError",
    "NonFiniteScoreError",
    "NoiseSchedule",
    "DiffusionState",
    "GaussianMarginal",
    "beta_at",
    "integrated_beta",
    "forward_marginal",
    "sample_forward_em",
    "reverse_generate",
]

ScoreFn = Callable[..., np.ndarray]


class DiffusionError(ValueError):
    """Base class for invalid diffusion inputs."""


class DomainError(DiffusionError):
    """A diffusion time outside ``[0, T]``."""


class NonFiniteScoreError(DiffusionError):
    """The score estimator returned NaN or inf during reverse integration."""

    def __init__(self, step: int, t: float):
        super().__init__(f"score returned non-finite values at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear noise schedule from ``beta0`` at ``t=0`` to ``betaT`` at ``t=T``."""

    beta0: float = 0.05
    betaT: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if not self.beta0 > 0:
            raise DiffusionError(f"beta0 must be positive, got {self.beta0}")
        if not self.betaT >= self.beta0:
            raise DiffusionError(f"betaT ({self.betaT}) must be >= beta0 ({self.beta0})")
        if self.T != 1.0:
            raise DiffusionError(f"diffusion horizon is fixed at T=1.0, got {self.T}")

    def beta(self, t):
        return beta_at(self, t)

    def integral(self, t):
        return integrated_beta(self, t)


@dataclass(frozen=True)
class DiffusionState:
    x: np.ndarray
    t: float


@dataclass(frozen=True)
class GaussianMarginal:
    """Isotropic Gaussian ``N(mean, variance * I)``."""

    mean: np.ndarray
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def _check_time(sched: NoiseSchedule, t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)) or np.any(t_arr < 0.0) or np.any(t_arr > sched.T):
        raise DomainError(f"diffusion time must lie in [0, {sched.T}], got {t}")
    return t_arr


def _as_scalar_or_array(value: np.ndarray):
    return float(value) if value.ndim == 0 else value


def beta_at(sched: NoiseSchedule, t):
    """Noise rate ``beta(t)``; accepts scalars or arrays of times."""
    t_arr = _check_time(sched, t)
    return _as_scalar_or_array(sched.beta0 + (sched.betaT - sched.beta0) * t_arr)


def integrated_beta(sched: NoiseSchedule, t):
    """Cumulative rate ``B(t) = int_0^t beta(s) ds`` in closed form."""
    t_arr = _check_time(sched, t)
    return _as_scalar_or_array(sched.beta0 * t_arr + 0.5 * (sched.betaT - sched.beta0) * t_arr**2)


def forward_marginal(sched: NoiseSchedule, x0, mu, t: float) -> GaussianMarginal:
    """Distribution of ``X_t`` given ``X_0 = x0`` under the forward SDE.

    The SDE is linear (an Ornstein-Uhlenbeck process around ``mu`` with
    time-varying rate), so the transition kernel is Gaussian with

        mean     = mu + (x0 - mu) * exp(-B(t) / 2)
        variance = 1 - exp(-B(t))
    """
    x0 = np.asarray(x0, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x0.shape != mu.shape:
        raise DiffusionError(f"x0 shape {x0.shape} does not match mu shape {mu.shape}")
    big_b = integrated_beta(sched, t)
    decay = np.exp(-0.5 * big_b)
    mean = mu + (x0 - mu) * decay
    variance = float(-np.expm1(-big_b))
    return GaussianMarginal(mean=mean, variance=variance)


def sample_forward_em(
    sched: NoiseSchedule,
    x0,
    mu,
    t: float,
    n_steps: int,
    rng: np.random.Generator,
) -> DiffusionState:
    """Euler-Maruyama simulation of the forward SDE from 0 to ``t``.

    ``x0`` may carry any number of leading path dimensions; every entry is an
    independent trajectory driven by its own Gaussian increments.
    """
    if n_steps < 1:
        raise DiffusionError(f"n_steps must be >= 1, got {n_steps}")
    _check_time(sched, t)
    x = np.array(x0, dtype=np.float64)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), x.shape)
    dt = t / n_steps
    sqrt_dt = np.sqrt(dt)
    for i in range(n_steps):
        b = sched.beta0 + (sched.betaT - sched.beta0) * (i * dt)
        x += 0.5 * (mu - x) * b * dt + np.sqrt(b) * sqrt_dt * rng.standard_normal(x.shape)
    return DiffusionState(x=x, t=float(t))


def reverse_generate(
    sched: NoiseSchedule,
    mu,
    score: ScoreFn,
    n_steps: int = 100,
    t_min: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
    *,
    speaker: Optional[int] = None,
    x_T: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sample by integrating the probability-flow ODE from ``T`` down to ``t_min``.

    Args:
        sched: noise schedule.
        mu: prior mean (the encoder output); ``X_T ~ N(mu, I)``.
        score: called as ``score(x, t, mu, speaker)`` and must return an array
            shaped like ``x``.
        n_steps: number of uniform Euler steps.
        t_min: stopping time; the Gaussian score is singular at ``t = 0``.
        rng: source for the ``X_T`` draw. Ignored when ``x_T`` is given.
        speaker: speaker index forwarded to the score estimator.
        x_T: explicit starting point instead of a random draw.

    Returns:
        The state at ``t_min``.
    """
    if n_steps < 1:
        raise DiffusionError(f"n_steps must be >= 1, got {n_steps}")
    if not 0.0 < t_min < sched.T:
        raise DomainError(f"t_min must lie in (0, {sched.T}), got {t_min}")
    mu = np.asarray(mu, dtype=np.float64)
    if x_T is None:
        if rng is None:
            raise DiffusionError("either rng or x_T is required")
        x = mu + rng.standard_normal(mu.shape)
    else:
        x = np.array(x_T, dtype=np.float64)
        if x.shape != np.broadcast_shapes(x.shape, mu.shape):
            raise DiffusionError(f"x_T shape {x.shape} incompatible with mu shape {mu.shape}")

    h = (sched.T - t_min) / n_steps
    for i in range(n_steps):
        t = sched.T - i * h
        s = np.asarray(score(x, t, mu, speaker), dtype=np.float64)
        if s.shape != x.shape:
            raise DiffusionError(f"score returned shape {s.shape}, expected {x.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteScoreError(i, t)
        b = sched.beta0 + (sched.betaT - sched.beta0) * t
        x = x - 0.5 * ((mu - x) - s) * b * h
    return x
