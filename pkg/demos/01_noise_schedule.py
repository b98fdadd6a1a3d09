"""
The linear noise schedule and the forward kernel
================================================

A short walk through the forward diffusion: how much noise has been
injected by time t, and what the noised distribution of a single
starting point looks like.
"""

# %%
import numpy as np

from dysdiff import NoiseSchedule, forward_marginal, integrated_beta, sample_forward_em

sched = NoiseSchedule(beta0=0.05, betaT=20.0)
for t in (0.0, 0.1, 0.25, 0.5, 1.0):
    print(f"t={t:4.2f}  beta={sched.beta(t):6.3f}  B(t)={integrated_beta(sched, t):7.4f}")

# %%
# Starting from x0 = 2 and drifting towards mu = 0, the marginal at time t is
# Gaussian. Simulate it with Euler-Maruyama and compare with the closed form.
rng = np.random.default_rng(0)
for t in (0.1, 0.3, 1.0):
    x = sample_forward_em(sched, np.full(50_000, 2.0), 0.0, t, 500, rng).x
    ref = forward_marginal(sched, 2.0, 0.0, t)
    print(f"t={t:3.1f}  MC mean {x.mean():+.4f} vs {ref.mean:+.4f}   MC var {x.var():.4f} vs {ref.variance:.4f}")

# %%
# A smaller terminal rate leaves more of the data signal at t = 1.
for betaT in (10.0, 20.0):
    m = forward_marginal(NoiseSchedule(0.05, betaT), 2.0, 0.0, 1.0)
    print(f"betaT={betaT:4.1f}: residual mean {m.mean:.4f}, variance {m.variance:.6f}")
