"""
Denoising score matching on a tiny network
==========================================

Train the small tanh network on standard normal data and compare it with
the analytic score. Takes roughly 15 seconds.
"""

# %%
import numpy as np

from dysdiff import NoiseSchedule, TrainConfig, analytic_gaussian_score, reverse_generate, train_toy_score

sched = NoiseSchedule()
rng = np.random.default_rng(0)
data = [(np.array([v]), 0) for v in rng.normal(size=20_000)]
net = train_toy_score(TrainConfig(seed=0), data, sched)

# %%
# Learned versus exact score at a few points.
for t in (0.1, 0.5, 1.0):
    row = []
    for x in (-2.0, 0.0, 2.0):
        est = net(np.array([[x]]), t, np.zeros((1, 1)))[0, 0]
        true = analytic_gaussian_score(np.array([x]), t, 0.0, 0.0, 1.0, sched)[0]
        row.append(f"x={x:+.0f}: {est:+.3f}/{true:+.3f}")
    print(f"t={t:.1f}  " + "  ".join(row))

# %%
samples = reverse_generate(sched, np.zeros((1, 10_000)), net, 100, 1e-3, np.random.default_rng(3))
print(f"samples from the learned score: mean {samples.mean():+.3f}, variance {samples.var():.3f}")
