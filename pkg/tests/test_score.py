import numpy as np
import pytest

from dysdiff.diffusion import NoiseSchedule, forward_marginal, integrated_beta
from dysdiff.score import (
    GaussianScore,
    ScoreSingularityError,
    ToyScoreNet,
    TrainConfig,
    TrainingDivergedError,
    analytic_gaussian_score,
    dsm_loss,
    dsm_loss_and_grad,
    time_embedding,
    train_toy_score,
)


def log_gaussian(x, mean, var):
    return -0.5 * np.sum((x - mean) ** 2) / var - 0.5 * x.size * np.log(2 * np.pi * var)


def test_score_vanishes_at_mode(sched):
    t, mu, dm, dv = 0.4, np.array([0.3, -1.0]), np.array([1.0, 2.0]), 0.5
    b = integrated_beta(sched, t)
    m_t = mu + (dm - mu) * np.exp(-b / 2)
    np.testing.assert_allclose(analytic_gaussian_score(m_t, t, mu, dm, dv, sched), 0.0, atol=1e-15)


def test_score_unit_variance_case(sched):
    # data_var = 1 makes v_t = 1 for every t
    t = 0.6
    m_t = 0.0 + (2.0 - 0.0) * np.exp(-integrated_beta(sched, t) / 2)
    assert analytic_gaussian_score(np.array([m_t + 1.0]), t, 0.0, 2.0, 1.0, sched)[0] == pytest.approx(-1.0)


def test_score_matches_finite_differences_of_log_density(sched):
    rng = np.random.default_rng(0)
    h = 1e-4
    for _ in range(20):
        t = rng.uniform(0.05, 1.0)
        mu, dm, dv = rng.normal(size=3), rng.normal(size=3), rng.uniform(0.1, 2.0)
        x = rng.normal(size=3)
        b = integrated_beta(sched, t)
        mean = mu + (dm - mu) * np.exp(-b / 2)
        var = 1 - np.exp(-b) + dv * np.exp(-b)
        fd = np.array([(log_gaussian(x + h * e, mean, var) - log_gaussian(x - h * e, mean, var)) / (2 * h)
                       for e in np.eye(3)])
        assert np.max(np.abs(fd - analytic_gaussian_score(x, t, mu, dm, dv, sched))) <= 1e-5


def test_score_singularity(sched):
    with pytest.raises(ScoreSingularityError):
        analytic_gaussian_score(np.zeros(2), 0.0, np.zeros(2), np.zeros(2), 0.0, sched)


def test_gaussian_score_speaker_means(sched):
    est = GaussianScore(sched, 0.0, 1.0, speaker_means={0: -1.0, 1: 1.0})
    x = np.zeros(3)
    assert np.all(est(x, 0.1, np.zeros(3), 0) < 0)
    assert np.all(est(x, 0.1, np.zeros(3), 1) > 0)


def test_time_embedding_shape():
    e = time_embedding(np.array([0.0, 0.5, 1.0]))
    assert e.shape == (3, 8)
    np.testing.assert_allclose(e[0], [0, 0, 0, 0, 1, 1, 1, 1], atol=1e-15)


class _ExactTarget:
    """Returns -(x - m_t(x0)) / v_t, i.e. exactly the DSM target for the drawn noise."""

    def __init__(self, sched, x0s, mu):
        self.sched, self.x0s, self.mu, self.i = sched, x0s, mu, 0

    def __call__(self, x, t, mu, speaker):
        g = forward_marginal(self.sched, self.x0s[self.i], np.broadcast_to(self.mu, self.x0s[self.i].shape), t)
        self.i += 1
        return -(x - g.mean) / g.variance


def test_dsm_loss_zero_for_exact_target(sched):
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(50, 3))
    t = rng.uniform(0.01, 1.0, 50)
    loss = dsm_loss(_ExactTarget(sched, x0, 0.0), x0, 0.0, t, sched, np.random.default_rng(2))
    assert loss == pytest.approx(0.0, abs=1e-18)


def test_dsm_loss_zero_estimator_equals_dimension(sched):
    rng = np.random.default_rng(3)
    d = 4
    x0 = rng.normal(size=(10_000, d))
    t = rng.uniform(1e-3, 1.0, 10_000)
    zero = lambda x, t, mu, s: np.zeros_like(x)
    loss = dsm_loss(zero, x0, 0.0, t, sched, np.random.default_rng(4))
    assert loss == pytest.approx(d, rel=0.05)


def test_dsm_loss_nonnegative_and_reproducible(sched):
    net = ToyScoreNet(2, 2, 8, np.random.default_rng(0))
    x0 = np.random.default_rng(1).normal(size=(32, 2))
    t = np.linspace(0.01, 1.0, 32)
    spk = np.arange(32) % 2
    a = dsm_loss(net, x0, 0.0, t, sched, np.random.default_rng(7), spk)
    b = dsm_loss(net, x0, 0.0, t, sched, np.random.default_rng(7), spk)
    assert a >= 0 and a == b


def test_dsm_gradient_matches_finite_differences(sched):
    rng = np.random.default_rng(5)
    net = ToyScoreNet(3, 2, 16, rng)
    x0 = rng.normal(size=(64, 3))
    mu = rng.normal(size=(64, 3))
    t = rng.uniform(0.01, 1.0, 64)
    spk = rng.integers(0, 2, 64)

    def loss_at(flat):
        trial = net.copy()
        trial.set_flat(flat)
        return dsm_loss(trial, x0, mu, t, sched, np.random.default_rng(99), spk)

    _, grads = dsm_loss_and_grad(net, x0, mu, t, sched, np.random.default_rng(99), spk)
    analytic = np.concatenate([grads[k].ravel() for k in ("W1", "b1", "W2", "b2", "speaker_embedding")])
    flat = net.get_flat()
    h = 1e-6
    for i in rng.choice(flat.size, 20, replace=False):
        e = np.zeros_like(flat)
        e[i] = h
        fd = (loss_at(flat + e) - loss_at(flat - e)) / (2 * h)
        assert abs(fd - analytic[i]) <= 1e-4 * max(abs(fd), 1e-3)


def test_toy_net_shapes_and_determinism():
    net = ToyScoreNet(80, 3, 16, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(80, 7))
    out = net(x, 0.3, np.zeros_like(x), 2)
    assert out.shape == x.shape
    assert np.array_equal(out, net(x, 0.3, np.zeros_like(x), 2))
    assert net.n_params == net.get_flat().size
    with pytest.raises(IndexError):
        net(x, 0.3, np.zeros_like(x), 3)


def test_training_zero_steps_is_identity(sched):
    data = [(np.array([v]), 0) for v in np.linspace(-1, 1, 10)]
    cfg = TrainConfig(n_steps=0, seed=4, hidden=8)
    net = train_toy_score(cfg, data, sched)
    fresh = ToyScoreNet(1, 1, 8, np.random.default_rng(4))
    assert np.array_equal(net.get_flat(), fresh.get_flat())


def test_training_is_seeded(sched):
    data = [(np.array([v]), 0) for v in np.random.default_rng(0).normal(size=200)]
    cfg = TrainConfig(n_steps=50, batch_size=32, seed=8, hidden=8)
    a = train_toy_score(cfg, data, sched)
    b = train_toy_score(cfg, data, sched)
    assert a.get_flat().tobytes() == b.get_flat().tobytes()


def test_training_reduces_heldout_loss(sched):
    rng = np.random.default_rng(0)
    data = [(np.array([v]), 0) for v in rng.normal(size=2000)]
    cfg = TrainConfig(n_steps=600, batch_size=128, seed=1, hidden=16)
    init = train_toy_score(TrainConfig(n_steps=0, seed=1, hidden=16), data, sched)
    net = train_toy_score(cfg, data, sched)
    held = rng.normal(size=(4000, 1))
    t = rng.uniform(1e-3, 1.0, 4000)
    before = dsm_loss(init, held, 0.0, t, sched, np.random.default_rng(3))
    after = dsm_loss(net, held, 0.0, t, sched, np.random.default_rng(3))
    assert after <= before


def test_training_divergence_reports_last_loss(sched):
    data = [(np.array([v]), 0) for v in np.linspace(-3, 3, 50)]
    with pytest.raises(TrainingDivergedError) as exc:
        train_toy_score(TrainConfig(learning_rate=1e6, n_steps=200, batch_size=16, hidden=8), data, sched)
    assert np.isfinite(exc.value.last_finite_loss)


@pytest.mark.slow
def test_speaker_conditioning_separates_means(sched):
    rng = np.random.default_rng(0)
    data = [(np.array([v - 1.0]), 0) for v in rng.normal(size=10_000)]
    data += [(np.array([v + 1.0]), 1) for v in rng.normal(size=10_000)]
    net = train_toy_score(TrainConfig(learning_rate=0.05, n_steps=8000, batch_size=512, seed=0), data, sched)
    from dysdiff.diffusion import reverse_generate

    means = []
    for spk in (0, 1):
        x = reverse_generate(sched, np.zeros((1, 4000)), net, 100, 1e-3, np.random.default_rng(10), speaker=spk)
        means.append(x.mean())
    assert means[1] - means[0] >= 1.0
