import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis

from clane.baselines import (
    NCM,
    SLDA,
    FineTune,
    Replay,
    ReservoirBuffer,
    finetune_update,
    ncm_predict,
    ncm_update,
    replay_update,
    slda_predict,
    slda_update,
)
from oracles import batch_within_class


def two_gaussians(rng, n, d, gap=4.0):
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, d))
    X[:, 0] += gap * y
    return X, y


class TestNCM:
    def test_means_equal_samples(self):
        s = NCM(3)
        for c in range(3):
            ncm_update(s, np.eye(3)[c], c)
        for c in range(3):
            np.testing.assert_array_equal(s.means[c], np.eye(3)[c])

    def test_two_sample_mean(self):
        s = NCM(2)
        ncm_update(s, [0, 0], "A")
        ncm_update(s, [2, 2], "A")
        np.testing.assert_allclose(s.means["A"], [1, 1])

    def test_batch_means(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(500, 16)), rng.integers(0, 5, 500)
        s = NCM(16)
        for x, c in zip(X, y):
            ncm_update(s, x, int(c))
        for c in range(5):
            np.testing.assert_allclose(s.means[c], X[y == c].mean(axis=0), atol=1e-9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(100, 4)), rng.integers(0, 3, 100)
        a, b = NCM(4), NCM(4)
        for i in range(100):
            a.learn(X[i], int(y[i]))
        for i in rng.permutation(100):
            b.learn(X[i], int(y[i]))
        for c in a.means:
            np.testing.assert_allclose(a.means[c], b.means[c], atol=1e-12)

    def test_tie_lowest_class(self):
        s = NCM(1)
        s.learn([1.0], 5)
        s.learn([-1.0], 2)
        assert ncm_predict(s, [0.0]) == 2

    def test_empty_predict(self):
        with pytest.raises(RuntimeError):
            NCM(2).predict([0, 0])


class TestSLDA:
    def test_single_class(self):
        s = SLDA(4)
        rng = np.random.default_rng(2)
        for x in rng.normal(size=(10, 4)):
            slda_update(s, x, 3)
        assert all(slda_predict(s, q) == 3 for q in rng.normal(size=(20, 4)) * 10)

    def test_empty_predict(self):
        with pytest.raises(RuntimeError):
            SLDA(3).predict(np.zeros(3))

    def test_covariance_matches_batch(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(1000, 8)) @ rng.normal(size=(8, 8))
        y = rng.integers(0, 4, 1000)
        s = SLDA(8)
        for x, c in zip(X, y):
            s.learn(x, int(c))
        means, cov = batch_within_class(X, y)
        np.testing.assert_allclose(s.covariance, cov, atol=1e-6)
        for c in means:
            np.testing.assert_allclose(s.means[c], means[c], atol=1e-6)

    def test_agrees_with_batch_lda(self):
        rng = np.random.default_rng(4)
        X, y = two_gaussians(rng, 200, 8)
        s = SLDA(8)
        for x, c in zip(X, y):
            s.learn(x, int(c))
        lda = LinearDiscriminantAnalysis(solver="lsqr", priors=[0.5, 0.5]).fit(X, y)
        Q = rng.normal(size=(2000, 8)) * 2
        Q[:, 0] += 2
        ours = np.array([s.predict(q) for q in Q])
        assert np.mean(ours == lda.predict(Q)) >= 0.995

    def test_fixed_shrinkage(self):
        s = SLDA(2, shrinkage=0.5)
        s.learn([0.0, 0.0], 0)
        s.learn([1.0, 0.0], 1)
        assert s._eps(s.covariance) == 0.5

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_covariance_symmetric_psd(self, seed):
        rng = np.random.default_rng(seed)
        s = SLDA(5)
        for x, c in zip(rng.normal(size=(30, 5)), rng.integers(0, 3, 30)):
            s.learn(x, int(c))
        cov = s.covariance
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10


class TestFineTune:
    def test_zero_lr(self):
        s = FineTune(4, lr=0.0)
        finetune_update(s, np.ones(4), 0)
        finetune_update(s, np.ones(4), 1)
        assert not s.W.any() and not s.b.any()

    def test_one_class(self):
        s = FineTune(4, lr=0.1)
        rng = np.random.default_rng(5)
        for x in rng.normal(size=(10, 4)):
            s.learn(x, 0)
        assert all(s.predict(q) == 0 for q in rng.normal(size=(20, 4)))

    def test_rows_zero_initialized(self):
        s = FineTune(3, lr=0.1)
        s.learn(np.ones(3), 0)
        s._row(7)
        assert s.classes == [0, 7]
        assert not s.W[1].any()

    def test_forgets_first_class(self):
        rng = np.random.default_rng(6)
        mu = np.eye(16)[:2] * 3
        s = FineTune(16, lr=0.01)
        for _ in range(100):
            s.learn(mu[0] + rng.normal(size=16), 0)
        for _ in range(100):
            s.learn(mu[1] + rng.normal(size=16), 1)
        test = mu[0] + rng.normal(size=(200, 16))
        assert np.mean([s.predict(q) == 0 for q in test]) < 0.5


class TestReplay:
    def test_capacity_zero_is_finetune(self):
        rng = np.random.default_rng(7)
        a, b = Replay(8, lr=0.05, capacity=0), FineTune(8, lr=0.05)
        for x, c in zip(rng.normal(size=(50, 8)), rng.integers(0, 3, 50)):
            replay_update(a, x, int(c))
            finetune_update(b, x, int(c))
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, b.b)

    def test_small_buffer_uses_all(self):
        buf = ReservoirBuffer(10, np.random.default_rng(0))
        for i in range(3):
            buf.add(np.full(2, i), i)
        assert [c for _, c in buf.sample(8)] == [0, 1, 2]

    def test_buffer_bounded(self):
        buf = ReservoirBuffer(5, np.random.default_rng(0))
        for i in range(100):
            buf.add(np.zeros(1), i)
        assert len(buf) == 5 and buf.seen == 100

    def test_reservoir_uniform(self):
        hits = np.zeros(20)
        for seed in range(400):
            buf = ReservoirBuffer(5, np.random.default_rng(seed))
            for i in range(20):
                buf.add(None, i)
            for _, i in buf.items:
                hits[i] += 1
        # each item kept with probability 1/4
        assert np.all(np.abs(hits / 400 - 0.25) < 0.1)

    def test_seeded_rerun_identical(self):
        rng = np.random.default_rng(8)
        data = list(zip(rng.normal(size=(80, 6)), rng.integers(0, 4, 80)))
        runs = []
        for _ in range(2):
            s = Replay(6, capacity=20, seed=3)
            for x, c in data:
                s.learn(x, int(c))
            runs.append(s.W.copy())
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_replay_helps_old_classes(self):
        rng = np.random.default_rng(9)
        mu = np.eye(16)[:3] * 3
        stream = [(mu[c] + rng.normal(size=16), c) for c in range(3) for _ in range(60)]
        ft, rp = FineTune(16, lr=0.05), Replay(16, lr=0.05, capacity=1000, seed=0)
        for x, c in stream:
            ft.learn(x, c)
            rp.learn(x, c)
        test = mu[0] + rng.normal(size=(200, 16))
        acc = lambda m: np.mean([m.predict(q) == 0 for q in test])  # noqa: E731
        assert acc(rp) >= acc(ft)
