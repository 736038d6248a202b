"""Streaming float baselines: nearest class mean, streaming LDA, replay, fine-tuning.

All learners share the ``learn(x, label)`` / ``predict(x)`` surface used by the
incremental protocol runner. Class ids are arbitrary ints; ties resolve to the
lowest id.
"""

from __future__ import annotations

import numpy as np


class NCM:
    """Nearest class mean with running means."""

    def __init__(self, dim: int):
        self.dim = dim
        self.means: dict[int, np.ndarray] = {}
        self.counts: dict[int, int] = {}

    def learn(self, x, label: int) -> None:
        x = np.asarray(x, dtype=np.float64)
        if label not in self.means:
            self.means[label] = np.zeros(self.dim)
            self.counts[label] = 0
        self.counts[label] += 1
        self.means[label] += (x - self.means[label]) / self.counts[label]

    def predict(self, x) -> int:
        if not self.means:
            raise RuntimeError("NCM has not seen any class")
        classes = sorted(self.means)
        mu = np.stack([self.means[c] for c in classes])
        d = ((mu - np.asarray(x, dtype=np.float64)) ** 2).sum(axis=1)
        return classes[int(np.argmin(d))]

    def parameter_count(self) -> int:
        return len(self.means) * self.dim


def ncm_update(state: NCM, x, label: int) -> NCM:
    state.learn(x, label)
    return state


def ncm_predict(state: NCM, x) -> int:
    return state.predict(x)


class SLDA:
    """Streaming LDA: running class means and a shared within-class covariance.

    The scatter matrix grows by ``n_c/(n_c+1) * d d^T`` with ``d = x - mu_c``
    before the mean update, which reproduces the batch within-class scatter
    exactly. The precision matrix is rebuilt lazily at prediction time.
    """

    def __init__(self, dim: int, shrinkage: float | None = None, rel_shrinkage: float = 1e-4):
        self.dim = dim
        self.shrinkage = shrinkage
        self.rel_shrinkage = rel_shrinkage
        self.means: dict[int, np.ndarray] = {}
        self.counts: dict[int, int] = {}
        self.scatter = np.zeros((dim, dim))
        self.total = 0
        self._cache = None

    @property
    def covariance(self) -> np.ndarray:
        return self.scatter / max(self.total, 1)

    def learn(self, x, label: int) -> None:
        x = np.asarray(x, dtype=np.float64)
        if label not in self.means:
            self.means[label] = x.copy()
            self.counts[label] = 1
        else:
            n = self.counts[label]
            d = x - self.means[label]
            self.scatter += (n / (n + 1)) * np.outer(d, d)
            self.means[label] += d / (n + 1)
            self.counts[label] = n + 1
        self.total += 1
        self._cache = None

    def _eps(self, cov: np.ndarray) -> float:
        if self.shrinkage is not None:
            return self.shrinkage
        return max(self.rel_shrinkage * np.trace(cov) / self.dim, 1e-8)

    def _discriminants(self):
        if self._cache is None:
            classes = sorted(self.means)
            cov = self.covariance
            precision = np.linalg.pinv(cov + self._eps(cov) * np.eye(self.dim), hermitian=True)
            mu = np.stack([self.means[c] for c in classes])
            w = mu @ precision
            b = -0.5 * np.einsum("kd,kd->k", w, mu)
            self._cache = (classes, w, b)
        return self._cache

    def predict(self, x) -> int:
        if not self.means:
            raise RuntimeError("SLDA has not seen any class")
        classes, w, b = self._discriminants()
        return classes[int(np.argmax(w @ np.asarray(x, dtype=np.float64) + b))]

    def parameter_count(self) -> int:
        return len(self.means) * self.dim + self.dim * self.dim


def slda_update(state: SLDA, x, label: int) -> SLDA:
    state.learn(x, label)
    return state


def slda_predict(state: SLDA, x) -> int:
    return state.predict(x)


class LinearHead:
    """Softmax classifier whose rows appear (zero-initialized) as classes arrive."""

    def __init__(self, dim: int, lr: float = 0.01):
        self.dim = dim
        self.lr = lr
        self.classes: list[int] = []
        self.W = np.zeros((0, dim))
        self.b = np.zeros(0)

    def _row(self, label: int) -> int:
        if label not in self.classes:
            self.classes.append(label)
            self.W = np.vstack([self.W, np.zeros((1, self.dim))])
            self.b = np.append(self.b, 0.0)
        return self.classes.index(label)

    def sgd_step(self, X: np.ndarray, labels) -> None:
        """One cross-entropy gradient step averaged over the rows of ``X``."""
        rows = np.array([self._row(int(y)) for y in labels])
        logits = X @ self.W.T + self.b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(rows)), rows] -= 1.0
        self.W -= self.lr * p.T @ X / len(rows)
        self.b -= self.lr * p.mean(axis=0)

    def predict(self, x) -> int:
        if not self.classes:
            raise RuntimeError("head has not seen any class")
        scores = self.W @ np.asarray(x, dtype=np.float64) + self.b
        best = scores.max()
        return min(c for c, s in zip(self.classes, scores) if s == best)

    def parameter_count(self) -> int:
        return self.W.size + self.b.size


class FineTune(LinearHead):
    def learn(self, x, label: int) -> None:
        self.sgd_step(np.asarray(x, dtype=np.float64)[None, :], [label])


def finetune_update(state: FineTune, x, label: int) -> FineTune:
    state.learn(x, label)
    return state


class ReservoirBuffer:
    """Uniform reservoir over every sample offered so far."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.items: list[tuple[np.ndarray, int]] = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, x: np.ndarray, label: int) -> None:
        self.seen += 1
        if self.capacity <= 0:
            return
        if len(self.items) < self.capacity:
            self.items.append((x, label))
            return
        j = int(self.rng.integers(0, self.seen))
        if j < self.capacity:
            self.items[j] = (x, label)

    def sample(self, m: int) -> list[tuple[np.ndarray, int]]:
        if m >= len(self.items):
            return list(self.items)
        idx = self.rng.choice(len(self.items), size=m, replace=False)
        return [self.items[i] for i in sorted(idx)]


class Replay(LinearHead):
    """Fine-tuning on the current sample plus a minibatch drawn from a reservoir."""

    def __init__(self, dim: int, lr: float = 0.01, capacity: int = 768, batch: int = 8, seed: int = 0):
        super().__init__(dim, lr)
        self.batch = batch
        self.buffer = ReservoirBuffer(capacity, np.random.default_rng(seed))

    def learn(self, x, label: int) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.buffer.add(x, label)
        replay = self.buffer.sample(self.batch)
        X = np.vstack([x[None, :]] + [r[0][None, :] for r in replay])
        self.sgd_step(X, [label] + [r[1] for r in replay])

    def parameter_count(self) -> int:
        return super().parameter_count() + len(self.buffer) * self.dim


def replay_update(state: Replay, x, label: int) -> Replay:
    state.learn(x, label)
    return state
