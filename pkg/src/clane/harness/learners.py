"""Learner registry: uniform ``learn`` / ``predict`` adapters over every method."""

from __future__ import annotations

import numpy as np

from ..aggnorm import GRADED_MAX, NormConfig, normalize_vector, to_graded
from ..baselines import NCM, SLDA, FineTune, Replay
from ..clp import FloatPrototypeStore, PrototypeStore
from ..ops import OpCounts


def as_graded(x) -> np.ndarray:
    """Integer-valued inputs (spike counts, even when stored as floats) pass through;
    anything else is rescaled by :func:`to_graded`."""
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer):
        return x.astype(np.int64)
    if np.all(x == np.round(x)) and np.all(np.abs(x) <= GRADED_MAX):
        return x.astype(np.int64)
    return to_graded(x)


class ClpLoihi:
    """Fixed-point path: graded vector -> division-free normalization -> 8-bit prototypes."""

    def __init__(self, dim: int, capacity: int = 512, novelty_threshold: float = 0.3,
                 norm: NormConfig = NormConfig()):
        self.store = PrototypeStore(dim, capacity, novelty_threshold)
        self.norm = norm
        self.events: list = []
        self.ops = OpCounts()  # post-extractor stages only

    def _encode(self, x):
        v = normalize_vector(as_graded(x), self.norm)
        d = len(v)
        self.ops.add_stage("norm_squares", d)
        self.ops.add_stage("norm_inv_sqrt", 1)
        self.ops.add_stage("norm_scales", d)
        self.ops.add_stage("prototype_macs", len(self.store) * d)
        return v

    def learn(self, x, label: int) -> None:
        _, event = self.store.learn(self._encode(x), label)
        self.events.append(event.outcome.value)

    def predict(self, x):
        return self.store.infer(self._encode(x)).label

    def parameter_count(self) -> int:
        return self.store.weights.size

    @property
    def prototypes(self) -> int:
        return len(self.store)


class ClpReference:
    """Float prototypes with the self-normalizing winner update."""

    def __init__(self, dim: int, capacity: int = 512, novelty_threshold: float = 0.3, lr: float = 0.05):
        self.store = FloatPrototypeStore(dim, capacity, novelty_threshold, lr)

    @staticmethod
    def _encode(x):
        x = np.asarray(x, dtype=np.float64)
        n = np.linalg.norm(x)
        if n == 0:
            raise ValueError("cannot normalize a zero vector (empty clip)")
        return x / n

    def learn(self, x, label: int) -> None:
        self.store.learn(self._encode(x), label)

    def predict(self, x):
        return self.store.infer(self._encode(x)).label

    def parameter_count(self) -> int:
        return self.store.weights.size

    @property
    def prototypes(self) -> int:
        return len(self.store)


LEARNERS = ("clp-loihi", "clp-reference", "ncm", "slda", "replay", "finetune")


def make_learner(name: str, dim: int, *, seed: int = 0, num_classes: int = 12,
                 novelty_threshold: float = 0.3, capacity: int = 512, clp_lr: float = 0.05,
                 lr: float = 0.01, finetune_lr: float = 0.5, replay_per_class: int = 64, replay_batch: int = 8,
                 slda_shrinkage: float | None = None, norm: NormConfig = NormConfig()):
    if name == "clp-loihi":
        return ClpLoihi(dim, capacity, novelty_threshold, norm)
    if name == "clp-reference":
        return ClpReference(dim, capacity, novelty_threshold, clp_lr)
    if name == "ncm":
        return NCM(dim)
    if name == "slda":
        return SLDA(dim, shrinkage=slda_shrinkage)
    if name == "replay":
        return Replay(dim, lr, replay_per_class * num_classes, replay_batch, seed)
    if name == "finetune":
        return FineTune(dim, finetune_lr)
    raise ValueError(f"unknown learner {name!r}; choose from {', '.join(LEARNERS)}")
