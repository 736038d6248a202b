"""Prototype-based continual learner with single-shot imprinting.

``PrototypeStore`` holds 8-bit prototypes and learns by allocation only:
a new prototype is imprinted when the input is novel (best similarity below
the novelty threshold) or misclassified, and existing prototypes never
change. ``FloatPrototypeStore`` is the real-valued variant that additionally
nudges the winning prototype towards correctly classified inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .aggnorm import NormalizedVector

WEIGHT_SCALE = 127
MAGIC = b"CLPS"
VERSION = 1


class Outcome(str, Enum):
    CORRECT = "correct"
    ERROR_ALLOCATED = "error_allocated"
    NOVEL_ALLOCATED = "novel_allocated"
    ERROR_CAPACITY_FULL = "error_capacity_full"


@dataclass(frozen=True)
class Prediction:
    winner: int | None
    label: int | None
    scores: np.ndarray
    scale: float = 1.0  # real similarity = scores * scale

    @property
    def similarity(self) -> float | None:
        if self.winner is None:
            return None
        return float(self.scores[self.winner] * self.scale)


@dataclass(frozen=True)
class LearnEvent:
    outcome: Outcome
    allocated: int | None = None


def quantize_prototype(x: NormalizedVector) -> np.ndarray:
    """Round a normalized vector to int8 with unit = 127 (half to even)."""
    w = np.round(x.real() * WEIGHT_SCALE)
    return np.clip(w, -WEIGHT_SCALE, WEIGHT_SCALE).astype(np.int8)


class PrototypeStore:
    def __init__(self, dim: int, capacity: int = 512, novelty_threshold: float = 0.3):
        if not 0.0 < novelty_threshold < 1.0:
            raise ValueError("novelty threshold must lie in (0, 1)")
        self.dim = dim
        self.capacity = capacity
        self.novelty_threshold = novelty_threshold
        self.weights = np.zeros((0, dim), dtype=np.int8)
        self.labels: list[int] = []
        self.birth_steps: list[int] = []
        self.steps = 0

    def __len__(self) -> int:
        return len(self.labels)

    def _check(self, x: NormalizedVector) -> None:
        if len(x) != self.dim:
            raise ValueError(f"input has dimension {len(x)}, store expects {self.dim}")

    def infer(self, x: NormalizedVector) -> Prediction:
        self._check(x)
        scale = 1.0 / (WEIGHT_SCALE * 2.0**x.frac_bits)
        if not self.labels:
            return Prediction(None, None, np.zeros(0, dtype=np.int64), scale)
        scores = self.weights.astype(np.int64) @ x.values.astype(np.int64)
        win = int(np.argmax(scores))  # first maximum, i.e. lowest index on ties
        return Prediction(win, self.labels[win], scores, scale)

    def learn(self, x: NormalizedVector, label: int) -> tuple[Prediction, LearnEvent]:
        pred = self.infer(x)
        step = self.steps
        self.steps += 1
        if pred.winner is None or pred.similarity < self.novelty_threshold:
            outcome = Outcome.NOVEL_ALLOCATED
        elif pred.label != label:
            outcome = Outcome.ERROR_ALLOCATED
        else:
            return pred, LearnEvent(Outcome.CORRECT)
        if len(self) >= self.capacity:
            return pred, LearnEvent(Outcome.ERROR_CAPACITY_FULL)
        self.weights = np.vstack([self.weights, quantize_prototype(x)[None, :]])
        self.labels.append(int(label))
        self.birth_steps.append(step)
        return pred, LearnEvent(outcome, len(self) - 1)

    def dumps(self) -> bytes:
        parts = [MAGIC, struct.pack("<HII", VERSION, self.dim, len(self))]
        for w, label, birth in zip(self.weights, self.labels, self.birth_steps):
            parts.append(struct.pack("<IQ", label, birth))
            parts.append(w.astype("<i1").tobytes())
        return b"".join(parts)

    @classmethod
    def loads(cls, data: bytes, capacity: int = 512, novelty_threshold: float = 0.3) -> "PrototypeStore":
        if data[:4] != MAGIC:
            raise ValueError(f"bad magic {data[:4]!r}")
        version, dim, count = struct.unpack_from("<HII", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported store version {version}")
        rec = np.dtype([("label", "<u4"), ("birth", "<u8"), ("w", "<i1", (dim,))])
        body = data[14:]
        if len(body) != rec.itemsize * count:
            raise ValueError("store payload does not match its header")
        arr = np.frombuffer(body, dtype=rec, count=count)
        store = cls(dim, max(capacity, count), novelty_threshold)
        store.weights = arr["w"].astype(np.int8).reshape(count, dim)
        store.labels = arr["label"].astype(int).tolist()
        store.birth_steps = arr["birth"].astype(int).tolist()
        store.steps = max(store.birth_steps, default=-1) + 1
        return store


def infer(store: PrototypeStore, x: NormalizedVector) -> Prediction:
    return store.infer(x)


def learn_step(store: PrototypeStore, x: NormalizedVector, label: int):
    """Mutates ``store``; returns ``(store, prediction, event)``."""
    pred, event = store.learn(x, label)
    return store, pred, event


@dataclass
class FloatPrototypeStore:
    """Real-valued reference: same allocation policy, plus a winner update on
    correct predictions ``w += lr * (x - <w, x> w)``, which keeps ``|w|`` near 1
    without an explicit renormalization."""

    dim: int
    capacity: int = 512
    novelty_threshold: float = 0.3
    lr: float = 0.0
    weights: np.ndarray = field(default=None)
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros((0, self.dim))

    def __len__(self) -> int:
        return len(self.labels)

    def infer(self, x: np.ndarray) -> Prediction:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"input has shape {x.shape}, store expects ({self.dim},)")
        if not self.labels:
            return Prediction(None, None, np.zeros(0))
        scores = self.weights @ x
        win = int(np.argmax(scores))
        return Prediction(win, self.labels[win], scores)

    def learn(self, x: np.ndarray, label: int) -> tuple[Prediction, LearnEvent]:
        pred = self.infer(x)
        if pred.winner is None or pred.similarity < self.novelty_threshold:
            outcome = Outcome.NOVEL_ALLOCATED
        elif pred.label != label:
            outcome = Outcome.ERROR_ALLOCATED
        else:
            w = self.weights[pred.winner]
            self.weights[pred.winner] = w + self.lr * (x - (w @ x) * w)
            return pred, LearnEvent(Outcome.CORRECT)
        if len(self) >= self.capacity:
            return pred, LearnEvent(Outcome.ERROR_CAPACITY_FULL)
        self.weights = np.vstack([self.weights, np.asarray(x, dtype=np.float64)[None, :]])
        self.labels.append(int(label))
        return pred, LearnEvent(outcome, len(self) - 1)


def clp_float_reference_step(store: FloatPrototypeStore, x, label: int, lr: float | None = None):
    if lr is not None:
        store.lr = lr
    store.learn(x, label)
    return store
