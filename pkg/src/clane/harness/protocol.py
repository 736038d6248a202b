"""Class split and the online class-incremental protocol."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class DatasetSplit:
    base: tuple[int, ...]
    holdout: tuple[int, ...]


def split_classes(num_classes: int = 50, rule: str = "zero") -> DatasetSplit:
    """Every fourth class id goes to the hold-out set.

    ``rule="zero"`` picks ids 0, 4, 8, ...; ``rule="one"`` reads the ids as
    one-based and picks 3, 7, 11, ... Only complete groups of four count, so
    50 classes give 12 hold-out and 38 base classes under either rule.
    """
    if num_classes < 4:
        raise ValueError("need at least 4 classes to hold out every fourth one")
    offset = {"zero": 0, "one": 3}.get(rule)
    if offset is None:
        raise ValueError(f"unknown hold-out rule {rule!r}")
    limit = 4 * (num_classes // 4)
    holdout = tuple(c for c in range(limit) if c % 4 == offset)
    base = tuple(c for c in range(num_classes) if c not in holdout)
    return DatasetSplit(base, holdout)


@dataclass(frozen=True)
class ProtocolConfig:
    shots: int | None = 10  # None: every training sample
    order: tuple[int, ...] | None = None  # None: seeded shuffle of the available classes
    seed: int = 0
    test_fraction: float = 0.2
    split_seed: int = 0  # the test split stays fixed across run seeds

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class RunReport:
    learner: str
    seed: int
    order: list[int]
    cumulative: list[float]
    matrix: list[list[float | None]]  # step x class (presentation order), None before introduction
    forgetting: dict[int, float]
    parameter_count: int
    prototypes: int | None
    samples_consumed: int
    config: dict = field(default_factory=dict)
    op_counts: dict | None = None

    @property
    def final_accuracy(self) -> float:
        return self.cumulative[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final_accuracy"] = self.final_accuracy
        d["forgetting"] = {str(k): v for k, v in self.forgetting.items()}
        return d


def train_test_split(features_by_class: dict, cfg: ProtocolConfig):
    """Per class: a fixed test slice, then a seeded shuffle of the rest for shots."""
    train, test = {}, {}
    for c in sorted(features_by_class):
        x = np.asarray(features_by_class[c])
        split_rng = np.random.default_rng([cfg.split_seed, c])
        perm = split_rng.permutation(len(x))
        n_test = max(1, math.ceil(cfg.test_fraction * len(x)))
        test[c] = x[perm[:n_test]]
        rest = x[perm[n_test:]]
        shot_rng = np.random.default_rng([cfg.seed, c])
        rest = rest[shot_rng.permutation(len(rest))]
        train[c] = rest if cfg.shots is None else rest[: cfg.shots]
    return train, test


def presentation_order(classes, cfg: ProtocolConfig) -> list[int]:
    if cfg.order is not None:
        return [int(c) for c in cfg.order]
    rng = np.random.default_rng([cfg.seed, 0x0D])
    return [int(c) for c in rng.permutation(sorted(classes))]


def _predict_all(learner, X) -> np.ndarray:
    return np.array([learner.predict(x) for x in X], dtype=object)


def run_incremental(cfg: ProtocolConfig, learner, features_by_class: dict, name: str = "") -> RunReport:
    """Single pass over ``shots`` samples per class, class by class; after each
    class, evaluate on the test slices of every class introduced so far."""
    order = presentation_order(features_by_class.keys(), cfg)
    missing = [c for c in order if c not in features_by_class or len(features_by_class[c]) < 2]
    if missing:
        raise ValueError(f"no usable samples for classes {missing}")
    if len(set(order)) != len(order):
        raise ValueError("class order repeats a class")
    train, test = train_test_split({c: features_by_class[c] for c in order}, cfg)

    consumed = 0
    matrix, cumulative = [], []
    for step, c in enumerate(order):
        for x in train[c]:
            learner.learn(x, c)
            consumed += 1
        row, hits, total = [], 0, 0
        for seen in order[: step + 1]:
            correct = int(np.sum(_predict_all(learner, test[seen]) == seen))
            row.append(correct / len(test[seen]))
            hits += correct
            total += len(test[seen])
        matrix.append(row + [None] * (len(order) - step - 1))
        cumulative.append(hits / total)

    expected = sum(len(train[c]) for c in order)
    if consumed != expected:
        raise AssertionError(f"consumed {consumed} training samples, expected {expected}")
    forgetting = {}
    for j, c in enumerate(order):
        history = [matrix[i][j] for i in range(j, len(order))]
        forgetting[c] = max(history) - history[-1]
    return RunReport(
        learner=name,
        seed=cfg.seed,
        order=order,
        cumulative=cumulative,
        matrix=matrix,
        forgetting=forgetting,
        parameter_count=int(learner.parameter_count()) if hasattr(learner, "parameter_count") else 0,
        prototypes=getattr(learner, "prototypes", None),
        samples_consumed=consumed,
        config={"shots": cfg.shots, "seed": cfg.seed, "test_fraction": cfg.test_fraction,
                "split_seed": cfg.split_seed},
        op_counts=learner.ops.to_dict() if hasattr(learner, "ops") else None,
    )
