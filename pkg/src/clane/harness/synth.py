"""Seeded synthetic datasets: clustered clip features and moving-bar event clips."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..events import SENSOR_HEIGHT, SENSOR_WIDTH, BinningConfig, EventStream


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 12
    dim: int = 256
    samples_per_class: int = 50
    separation: float = 1.0
    noise: float = 0.1
    seed: int = 0
    # optional shared low-rank nuisance (correlated across feature dims, same for all classes)
    nuisance_rank: int = 0
    nuisance_scale: float = 0.0
    # event-level generator
    clips_per_class: int = 10
    clip_us: int = 400_000
    step_us: int = 2_000
    bar_length: int = 20
    speed: float = 0.5
    noise_rate_hz: float = 5_000.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if self.noise < 0 or self.noise_rate_hz < 0:
            raise ValueError("noise must be non-negative")
        if self.clip_us % self.step_us:
            raise ValueError("clip_us must be a multiple of step_us")


def class_centers(k: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """``k`` unit vectors with pairwise cosine <= ``1 - separation``.

    For separation <= 1 each center is a shared direction plus an orthogonal
    class-specific one, so every pair has cosine exactly ``1 - separation``
    (spike-count features share a large common component). Above 1 the
    centers form a regular simplex, which caps separation at ``1 + 1/(k-1)``.
    """
    max_sep = 1.0 + 1.0 / (k - 1)
    if separation > max_sep + 1e-12:
        raise ValueError(f"separation {separation} infeasible for {k} classes (max {max_sep:.4f})")
    if k + 1 > dim:
        raise ValueError(f"cannot place {k} separated centers in {dim} dimensions")
    q, _ = np.linalg.qr(rng.normal(size=(dim, k + 1)))
    common, specific = q[:, 0], q[:, 1:].T
    if separation <= 1.0:
        return math.sqrt(1.0 - separation) * common + math.sqrt(separation) * specific
    centers = specific - specific.mean(axis=0)
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def synth_features(spec: SynthSpec) -> dict[int, np.ndarray]:
    """Gaussian clusters around separated unit centers, ``samples_per_class`` each.

    Noise is isotropic with std ``noise`` per dimension, plus, when
    ``nuisance_rank > 0``, a random combination of that many fixed unit
    directions with std ``nuisance_scale`` each.
    """
    rng = np.random.default_rng(spec.seed)
    centers = class_centers(spec.num_classes, spec.dim, spec.separation, rng)
    basis = np.linalg.qr(rng.normal(size=(spec.dim, max(spec.nuisance_rank, 1))))[0].T[: spec.nuisance_rank]
    out = {}
    for c in range(spec.num_classes):
        x = centers[c] + spec.noise * rng.normal(size=(spec.samples_per_class, spec.dim))
        if spec.nuisance_rank:
            x += spec.nuisance_scale * rng.normal(size=(spec.samples_per_class, spec.nuisance_rank)) @ basis
        out[c] = x
    return out


def bar_cells(center_row: float, center_col: float, angle: float, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a bar by stepping one cell at a time along its dominant axis.

    The dominant coordinate is distinct for every cell, so a bar always covers
    exactly ``length`` cells before wrapping.
    """
    dr, dc = math.sin(angle), math.cos(angle)
    i = np.arange(length) - (length - 1) / 2
    if abs(dc) >= abs(dr):
        cols = np.floor(center_col) + np.arange(length) - length // 2
        rows = np.round(center_row + i * dr / dc)
    else:
        rows = np.floor(center_row) + np.arange(length) - length // 2
        cols = np.round(center_col + i * dc / dr)
    return rows.astype(np.int64), cols.astype(np.int64)


def render_bar_clip(rng: np.random.Generator, angle: float, speed: float, spec: SynthSpec,
                    cfg: BinningConfig) -> EventStream:
    """One clip: a bar sweeping perpendicular to itself plus uniform noise events.

    Bar events at step ``k`` have timestamps inside ``[k*step_us, (k+1)*step_us)``,
    one per covered output cell, so binning at ``step_us`` gives exactly
    ``bar_length`` positive cells per frame when noise is off.
    """
    ow, oh = cfg.out_resolution
    if spec.bar_length > min(ow, oh):
        raise ValueError("bar longer than the output grid")
    px, py = cfg.pool
    x0, y0 = cfg.crop_origin
    steps = spec.clip_us // spec.step_us
    start_r, start_c = rng.uniform(0, oh), rng.uniform(0, ow)
    nr, nc = math.cos(angle), -math.sin(angle)  # unit normal to the bar

    xs, ys, ts = [], [], []
    for k in range(steps):
        rows, cols = bar_cells(start_r + k * speed * nr, start_c + k * speed * nc, angle, spec.bar_length)
        rows %= oh
        cols %= ow
        n = len(rows)
        xs.append(x0 + cols * px + rng.integers(0, px, n))
        ys.append(y0 + rows * py + rng.integers(0, py, n))
        ts.append(k * spec.step_us + rng.integers(0, spec.step_us, n))
    x, y, t = np.concatenate(xs), np.concatenate(ys), np.concatenate(ts)
    p = np.ones(len(x), dtype=np.int64)

    n_noise = rng.poisson(spec.noise_rate_hz * spec.clip_us / 1e6)
    if n_noise:
        x = np.concatenate([x, rng.integers(x0, x0 + cfg.crop_size[0], n_noise)])
        y = np.concatenate([y, rng.integers(y0, y0 + cfg.crop_size[1], n_noise)])
        t = np.concatenate([t, rng.integers(0, spec.clip_us, n_noise)])
        p = np.concatenate([p, rng.choice(np.array([-1, 1]), n_noise)])
    return EventStream.from_arrays(SENSOR_WIDTH, SENSOR_HEIGHT, x, y, t, p)


def class_motion(c: int, k: int, speed: float) -> tuple[float, float]:
    """Bar orientation and speed (cells per step) of class ``c``."""
    return math.pi * c / k, speed * (1.0 + 0.5 * (c % 3))


def synth_events(spec: SynthSpec, cfg: BinningConfig | None = None) -> dict[int, list[EventStream]]:
    """``clips_per_class`` moving-bar clips per class; orientation and speed encode the class."""
    cfg = cfg or BinningConfig()
    rng = np.random.default_rng(spec.seed)
    out = {}
    for c in range(spec.num_classes):
        angle, speed = class_motion(c, spec.num_classes, spec.speed)
        out[c] = [render_bar_clip(rng, angle + rng.normal(0, 0.05), speed, spec, cfg)
                  for _ in range(spec.clips_per_class)]
    return out
