"""End-to-end clip processing: frames -> spikes -> graded vector -> normalized vector -> prototype."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..aggnorm import NormConfig, NormalizedVector, accumulate, normalize_vector
from ..clp import Prediction, PrototypeStore
from ..events import BinningConfig, FrameSequence, bin_to_frames
from ..ops import OpCounts
from ..snn import Network, calibrate_thresholds, float_forward, run_extractor, synthetic_network
from .synth import SynthSpec, synth_events


@dataclass
class ClipResult:
    graded: np.ndarray
    normalized: NormalizedVector | None
    prediction: Prediction | None
    ops: OpCounts


def run_pipeline(frames: FrameSequence, qnet: Network, *, norm: NormConfig = NormConfig(),
                 store: PrototypeStore | None = None, binary_input: bool = False) -> ClipResult:
    """Process one clip through the fixed-point path and count every stage.

    A clip whose feature layer never fires yields ``normalized=None``.
    """
    ops = OpCounts.for_layers(len(qnet.layers))
    spikes = run_extractor(frames, qnet, binary_input=binary_input, ops=ops)
    d = qnet.feature_dim
    graded = accumulate(spikes, d)
    ops.add_stage("aggregate_adds", sum(len(s) for s in spikes))
    if not graded.any():
        return ClipResult(graded, None, None, ops)
    normalized = normalize_vector(graded, norm)
    ops.add_stage("norm_squares", d)
    ops.add_stage("norm_inv_sqrt", 1)
    ops.add_stage("norm_scales", d)
    pred = None
    if store is not None:
        pred = store.infer(normalized)
        ops.add_stage("prototype_macs", len(store) * d)
    return ClipResult(graded, normalized, pred, ops)


def count_ops(frames: FrameSequence, qnet: Network, **kwargs) -> OpCounts:
    return run_pipeline(frames, qnet, **kwargs).ops


def default_extractor(seed: int = 0, cfg: BinningConfig | None = None, *, target_rate=(0.05,) * 5 + (0.3,),
                      calibration_clips: int = 2) -> Network:
    """Float stand-in for a pretrained extractor: random weights with thresholds
    calibrated on a few moving-bar clips binned with ``cfg``."""
    cfg = cfg or BinningConfig()
    ow, oh = cfg.out_resolution
    net = synthetic_network(seed, input_hw=(oh, ow))
    spec = SynthSpec(num_classes=max(2, calibration_clips), clips_per_class=1, seed=seed + 1)
    clips = [bin_to_frames(s[0], cfg, t_start=0, t_end=spec.clip_us)
             for s in list(synth_events(spec, cfg).values())[:calibration_clips]]
    return calibrate_thresholds(net, clips, list(target_rate))


def clip_features(frames_by_class: dict, net: Network, *, path: str = "fixed",
                  binary_input: bool = False) -> dict[int, np.ndarray]:
    """Per-class ``(n_clips, D)`` features.

    ``path="fixed"`` returns aggregated integer spike counts from the quantized
    network; ``path="float"`` returns float spike-count rates.
    """
    out = {}
    for c, clips in sorted(frames_by_class.items()):
        rows = []
        for frames in clips:
            if path == "fixed":
                rows.append(accumulate(run_extractor(frames, net, binary_input=binary_input), net.feature_dim))
            elif path == "float":
                rows.append(float_forward(frames, net, binary_input=binary_input))
            else:
                raise ValueError(f"unknown feature path {path!r}")
        out[c] = np.array(rows, dtype=np.float64)
    return out
