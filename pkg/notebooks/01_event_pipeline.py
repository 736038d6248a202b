"""
From events to features
=======================

Render a synthetic moving-bar clip, bin it into sparse count frames, run the
fixed-point spiking extractor and look at what it costs per window length.
Run with ``python3 notebooks/01_event_pipeline.py``.
"""

# %%
import numpy as np

from clane.events import BinningConfig, bin_to_frames, sparsity
from clane.harness.pipeline import count_ops, default_extractor
from clane.harness.synth import SynthSpec, class_motion, render_bar_clip
from clane.snn import fuse_network, quantize_network

spec = SynthSpec(clip_us=400_000)
cfg = BinningConfig()
angle, speed = class_motion(3, spec.num_classes, spec.speed)
stream = render_bar_clip(np.random.default_rng(0), angle, speed, spec, cfg)
print(f"{len(stream)} events over {spec.clip_us / 1000:.0f} ms")

# %%
# 40 ms windows, 600x600 crop pooled to 100x100, two polarity channels
frames = bin_to_frames(stream, cfg, t_start=0, t_end=spec.clip_us)
print(f"{len(frames)} frames, {frames.nnz} nonzero cells, sparsity {sparsity(frames):.4f}")

# %%
# the extractor is random (no pretrained weights), with thresholds calibrated
# so each layer fires at a modest rate on clips like this one
fnet = fuse_network(default_extractor(0, cfg))
qnet = quantize_network(fnet)
ops = count_ops(frames, qnet)
for i, layer in enumerate(ops.layers):
    print(f"layer {i}: synops {layer.synops:>9}  spikes {layer.spikes:>6}  saturations {layer.saturations}")

# %%
# shorter windows mean more timesteps; each window gets its own calibration
for w in (40_000, 10_000, 2_000):
    wcfg = cfg.with_window(w)
    q = quantize_network(fuse_network(default_extractor(0, wcfg)))
    o = count_ops(bin_to_frames(stream, wcfg, t_start=0, t_end=spec.clip_us), q)
    print(f"{w // 1000:>2} ms: timesteps {o.timesteps:>4}  neuron updates {o.neuron_updates:>9}  synops {o.synops:>9}")
