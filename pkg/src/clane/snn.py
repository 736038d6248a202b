"""Spiking convolutional feature extractor.

Two execution paths share one network description:

* a fixed-point path (``QuantLayer``, :func:`layer_step`, :func:`run_extractor`)
  that only touches nonzero inputs and keeps saturating 24-bit membranes, and
* a float path (``FloatLayer``, :func:`float_forward`) with the same PLIF
  dynamics in real arithmetic, used as oracle and as the baseline feature path.

Convolutions are 3x3 with zero padding 1. Neuron indices are flat row-major
over ``(channel, row, col)``, which makes the flatten before the fully
connected layer a no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .events import FrameSequence
from .ops import LayerOps, OpCounts

ALPHA_FRAC_BITS = 12
ALPHA_ONE = 1 << ALPHA_FRAC_BITS
V_MAX = (1 << 23) - 1


def conv_out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5


@dataclass
class FloatLayer:
    """Real-valued spiking layer.

    ``weight`` is ``(cout, cin, 3, 3)`` for ``kind="conv"`` and
    ``(dout, prod(in_shape))`` for ``kind="fc"``.
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray
    in_shape: tuple[int, ...]
    stride: int = 1
    alpha: float = 0.5
    threshold: float = 1.0
    bn: BatchNorm | None = None

    def __post_init__(self):
        _check_geometry(self)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    @property
    def out_shape(self) -> tuple[int, ...]:
        return _out_shape(self)


@dataclass
class QuantLayer:
    """Integer spiking layer: int8 weights, Q0.12 decay, integer threshold.

    ``scale_exp`` records the power-of-two factor between integer and real
    membrane units (``v_int ~ v_real * 2**scale_exp``).
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray
    in_shape: tuple[int, ...]
    stride: int = 1
    alpha_q: int = ALPHA_ONE // 2
    threshold_q: int = 1
    scale_exp: int = 0

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.min(initial=0) < -128 or self.weight.max(initial=0) > 127:
            raise ValueError("weights must fit signed 8 bits")
        self.weight = self.weight.astype(np.int8)
        self.bias = np.asarray(self.bias, dtype=np.int64)
        _check_geometry(self)
        if not 0 <= self.alpha_q <= ALPHA_ONE:
            raise ValueError("alpha_q must lie in [0, 4096]")
        if self.threshold_q <= 0:
            raise ValueError("threshold_q must be positive")

    @property
    def out_shape(self) -> tuple[int, ...]:
        return _out_shape(self)

    @property
    def n_out(self) -> int:
        return math.prod(self.out_shape)

    def bias_per_neuron(self) -> np.ndarray:
        if self.kind == "conv":
            _, ho, wo = self.out_shape
            return np.repeat(self.bias, ho * wo)
        return self.bias


def _check_geometry(layer) -> None:
    if layer.kind == "conv":
        if layer.weight.ndim != 4 or layer.weight.shape[2:] != (3, 3):
            raise ValueError(f"conv weight must be (cout, cin, 3, 3), got {layer.weight.shape}")
        if len(layer.in_shape) != 3 or layer.in_shape[0] != layer.weight.shape[1]:
            raise ValueError(f"conv input {layer.in_shape} does not match weight {layer.weight.shape}")
        if layer.stride < 1:
            raise ValueError("stride must be >= 1")
    elif layer.kind == "fc":
        if layer.weight.ndim != 2 or layer.weight.shape[1] != math.prod(layer.in_shape):
            raise ValueError(f"fc weight {layer.weight.shape} does not match input {layer.in_shape}")
    else:
        raise ValueError(f"unknown layer kind {layer.kind!r}")
    if np.shape(layer.bias) != (layer.weight.shape[0],):
        raise ValueError("bias needs one entry per output channel")


def _out_shape(layer) -> tuple[int, ...]:
    if layer.kind == "conv":
        _, h, w = layer.in_shape
        return (layer.weight.shape[0], conv_out_size(h, layer.stride), conv_out_size(w, layer.stride))
    return (layer.weight.shape[0],)


@dataclass
class Network:
    layers: list
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if not self.layers:
            raise ValueError("network has no layers")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if tuple(layer.in_shape) != shape:
                raise ValueError(f"layer {i} expects {layer.in_shape}, previous layer gives {shape}")
            shape = layer.out_shape
        if self.layers[-1].kind != "fc":
            raise ValueError("last layer must be fully connected")
        kinds = {type(layer) for layer in self.layers}
        if len(kinds) != 1:
            raise ValueError("cannot mix float and quantized layers")

    @property
    def quantized(self) -> bool:
        return isinstance(self.layers[0], QuantLayer)

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_shape[0]

    def neuron_counts(self) -> list[int]:
        return [math.prod(layer.out_shape) for layer in self.layers]


# -- spike planes ----------------------------------------------------------


@dataclass(frozen=True)
class SpikePlane:
    """Sparse activity over a layer: sorted unique flat indices, optional payloads."""

    shape: tuple[int, ...]
    index: np.ndarray
    payload: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.index)

    @classmethod
    def from_dense(cls, dense: np.ndarray, graded: bool = True) -> "SpikePlane":
        flat = np.asarray(dense).ravel()
        idx = np.flatnonzero(flat)
        return cls(np.shape(dense), idx, flat[idx].astype(np.int64) if graded else None)

    def values(self) -> np.ndarray:
        if self.payload is None:
            return np.ones(len(self.index), dtype=np.int64)
        return self.payload

    def dense(self) -> np.ndarray:
        out = np.zeros(math.prod(self.shape), dtype=np.int64)
        out[self.index] = self.values()
        return out.reshape(self.shape)


@dataclass
class LayerState:
    v: np.ndarray

    @classmethod
    def zeros(cls, layer) -> "LayerState":
        return cls(np.zeros(math.prod(layer.out_shape), dtype=np.int32))


# -- fixed-point path ------------------------------------------------------


def _conv_scatter(layer: QuantLayer, idx: np.ndarray, pay: np.ndarray) -> tuple[np.ndarray, int]:
    cin, h, w = layer.in_shape
    cout, ho, wo = layer.out_shape
    s = layer.stride
    ci, rem = np.divmod(idx, h * w)
    yi, xi = np.divmod(rem, w)
    acc = np.zeros((ho * wo, cout), dtype=np.int64)
    weight = layer.weight.astype(np.int64)
    touched = 0
    for ky in range(3):
        ny = yi + 1 - ky  # output row * stride
        ok_y = (ny >= 0) & (ny % s == 0) & (ny < ho * s)
        for kx in range(3):
            nx = xi + 1 - kx
            ok = ok_y & (nx >= 0) & (nx % s == 0) & (nx < wo * s)
            n = int(np.count_nonzero(ok))
            if not n:
                continue
            pos = (ny[ok] // s) * wo + nx[ok] // s
            np.add.at(acc, pos, weight[:, ci[ok], ky, kx].T * pay[ok, None])
            touched += n
    return acc.T.ravel(), touched * cout


def synaptic_current(layer: QuantLayer, plane: SpikePlane) -> tuple[np.ndarray, int]:
    """Integer input current per output neuron and the number of synaptic ops.

    Only the nonzero entries of ``plane`` are visited.
    """
    idx = np.asarray(plane.index, dtype=np.int64)
    pay = plane.values()
    if layer.kind == "conv":
        if len(idx) == 0:
            return np.zeros(layer.n_out, dtype=np.int64), 0
        return _conv_scatter(layer, idx, pay)
    x = layer.weight[:, idx].astype(np.int64) @ pay
    return x, len(idx) * layer.weight.shape[0]


def layer_step(layer: QuantLayer, state: LayerState, plane: SpikePlane,
               ops: LayerOps | None = None) -> tuple[SpikePlane, LayerState]:
    """One PLIF timestep: decay, integrate, saturate, fire, reset to zero."""
    if tuple(plane.shape) != tuple(layer.in_shape):
        raise ValueError(f"input shape {plane.shape} does not match layer input {layer.in_shape}")
    x, synops = synaptic_current(layer, plane)
    v = ((layer.alpha_q * state.v.astype(np.int64)) >> ALPHA_FRAC_BITS) + x + layer.bias_per_neuron()
    saturated = np.count_nonzero(np.abs(v) > V_MAX)
    v = np.clip(v, -V_MAX, V_MAX)
    fired = np.flatnonzero(v >= layer.threshold_q)
    v[fired] = 0
    if ops is not None:
        ops.synops += synops
        ops.neuron_updates += layer.n_out
        ops.spikes += len(fired)
        ops.saturations += int(saturated)
    return SpikePlane(layer.out_shape, fired), LayerState(v.astype(np.int32))


def _input_planes(frames, shape, binary_input: bool):
    c, h, w = shape
    if isinstance(frames, FrameSequence):
        ow, oh = frames.config.out_resolution
        if (2, oh, ow) != (c, h, w):
            raise ValueError(f"frames are {ow}x{oh}, network expects {w}x{h}")
        for f in frames:
            idx = f.flat_indices()
            yield SpikePlane(shape, idx, None if binary_input else f.count.astype(np.int64))
    else:
        arr = np.asarray(frames)
        if arr.shape[1:] != tuple(shape):
            raise ValueError(f"frames have shape {arr.shape[1:]}, network expects {shape}")
        for dense in arr:
            yield SpikePlane.from_dense(dense, graded=not binary_input)


def run_extractor(frames, net: Network, *, binary_input: bool = False,
                  ops: OpCounts | None = None) -> list[np.ndarray]:
    """Run one clip from reset; returns the final layer's spike indices per step.

    ``frames`` is a :class:`FrameSequence` or a dense ``(T, 2, H, W)`` array.
    Counts are fed as graded payloads unless ``binary_input``.
    """
    if not net.quantized:
        raise TypeError("run_extractor needs a quantized network")
    states = [LayerState.zeros(layer) for layer in net.layers]
    if ops is not None and not ops.layers:
        ops.layers = [LayerOps() for _ in net.layers]
    out = []
    for plane in _input_planes(frames, net.input_shape, binary_input):
        for i, layer in enumerate(net.layers):
            plane, states[i] = layer_step(layer, states[i], plane, ops.layers[i] if ops else None)
        out.append(plane.index)
        if ops is not None:
            ops.timesteps += 1
    return out


# -- float path --------------------------------------------------------------


def _conv3x3(x: np.ndarray, weight: np.ndarray, stride: int) -> np.ndarray:
    _, h, w = x.shape
    ho, wo = conv_out_size(h, stride), conv_out_size(w, stride)
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((weight.shape[0], ho, wo), dtype=np.result_type(x, weight, np.float64))
    for ky in range(3):
        for kx in range(3):
            patch = pad[:, ky:ky + stride * (ho - 1) + 1:stride, kx:kx + stride * (wo - 1) + 1:stride]
            out += np.tensordot(weight[:, :, ky, kx], patch, axes=(1, 0))
    return out


def float_current(layer: FloatLayer, s: np.ndarray) -> np.ndarray:
    """``BN(W * s) + b`` for a dense input shaped like ``layer.in_shape``."""
    s = np.asarray(s, dtype=np.float64)
    if layer.kind == "conv":
        z = _conv3x3(s, layer.weight, layer.stride)
    else:
        z = layer.weight @ s.ravel()
    expand = (slice(None),) + (None,) * (z.ndim - 1)
    if layer.bn is not None:
        bn = layer.bn
        z = bn.gamma[expand] * (z - bn.mean[expand]) / np.sqrt(bn.var[expand] + bn.eps) + bn.beta[expand]
    return z + layer.bias[expand]


def fuse_batchnorm(layer: FloatLayer) -> FloatLayer:
    """Fold batch-norm statistics into weights and bias."""
    bn = layer.bn
    if bn is None:
        raise ValueError("layer has no batch-norm parameters")
    denom = np.asarray(bn.var, dtype=np.float64) + bn.eps
    if np.any(denom <= 0):
        raise ValueError("batch-norm variance + eps must be positive")
    k = np.asarray(bn.gamma, dtype=np.float64) / np.sqrt(denom)
    w = layer.weight * k.reshape((-1,) + (1,) * (layer.weight.ndim - 1))
    b = bn.beta - bn.mean * k + layer.bias
    return replace(layer, weight=w, bias=b, bn=None)


def fuse_network(net: Network) -> Network:
    return Network([fuse_batchnorm(l) if l.bn is not None else l for l in net.layers], net.input_shape)


def float_forward(frames, net: Network, *, binary_input: bool = False,
                  ops: OpCounts | None = None) -> np.ndarray:
    """Per-clip feature spike counts of the float network (no saturation)."""
    if net.quantized:
        raise TypeError("float_forward needs a float network")
    v = [np.zeros(layer.out_shape) for layer in net.layers]
    rates = np.zeros(net.feature_dim)
    if ops is not None and not ops.layers:
        ops.layers = [LayerOps() for _ in net.layers]
    for plane in _input_planes(frames, net.input_shape, binary_input):
        s = plane.dense().astype(np.float64)
        for i, layer in enumerate(net.layers):
            v[i] = layer.alpha * v[i] + float_current(layer, s)
            fired = v[i] >= layer.threshold
            v[i] = np.where(fired, 0.0, v[i])
            s = fired.astype(np.float64)
            if ops is not None:
                ops.layers[i].spikes += int(fired.sum())
                ops.layers[i].neuron_updates += fired.size
        rates += s
        if ops is not None:
            ops.timesteps += 1
    return rates


# -- quantization ------------------------------------------------------------


def scale_exponent(max_abs: float, bits: int = 8) -> int:
    """Largest ``e`` with ``max_abs * 2**e <= 2**(bits-1) - 1`` (0 for an all-zero layer)."""
    if max_abs == 0:
        return 0
    qmax = (1 << (bits - 1)) - 1
    e = math.floor(math.log2(qmax / max_abs))
    while math.ldexp(max_abs, e) > qmax:
        e -= 1
    while math.ldexp(max_abs, e + 1) <= qmax:
        e += 1
    return e


def quantize_alpha(alpha: float) -> int:
    return int(np.clip(np.round(alpha * ALPHA_ONE), 0, ALPHA_ONE))


def quantize_layer(layer: FloatLayer, weight_bits: int = 8) -> QuantLayer:
    if layer.bn is not None:
        raise ValueError("fuse batch-norm before quantizing")
    e = scale_exponent(float(np.max(np.abs(layer.weight), initial=0.0)), weight_bits)
    scale = math.ldexp(1.0, e)
    w = np.round(layer.weight * scale).astype(np.int64)
    b = np.round(np.asarray(layer.bias) * scale).astype(np.int64)
    thr = max(1, int(np.round(layer.threshold * scale)))
    return QuantLayer(layer.kind, w, b, tuple(layer.in_shape), layer.stride,
                      quantize_alpha(layer.alpha), thr, e)


def quantize_network(net: Network, weight_bits: int = 8) -> Network:
    """Per-layer power-of-two scaling to ``weight_bits`` signed weights.

    Spikes between layers are unit-valued in both domains, so bias and
    threshold only carry the receiving layer's weight scale.
    """
    if net.quantized:
        raise TypeError("network is already quantized")
    return Network([quantize_layer(l, weight_bits) for l in net.layers], net.input_shape)


# -- synthetic extractor -----------------------------------------------------

DEFAULT_CHANNELS = (2, 16, 32, 32, 64, 64)
DEFAULT_STRIDES = (2, 2, 2, 2, 1)


def synthetic_network(seed: int = 0, *, input_hw: tuple[int, int] = (100, 100),
                      channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES, feature_dim: int = 256,
                      alpha: float = 0.5, threshold: float = 1.0, gain: float = 2.0,
                      batchnorm: bool = True) -> Network:
    """Random float extractor with the default geometry, standing in for trained weights.

    Weights are Gaussian with std ``gain / sqrt(fan_in)``; the batch-norm
    parameters are mild perturbations of identity so that fusion is exercised.
    """
    rng = np.random.default_rng(seed)
    h, w = input_hw
    shape = (channels[0], h, w)
    layers = []
    for cin, cout, stride in zip(channels[:-1], channels[1:], strides):
        weight = rng.normal(0.0, gain / math.sqrt(9 * cin), size=(cout, cin, 3, 3))
        layer = FloatLayer("conv", weight, np.zeros(cout), shape, stride, alpha, threshold,
                           _random_bn(rng, cout) if batchnorm else None)
        layers.append(layer)
        shape = layer.out_shape
    fan_in = math.prod(shape)
    weight = rng.normal(0.0, 4.0 * gain / math.sqrt(fan_in), size=(feature_dim, fan_in))
    layers.append(FloatLayer("fc", weight, np.zeros(feature_dim), shape, 1, alpha, threshold,
                             _random_bn(rng, feature_dim) if batchnorm else None))
    return Network(layers, (channels[0], h, w))


def calibrate_thresholds(net: Network, clips, target_rate: float = 0.05, *,
                         binary_input: bool = False, iters: int = 30,
                         snap_bits: int | None = 8) -> Network:
    """Set each float layer's threshold so it fires at ``target_rate`` on ``clips``.

    Layers are calibrated front to back; a layer's input current does not
    depend on its own threshold, so each bisection step only replays the
    membrane recursion. With ``snap_bits`` the threshold is moved onto the
    integer grid that :func:`quantize_layer` will use, so quantization does
    not shift it.
    """
    if net.quantized:
        raise TypeError("calibrate the float network, then quantize")
    rates = np.broadcast_to(np.asarray(target_rate, dtype=float), (len(net.layers),))
    inputs = [[p.dense().astype(np.float64) for p in _input_planes(c, net.input_shape, binary_input)]
              for c in clips]
    layers = []
    for layer, rate in zip(net.layers, rates):
        if snap_bits:
            layer = _snap_bias(layer, snap_bits)
        currents = [np.stack([float_current(layer, s) for s in clip]) for clip in inputs]

        def fire(thr, keep=False):
            total, trains = 0, []
            for cur in currents:
                v = np.zeros(cur.shape[1:])
                train = np.zeros(cur.shape, dtype=bool)
                for t, x in enumerate(cur):
                    v = layer.alpha * v + x
                    train[t] = v >= thr
                    v[train[t]] = 0.0
                total += int(train.sum())
                if keep:
                    trains.append(train.astype(np.float64))
            return total / sum(c.size for c in currents), trains

        lo, hi = 1e-6, max(float(np.abs(c).max()) for c in currents) * (1.0 + 1.0 / (1.0 - layer.alpha + 1e-9))
        hi = max(hi, 1e-3)
        for _ in range(iters):
            mid = math.sqrt(lo * hi)
            if fire(mid)[0] > rate:
                lo = mid
            else:
                hi = mid
        thr = hi
        if snap_bits:
            scale = _grid(layer, snap_bits)
            thr = max(1.0, round(hi * scale)) / scale
        layers.append(replace(layer, threshold=thr))
        inputs = [list(train) for train in fire(thr, keep=True)[1]]
    return Network(layers, net.input_shape)


def _grid(layer: FloatLayer, bits: int) -> float:
    fused = fuse_batchnorm(layer) if layer.bn is not None else layer
    return math.ldexp(1.0, scale_exponent(float(np.abs(fused.weight).max()), bits))


def _snap_bias(layer: FloatLayer, bits: int) -> FloatLayer:
    """Shift the (fused) bias onto the quantization grid, through beta if BN is present."""
    scale = _grid(layer, bits)
    fused_bias = fuse_batchnorm(layer).bias if layer.bn is not None else layer.bias
    delta = np.round(fused_bias * scale) / scale - fused_bias
    if layer.bn is None:
        return replace(layer, bias=layer.bias + delta)
    return replace(layer, bn=replace(layer.bn, beta=layer.bn.beta + delta))


def _random_bn(rng, n: int) -> BatchNorm:
    return BatchNorm(
        gamma=rng.uniform(0.8, 1.2, n),
        beta=rng.normal(0.0, 0.01, n),
        mean=rng.normal(0.0, 0.01, n),
        var=rng.uniform(0.8, 1.2, n),
        eps=1e-5,
    )
