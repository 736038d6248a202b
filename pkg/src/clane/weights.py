"""``SNNW`` weight files (float and quantized variants) and the float->int converter.

Layout, all little-endian::

    header  magic "SNNW" | version u16 | variant u8 (0 float, 1 quantized) | 0 u8
            | layer count u16 | input shape 3 x u16 (C, H, W)
    layer   kind u8 (0 conv, 1 fc) | stride u8 | weight ndim u8 | dims ndim x u32
      quantized: scale_exp i8 | alpha_q u16 | threshold_q i32 | bias i32[cout] | weight i8[...]
      float:     alpha f32 | threshold f32 | has_bn u8
                 [eps f32 | gamma f32[cout] | beta | mean | var]  (only if has_bn)
                 bias f32[cout] | weight f32[...]

Each layer's input shape is implied by the previous layer's output.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .snn import BatchNorm, FloatLayer, Network, QuantLayer, fuse_network, quantize_network

MAGIC = b"SNNW"
VERSION = 1
_HEADER = struct.Struct("<4sHBBH3H")
_KINDS = {"conv": 0, "fc": 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


class WeightFileError(ValueError):
    pass


def dumps(net: Network) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, int(net.quantized), 0, len(net.layers), *net.input_shape)]
    for layer in net.layers:
        w = layer.weight
        parts.append(struct.pack("<BBB", _KINDS[layer.kind], layer.stride, w.ndim))
        parts.append(struct.pack(f"<{w.ndim}I", *w.shape))
        if net.quantized:
            if np.any(np.abs(layer.bias) > 2**31 - 1):
                raise WeightFileError("bias does not fit 32 bits")
            parts.append(struct.pack("<bHi", layer.scale_exp, layer.alpha_q, layer.threshold_q))
            parts.append(layer.bias.astype("<i4").tobytes())
            parts.append(w.astype("<i1").tobytes())
        else:
            parts.append(struct.pack("<ffB", layer.alpha, layer.threshold, layer.bn is not None))
            if layer.bn is not None:
                bn = layer.bn
                parts.append(struct.pack("<f", bn.eps))
                for arr in (bn.gamma, bn.beta, bn.mean, bn.var):
                    parts.append(np.asarray(arr, dtype="<f4").tobytes())
            parts.append(np.asarray(layer.bias, dtype="<f4").tobytes())
            parts.append(np.asarray(w, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise WeightFileError(f"truncated weight file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str, shape) -> np.ndarray:
        n = math.prod(shape)
        size = np.dtype(dtype).itemsize * n
        if self.pos + size > len(self.data):
            raise WeightFileError(f"truncated weight file at byte {self.pos}")
        out = np.frombuffer(self.data, dtype=dtype, count=n, offset=self.pos).reshape(shape)
        self.pos += size
        return out


def loads(data: bytes) -> Network:
    r = _Reader(data)
    magic, version, variant, _, n_layers, c, h, w = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    shape = (c, h, w)
    layers = []
    for _ in range(n_layers):
        kind, stride, ndim = r.unpack("<BBB")
        if kind not in _KIND_NAMES:
            raise WeightFileError(f"unknown layer kind {kind}")
        dims = r.unpack(f"<{ndim}I")
        cout = dims[0]
        if variant == 1:
            e, alpha_q, thr = r.unpack("<bHi")
            bias = r.array("<i4", (cout,)).astype(np.int64)
            weight = r.array("<i1", dims).astype(np.int8)
            layer = QuantLayer(_KIND_NAMES[kind], weight, bias, shape, stride, alpha_q, thr, e)
        else:
            alpha, thr, has_bn = r.unpack("<ffB")
            bn = None
            if has_bn:
                (eps,) = r.unpack("<f")
                gamma, beta, mean, var = (r.array("<f4", (cout,)).astype(np.float64) for _ in range(4))
                bn = BatchNorm(gamma, beta, mean, var, float(eps))
            bias = r.array("<f4", (cout,)).astype(np.float64)
            weight = r.array("<f4", dims).astype(np.float64)
            layer = FloatLayer(_KIND_NAMES[kind], weight, bias, shape, stride, float(alpha), float(thr), bn)
        layers.append(layer)
        shape = layer.out_shape
    if r.pos != len(data):
        raise WeightFileError(f"{len(data) - r.pos} trailing bytes after last layer")
    return Network(layers, (c, h, w))


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return loads(fh.read())


def convert_weights(src, dst, weight_bits: int = 8) -> Network:
    """Read a float weight file, fuse batch-norm, quantize and write the result."""
    net = load_network(src)
    if net.quantized:
        raise WeightFileError(f"{src} already holds a quantized network")
    qnet = quantize_network(fuse_network(net), weight_bits)
    save_network(qnet, dst)
    return qnet
