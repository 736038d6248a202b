"""Random test-case generators shared by unit and acceptance tests."""

import numpy as np

from clane.snn import BatchNorm, FloatLayer, LayerState, QuantLayer, SpikePlane


def random_quant_layer(rng, *, kind=None, big=False):
    kind = kind or rng.choice(["conv", "conv", "fc"])
    hi = 127 if big else 40
    if kind == "conv":
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        weight = rng.integers(-128, hi + 1, (cout, cin, 3, 3))
        in_shape = (cin, h, w)
        stride = int(rng.integers(1, 3))
    else:
        din, dout = int(rng.integers(1, 40)), int(rng.integers(1, 12))
        weight = rng.integers(-128, hi + 1, (dout, din))
        in_shape = (din,)
        stride = 1
    bias = rng.integers(-50, 51, weight.shape[0])
    return QuantLayer(kind, weight, bias, in_shape, stride,
                      alpha_q=int(rng.integers(0, 4097)), threshold_q=int(rng.integers(1, 400)))


def random_state(rng, layer, *, big=False):
    lim = (1 << 23) - 1 if big else 500
    return LayerState(rng.integers(-lim, lim + 1, layer.n_out).astype(np.int32))


def random_plane(rng, layer, *, graded=True, density=None, big=False):
    density = rng.uniform(0, 0.6) if density is None else density
    shape = tuple(layer.in_shape)
    mask = rng.random(shape) < density
    if graded:
        hi = 200_000 if big else 10
        dense = np.where(mask, rng.integers(1, hi, shape), 0)
        return SpikePlane.from_dense(dense, graded=True)
    return SpikePlane.from_dense(mask.astype(np.int64), graded=False)


def random_float_layer(rng, kind="conv"):
    if kind == "conv":
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        shape = (cin, int(rng.integers(2, 10)), int(rng.integers(2, 10)))
        weight = rng.normal(size=(cout, cin, 3, 3))
        stride = int(rng.integers(1, 3))
    else:
        cout = int(rng.integers(1, 10))
        shape = (int(rng.integers(1, 30)),)
        weight = rng.normal(size=(cout, shape[0]))
        stride = 1
    bn = BatchNorm(rng.uniform(0.5, 2, cout), rng.normal(size=cout), rng.normal(size=cout),
                   rng.uniform(0.1, 3, cout), 1e-5)
    return FloatLayer(kind, weight, rng.normal(size=cout), shape, stride, 0.5, 1.0, bn)
