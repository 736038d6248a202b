"""
Division-free L2 normalization
==============================

The inverse square root comes from a small table indexed by the mantissa
followed by Newton steps, all in integer arithmetic. This script measures how
the error shrinks with each step and checks the resulting unit norms.
"""

# %%
import numpy as np

from clane.aggnorm import NormConfig, inv_sqrt_fixed, inv_sqrt_table, normalize_batch

rng = np.random.default_rng(0)
u = np.concatenate([np.arange(1, 1 << 16), rng.integers(1, 1 << 62, 100_000, dtype=np.int64)])
exact = 1 / np.sqrt(u.astype(np.float64))

# %%
for steps in (0, 1, 2):
    mant, shift = inv_sqrt_fixed(u, NormConfig(newton_steps=steps))
    err = np.abs(mant * np.exp2(-shift.astype(float)) / exact - 1)
    print(f"newton steps {steps}: max relative error {err.max():.2e} (log2 {np.log2(err.max()):.1f})")

# %%
# table size against the zero-step error
for bits in (4, 6, 8, 10, 12):
    cfg = NormConfig(lut_bits=bits, newton_steps=0)
    mant, shift = inv_sqrt_fixed(u, cfg)
    err = np.abs(mant * np.exp2(-shift.astype(float)) / exact - 1).max()
    print(f"{len(inv_sqrt_table(cfg)):>5} entries: {err:.2e}")

# %%
# spike-count vectors from a 256-d extractor, normalized to Q1.15
x = rng.poisson(rng.gamma(0.5, 4, 256), size=(1000, 256))
x[~x.any(axis=1), 0] = 1
out = normalize_batch(x) * 2.0**-15
norms = np.linalg.norm(out, axis=1)
print(f"norms in [{norms.min():.5f}, {norms.max():.5f}]")
