"""
Class-incremental learning on synthetic features
================================================

Twelve classes arrive one at a time, ten shots each, in a single pass. After
every class the learner is tested on all classes seen so far. Fine-tuning a
linear head forgets; prototype and statistics-based learners do not.
"""

# %%
import numpy as np

from clane.harness.learners import LEARNERS, make_learner
from clane.harness.protocol import ProtocolConfig, run_incremental
from clane.harness.synth import SynthSpec, synth_features

spec = SynthSpec(separation=0.5, noise=0.05, nuisance_rank=8, nuisance_scale=0.2)
feats = synth_features(spec)
print(f"{len(feats)} classes, {spec.samples_per_class} samples each, D={spec.dim}")

# %%
curves = {}
for name in LEARNERS:
    runs = [run_incremental(ProtocolConfig(shots=10, seed=s),
                            make_learner(name, spec.dim, seed=s, num_classes=spec.num_classes), feats, name)
            for s in range(5)]
    curves[name] = np.mean([r.cumulative for r in runs], axis=0)
    forget = np.mean([max(r.forgetting.values()) for r in runs])
    print(f"{name:<14} final {curves[name][-1]:.3f}  max forgetting {forget:.3f}")

# %%
# cumulative accuracy after each class
print(f"{'step':<14}" + " ".join(f"{k + 1:>5}" for k in range(spec.num_classes)))
for name, c in curves.items():
    print(f"{name:<14}" + " ".join(f"{v:5.2f}" for v in c))

# %%
# the prototype learner grows one prototype per novel or misclassified sample
learner = make_learner("clp-loihi", spec.dim)
run_incremental(ProtocolConfig(shots=10), learner, feats)
print(f"clp-loihi prototypes: {len(learner.store)} for {spec.num_classes} classes")
