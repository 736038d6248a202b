"""Operation counters used as the efficiency proxy."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class LayerOps:
    synops: int = 0
    neuron_updates: int = 0
    spikes: int = 0
    saturations: int = 0

    def add(self, other: "LayerOps") -> None:
        self.synops += other.synops
        self.neuron_updates += other.neuron_updates
        self.spikes += other.spikes
        self.saturations += other.saturations


@dataclass
class OpCounts:
    """Per-layer SNN counters plus the post-extractor stages.

    ``stages`` holds plain integer counts for aggregation (adds),
    normalization (multiplies + one inverse square root) and prototype
    matching (multiply-accumulates).
    """

    layers: list[LayerOps] = field(default_factory=list)
    timesteps: int = 0
    stages: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_layers(cls, n: int) -> "OpCounts":
        return cls([LayerOps() for _ in range(n)])

    def _total(self, name: str) -> int:
        return sum(getattr(layer, name) for layer in self.layers)

    @property
    def synops(self) -> int:
        return self._total("synops")

    @property
    def neuron_updates(self) -> int:
        return self._total("neuron_updates")

    @property
    def spikes(self) -> int:
        return self._total("spikes")

    @property
    def saturations(self) -> int:
        return self._total("saturations")

    def add_stage(self, name: str, n: int) -> None:
        self.stages[name] = self.stages.get(name, 0) + int(n)

    def merge(self, other: "OpCounts") -> None:
        if not self.layers:
            self.layers = [LayerOps() for _ in other.layers]
        if len(self.layers) != len(other.layers):
            raise ValueError("cannot merge op counts of different depth")
        for mine, theirs in zip(self.layers, other.layers):
            mine.add(theirs)
        self.timesteps += other.timesteps
        for k, v in other.stages.items():
            self.add_stage(k, v)

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "layers": [asdict(layer) for layer in self.layers],
            "stages": dict(sorted(self.stages.items())),
            "totals": {
                "synops": self.synops,
                "neuron_updates": self.neuron_updates,
                "spikes": self.spikes,
                "saturations": self.saturations,
            },
        }
