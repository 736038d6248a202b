"""INI run configuration with typed defaults and ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from ..aggnorm import NormConfig
from ..events import BinningConfig
from .protocol import ProtocolConfig
from .synth import SynthSpec

DEFAULTS: dict[str, dict[str, object]] = {
    "ingest": {
        "crop_x": 340, "crop_y": 100, "crop_w": 600, "crop_h": 600,
        "out_w": 100, "out_h": 100, "window_us": 40_000, "count_clip": 255,
    },
    "extractor": {"seed": 0, "binary_input": False, "weight_bits": 8, "path": "fixed"},
    "norm": {"f_out": 15, "lut_bits": 8, "newton_steps": 1},
    "learner": {
        "novelty_threshold": 0.3, "capacity": 512, "clp_lr": 0.05, "lr": 0.01, "finetune_lr": 0.5,
        "replay_per_class": 64, "replay_batch": 8, "slda_shrinkage": "",
    },
    "protocol": {
        "shots": 10, "seed": 0, "runs": 5, "test_fraction": 0.2, "split_seed": 0,
        "order": "", "class_set": "all", "holdout_rule": "zero",
    },
    "synth": {
        "num_classes": 12, "dim": 256, "samples_per_class": 50, "separation": 0.5, "noise": 0.05,
        "nuisance_rank": 8, "nuisance_scale": 0.2, "seed": 0, "clips_per_class": 0,
        "clip_us": 400_000, "step_us": 2_000, "bar_length": 20, "speed": 0.5, "noise_rate_hz": 5000.0,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, bool):
            v = raw.strip().lower()
            if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return v in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def binning(self) -> BinningConfig:
        s = self["ingest"]
        try:
            return BinningConfig((s["crop_x"], s["crop_y"]), (s["crop_w"], s["crop_h"]), s["window_us"],
                                 (s["out_w"], s["out_h"]), s["count_clip"])
        except ValueError as e:
            raise ConfigError(f"[ingest] {e}") from None

    def norm(self) -> NormConfig:
        try:
            return NormConfig(**self["norm"])
        except ValueError as e:
            raise ConfigError(f"[norm] {e}") from None

    def synth(self) -> SynthSpec:
        try:
            return SynthSpec(**self["synth"])
        except ValueError as e:
            raise ConfigError(f"[synth] {e}") from None

    def protocol(self, seed: int | None = None) -> ProtocolConfig:
        s = self["protocol"]
        order = tuple(int(c) for c in s["order"].split(",")) if s["order"] else None
        shots = None if s["shots"] <= 0 else s["shots"]
        try:
            return ProtocolConfig(shots, order, s["seed"] if seed is None else seed,
                                  s["test_fraction"], s["split_seed"])
        except ValueError as e:
            raise ConfigError(f"[protocol] {e}") from None

    def learner_kwargs(self) -> dict:
        s = dict(self["learner"])
        s["slda_shrinkage"] = float(s["slda_shrinkage"]) if s["slda_shrinkage"] else None
        return s

    def to_ini(self) -> str:
        lines = []
        for section in DEFAULTS:
            lines.append(f"[{section}]")
            for k in DEFAULTS[section]:
                v = self.values[section][k]
                lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
            lines.append("")
        return "\n".join(lines)


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then ``path`` (if given), then ``section.key=value`` overrides.

    Unknown sections or keys are errors so typos never go unnoticed.
    """
    values = {s: dict(d) for s, d in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"{path}: unknown key [{section}] {key}")
                values[section][key] = _coerce(section, key, raw)
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {name.strip()!r}")
        values[section][key] = _coerce(section, key, raw)
    return RunConfig(values)
