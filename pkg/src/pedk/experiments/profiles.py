"""Run profiles: every knob of a reproduction run in one serializable object."""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from pedk.data.synth import FULL_SCALE_SYNTH, SynthConfig
from pedk.errors import ConfigError
from pedk.experiments.training import TrainConfig
from pedk.patching import WindowSpec

REFERENCE_BEST_ARCHS = {
    "single": "4x4",
    "barrel": "4x4",
    "magazine": "4x3",
    "receiver": "5x5",
    "stock": "5x5",
}


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    window_ratio: float = 0.5
    step_ratio: float = 0.125
    window_mode: str = "min_side"
    patch_size: int = None
    stat_mode: str = "max"
    fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    vote_threshold: float = 0.5
    workers: int = 1

    @property
    def window(self):
        return WindowSpec(self.window_ratio, self.step_ratio, self.window_mode, self.patch_size)

    @property
    def input_side(self):
        return self.synth.input_side

    def to_dict(self):
        d = asdict(self)
        d.pop("workers")  # does not affect results
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown run config field")
        synth = SynthConfig.from_dict(data.pop("synth", {}))
        tdata = data.pop("train", {})
        tknown = {f.name for f in fields(TrainConfig)}
        for key in tdata:
            if key not in tknown:
                raise ConfigError(f"train.{key}", "unknown field")
        if "fractions" in data:
            data["fractions"] = tuple(data["fractions"])
        return cls(synth=synth, train=TrainConfig(**tdata), **data)


def profile(name, seed=1, **overrides):
    """Desk scale (minutes on one CPU) or full scale (200 px inputs, 8000 training samples per class)."""
    if name == "desk":
        cfg = RunConfig(profile="desk", seed=seed, synth=replace(SynthConfig(), seed=seed))
    elif name == "paper":
        cfg = RunConfig(profile="paper", seed=seed, synth=replace(FULL_SCALE_SYNTH, seed=seed))
    else:
        raise ConfigError("profile", f"must be 'desk' or 'paper', got {name!r}")
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(key, "unknown run config field")
        setattr(cfg, key, value)
    return cfg


def load_run_config(path):
    from pathlib import Path

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"run config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)
