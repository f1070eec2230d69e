"""Versioned JSON run configuration with defaults, validation and profiles.

A config file looks like::

    {"format": "csolab-config", "version": 1, "profile": "desk", "seed": 0,
     "scene": {"regime": "hard"}, "arch": {"base_width": 16},
     "experiment": {"d": 100, "epochs": 100}, "probe": {"reference_class": "shirt"}}

Every key is optional.  Unknown keys are rejected.  ``scene`` values override
the preset of the chosen regime; ``arch.base_width`` defaults to the profile's
width.  :func:`resolve` layers command-line overrides on top of the file, so
precedence is flag > file > default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .experiment import ExperimentConfig
from .probe import ProbeConfig
from .scene import REGIMES, CsoConfig
from .unet import PROFILES, UNetArch

CONFIG_FORMAT = "csolab-config"
CONFIG_VERSION = 1
RESOLVED_NAME = "resolved_config.json"

# D presets offered by each profile
PROFILE_D = {"desk": (100, 1000), "paper": (100, 1000, 10000, 50000)}

_TOP_KEYS = {"format", "version", "profile", "seed", "scene", "arch", "experiment", "probe"}
_SCENE_KEYS = {f.name for f in dataclasses.fields(CsoConfig)}
_ARCH_KEYS = {"base_width", "levels", "convs_per_level", "kernel"}
_EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"scene", "base_width"}
_PROBE_KEYS = {f.name for f in dataclasses.fields(ProbeConfig)} - {"regime"}


@dataclass
class RunConfigFile:
    profile: str = "desk"
    seed: int = 0
    scene: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfigFile:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, _TOP_KEYS, "config")
        if d.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ConfigError(f"config format must be {CONFIG_FORMAT!r}")
        if d.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')!r}")
        out = cls(profile=d.get("profile", "desk"), seed=d.get("seed", 0))
        for name, allowed in (("scene", _SCENE_KEYS), ("arch", _ARCH_KEYS),
                              ("experiment", _EXPERIMENT_KEYS), ("probe", _PROBE_KEYS)):
            section = d.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            _reject_unknown(section, allowed, name)
            setattr(out, name, dict(section))
        return out

    @classmethod
    def load(cls, path) -> RunConfigFile:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(raw)

    def override(self, section: str, key: str, value) -> None:
        """Apply a command-line value; ``None`` means "flag not given"."""
        if value is None:
            return
        if section == "top":
            setattr(self, key, value)
        else:
            getattr(self, section)[key] = value


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


@dataclass(frozen=True)
class ResolvedConfig:
    profile: str
    seed: int
    scene: CsoConfig
    arch: UNetArch
    experiment: ExperimentConfig
    probe: ProbeConfig

    def to_dict(self) -> dict:
        return {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, "profile": self.profile,
                "seed": self.seed, "scene": self.scene.to_dict(),
                "arch": {k: v for k, v in self.arch.to_dict().items()
                         if k in _ARCH_KEYS},
                "experiment": {k: v for k, v in self.experiment.to_dict().items()
                               if k in _EXPERIMENT_KEYS},
                "probe": {k: v for k, v in self.probe.to_dict().items() if k in _PROBE_KEYS}}

    def write(self, directory) -> Path:
        path = Path(directory) / RESOLVED_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


def resolve(cfg: RunConfigFile) -> ResolvedConfig:
    """Fill defaults and build the typed configs; invalid values raise ``ConfigError``."""
    if cfg.profile not in PROFILES:
        raise ConfigError(f"unknown profile {cfg.profile!r}; expected one of {sorted(PROFILES)}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg.seed!r}")
    scene_d = dict(cfg.scene)
    regime = scene_d.pop("regime", "easy")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {list(REGIMES)}")
    try:
        if "target_classes" in scene_d:
            scene_d["target_classes"] = tuple(scene_d["target_classes"])
        scene = CsoConfig.for_regime(regime, **scene_d)
        _check_scene(scene)
        arch_d = {"base_width": PROFILES[cfg.profile], **cfg.arch}
        arch = UNetArch(out_channels=scene.n_classes, **arch_d)
        _check_arch(arch)
        exp_d = dict(cfg.experiment)
        for k in ("init_seeds", "split_seeds"):
            if k in exp_d:
                exp_d[k] = tuple(int(s) for s in exp_d[k])
        experiment = ExperimentConfig(scene=scene, base_width=arch.base_width, **exp_d)
        _check_experiment(experiment)
        probe = ProbeConfig(regime=scene, **{"seed": cfg.seed, **cfg.probe})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return ResolvedConfig(cfg.profile, cfg.seed, scene, arch, experiment, probe)


def _check_scene(scene: CsoConfig) -> None:
    if scene.image_size <= 0 or scene.image_size % 8:
        raise ConfigError(f"image_size must be a positive multiple of 8, got {scene.image_size}")
    for k in ("translation_bound", "jitter_bound", "noise_count"):
        if getattr(scene, k) < 0:
            raise ConfigError(f"{k} must be >= 0")
    scene.noise_bounds()


def _check_arch(arch: UNetArch) -> None:
    if arch.base_width < 1:
        raise ConfigError("base_width must be >= 1")
    default = UNetArch(base_width=arch.base_width, out_channels=arch.out_channels)
    if (arch.levels, arch.convs_per_level, arch.kernel) != (default.levels, default.convs_per_level,
                                                           default.kernel):
        raise ConfigError("only base_width is configurable for training; levels, convs_per_level "
                          "and kernel are fixed")


def _check_experiment(e: ExperimentConfig) -> None:
    if e.d < 1 or not 0 < e.train_fraction <= 1:
        raise ConfigError("d must be >= 1 and train_fraction in (0, 1]")
    if e.n_train < 1:
        raise ConfigError(f"D={e.d} with train_fraction {e.train_fraction} leaves no training images")
    if e.epochs < 1 or e.batch_size < 1 or e.test_size < 1:
        raise ConfigError("epochs, batch_size and test_size must be >= 1")
    if not e.learning_rate > 0:
        raise ConfigError("learning_rate must be > 0")
    if e.sprite_source not in ("auto", "synthetic", "idx"):
        raise ConfigError(f"unknown sprite_source {e.sprite_source!r}")
