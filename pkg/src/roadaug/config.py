"""Run configuration: one JSON document, strictly parsed into frozen dataclasses."""
from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field

from .blend import DEFAULT_PRESETS, make_presets
from .errors import ContractError, InputError
from .ganlab import GanConfig
from .pipeline import SelectionPolicy
from .similarity import SsimParams
from .texturelab import TextureSynthConfig, make_bank


@dataclass(frozen=True)
class SplitConfig:
    fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class BankConfig:
    channels: tuple = (16, 32, 32)
    kernel_size: int = 5
    stride: int = 2
    seed: int = 0

    def build(self):
        return make_bank(self.seed, tuple(int(c) for c in self.channels), self.kernel_size, self.stride)


@dataclass(frozen=True)
class PresetEntry:
    label: str
    alpha: float


@dataclass(frozen=True)
class GalleryConfig:
    count: int = 64
    seed: int = 0
    dir: str | None = None


@dataclass(frozen=True)
class BlendConfig:
    tol: float = 1e-8
    mixed_gradients: bool = False


@dataclass(frozen=True)
class RunConfig:
    dataset_root: str = "data"
    target_class: str = "D40"
    roi_subset: str = "all"
    out: str = "out"
    seed: int = 0
    jobs: int = 1
    augment_fraction: float = 1.0
    split: SplitConfig = SplitConfig()
    gan: GanConfig = GanConfig()
    texture: TextureSynthConfig = TextureSynthConfig()
    bank: BankConfig = BankConfig()
    ssim: SsimParams = SsimParams()
    presets: tuple = tuple(PresetEntry(lab, a) for lab, a in DEFAULT_PRESETS)
    policy: SelectionPolicy = SelectionPolicy()
    gallery: GalleryConfig = GalleryConfig()
    blend: BlendConfig = BlendConfig()
    metrics: str | None = None
    baseline: str = "baseline"

    def __post_init__(self):
        if self.roi_subset not in ("train", "validation", "all"):
            raise ContractError(f"roi_subset must be train, validation or all, got {self.roi_subset!r}")
        if self.jobs < 1:
            raise ContractError("jobs must be >= 1")
        if not 0.0 < self.augment_fraction <= 1.0:
            raise ContractError("augment_fraction must be in (0, 1]")
        presets = self.severity_presets()
        if self.policy.mode == "single_severity" and self.policy.label not in [p.label for p in presets]:
            raise ContractError(f"policy.label {self.policy.label!r} is not a preset label")

    def severity_presets(self):
        return make_presets([(p.label, p.alpha) for p in self.presets])

    @property
    def gallery_dir(self):
        return self.gallery.dir or os.path.join(self.out, "gallery")

    def as_dict(self):
        return dataclasses.asdict(self)


# element types for tuple-valued fields
_ELEMENTS = {(RunConfig, "presets"): PresetEntry, (BankConfig, "channels"): int,
             (GanConfig, "hidden"): int, (TextureSynthConfig, "layer_weights"): float}


def _check(value, tp, path, owner=None, name=None):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in typing.get_args(tp):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
        return _check(value, tp, path, owner, name)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is tuple:
        if not isinstance(value, list):
            raise InputError(f"{path}: expected a list, got {type(value).__name__}")
        elem = _ELEMENTS.get((owner, name), object)
        return tuple(_check(v, elem, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise InputError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InputError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise InputError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise InputError(f"{path or '<root>'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in names:
            raise InputError(f"unknown config key: {path + '.' if path else ''}{key}")
    for f in dataclasses.fields(cls):
        missing = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        if f.init and missing and f.name not in data:
            raise InputError(f"missing config key: {path + '.' if path else ''}{f.name}")
    kwargs = {}
    for key, value in data.items():
        kpath = f"{path}.{key}" if path else key
        kwargs[key] = _check(value, hints[key], kpath, cls, key)
    try:
        return cls(**kwargs)
    except (ContractError, ValueError) as exc:
        raise InputError(f"{path or '<root>'}: {exc}") from None


def config_from_dict(data):
    return _build(RunConfig, data, "")


def parse_config(path):
    """Load ``path`` into a :class:`RunConfig`; omitted keys take their defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data)


def with_overrides(cfg, out=None, seed=None, jobs=None):
    """Apply command-line flags; they win over the file."""
    changes = {k: v for k, v in (("out", out), ("seed", seed), ("jobs", jobs)) if v is not None}
    try:
        return dataclasses.replace(cfg, **changes)
    except ContractError as exc:
        raise InputError(str(exc)) from None


def echo_config(cfg, out_root):
    """Write the effective configuration next to the outputs."""
    os.makedirs(out_root, exist_ok=True)
    path = os.path.join(out_root, "effective_config.json")
    with open(path, "w") as fh:
        json.dump(cfg.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
