"""Training configuration: every trick toggle and schedule knob.

Configs load from YAML with strict key checking; unspecified keys fall back
to the published defaults. Dotted-path overrides (`tricks.blur=false`) back
the CLI's `--set` flag; the pseudo-key `tricks.all` flips every toggle.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .errors import ConfigError
from .schedule import Timeline


@dataclass
class Toggles:
    """The eight independent tricks (ablation axes).

    blur (BL), downsample (DS), significance (SG), gaussian_mask (GM),
    sh_mask (SHM), accelerated (AT), late_densify (DE), progressive_scale (SC).
    """

    blur: bool = True
    downsample: bool = True
    significance: bool = True
    gaussian_mask: bool = True
    sh_mask: bool = True
    accelerated: bool = True
    late_densify: bool = True
    progressive_scale: bool = True


@dataclass
class BlurConfig:
    kernel_size: int = 9
    sigma: float = 2.4
    decay: float = 0.0        # 0 means: derive so sigma hits min_sigma at progressive_end
    min_sigma: float = 0.3


@dataclass
class ResolutionConfig:
    start_factor: float = 0.125   # 8x downsampled start
    mode: str = "logarithmic"     # or "linear"


@dataclass
class ScaleConfig:
    """Progressive Gaussian-scale trick (low-pass schedule + SfM seeding)."""

    seed_keep_fraction: float = 0.2
    lowpass_floor: float = 0.3
    split_area_factor: float = 4.0   # extra-split when screen area > factor * 9 pi s


@dataclass
class SignificanceConfig:
    first_rate: float = 0.6
    decay: float = 0.7
    volume_power: float = 0.5
    count_resolution: str = "current"  # or "full"


@dataclass
class MaskConfig:
    lambda_m: float = 0.05
    lambda_sh: float = 0.05
    eps_m: float = 0.05
    eps_sh: float = 0.1
    init_logit: float = 2.0


@dataclass
class OptimConfig:
    position_lr_init: float = 1.6e-4   # scaled by scene extent
    position_lr_final: float = 1.6e-6
    feature_lr: float = 2.5e-3
    feature_rest_div: float = 20.0
    opacity_lr: float = 0.05
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    mask_lr: float = 0.5
    sh_mask_lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15


@dataclass
class DensifyConfig:
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    split_scale_div: float = 1.6


@dataclass
class TrainConfig:
    lambda_ssim: float = 0.2
    sh_degree: int = 3
    tile_size: int = 16
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    holdout_every: int = 0     # 0 disables the held-out split; 8 matches the protocol
    threads: int = 1
    tricks: Toggles = field(default_factory=Toggles)
    timeline: Timeline = field(default_factory=Timeline)
    blur: BlurConfig = field(default_factory=BlurConfig)
    resolution: ResolutionConfig = field(default_factory=ResolutionConfig)
    scale: ScaleConfig = field(default_factory=ScaleConfig)
    significance: SignificanceConfig = field(default_factory=SignificanceConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    densify: DensifyConfig = field(default_factory=DensifyConfig)

    def scaled_to(self, total_iters: int) -> "TrainConfig":
        """Copy with the timeline proportionally rescaled to `total_iters`."""
        cfg = config_from_dict(config_to_dict(self))
        cfg.timeline = self.timeline.scaled(total_iters)
        return cfg


def config_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def _coerce(value, target_type, path: str):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        try:
            as_float = float(value)
        except ValueError:
            raise ConfigError(f"{path}: expected an integer, got {value!r}") from None
        if as_float != int(as_float):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(as_float)
    if target_type is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if target_type is tuple:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v != ""]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        out = []
        for v in value:
            x = float(v)
            out.append(int(x) if x == int(x) and not isinstance(v, float) else x)
        return tuple(out)
    raise ConfigError(f"{path}: unsupported config type {target_type}")


def _fill_dataclass(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {data!r}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        f = known[key]
        sub_path = f"{path}{key}"
        if is_dataclass(f.type) or is_dataclass(_resolve_type(cls, f.name)):
            kwargs[key] = _fill_dataclass(_resolve_type(cls, f.name), value, sub_path + ".")
        else:
            kwargs[key] = _coerce(value, _resolve_type(cls, f.name), sub_path)
    obj = cls(**kwargs)
    return obj


def _resolve_type(cls, field_name: str):
    # dataclass fields carry string annotations under `from __future__ import
    # annotations`; resolve against known leaf types
    for f in fields(cls):
        if f.name != field_name:
            continue
        t = f.type
        if not isinstance(t, str):
            return t
        mapping = {
            "bool": bool,
            "int": int,
            "float": float,
            "str": str,
            "tuple": tuple,
            "Toggles": Toggles,
            "Timeline": Timeline,
            "BlurConfig": BlurConfig,
            "ResolutionConfig": ResolutionConfig,
            "ScaleConfig": ScaleConfig,
            "SignificanceConfig": SignificanceConfig,
            "MaskConfig": MaskConfig,
            "OptimConfig": OptimConfig,
            "DensifyConfig": DensifyConfig,
        }
        if t in mapping:
            return mapping[t]
        raise ConfigError(f"unsupported annotation {t!r} on {field_name}")
    raise ConfigError(f"no field {field_name!r} on {cls.__name__}")


def config_from_dict(data: dict) -> "TrainConfig":
    cfg = _fill_dataclass(TrainConfig, data or {})
    validate_config(cfg)
    return cfg


def load_config(path) -> "TrainConfig":
    """Parse a YAML config file; missing keys take the defaults."""
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    if data is None:
        data = {}
    return config_from_dict(data)


def apply_overrides(cfg: "TrainConfig", overrides: list[str]) -> "TrainConfig":
    """Apply dotted `key=value` overrides, returning a new validated config."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        parts = key.strip().split(".")
        if parts == ["tricks", "all"]:
            flag = _coerce(value.strip(), bool, "tricks.all")
            for f in fields(Toggles):
                data["tricks"][f.name] = flag
            continue
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value.strip()
    return config_from_dict(data)


def validate_config(cfg: "TrainConfig") -> None:
    def require(cond, message):
        if not cond:
            raise ConfigError(message)

    require(0.0 <= cfg.lambda_ssim <= 1.0, "lambda_ssim must lie in [0, 1]")
    require(0 <= cfg.sh_degree <= 3, "sh_degree must be in 0..3")
    require(cfg.tile_size >= 1, "tile_size must be >= 1")
    require(len(cfg.background) == 3, "background must have three channels")
    require(cfg.holdout_every >= 0, "holdout_every must be >= 0")
    require(cfg.mask.lambda_m >= 0 and cfg.mask.lambda_sh >= 0, "mask loss weights must be >= 0")
    require(0.0 < cfg.mask.eps_m < 1.0, "eps_m must lie in (0, 1)")
    require(0.0 < cfg.mask.eps_sh < 1.0, "eps_sh must lie in (0, 1)")
    require(0.0 < cfg.significance.first_rate < 1.0, "significance first_rate must lie in (0, 1)")
    require(0.0 < cfg.significance.decay < 1.0, "significance decay must lie in (0, 1)")
    require(cfg.significance.volume_power > 0, "volume_power must be > 0")
    require(cfg.significance.count_resolution in ("current", "full"), "count_resolution must be 'current' or 'full'")
    require(0.0 < cfg.scale.seed_keep_fraction <= 1.0, "seed_keep_fraction must lie in (0, 1]")
    require(cfg.scale.lowpass_floor > 0, "lowpass_floor must be > 0")
    require(0.0 < cfg.resolution.start_factor <= 1.0, "resolution start_factor must lie in (0, 1]")
    require(cfg.resolution.mode in ("linear", "logarithmic"), "resolution mode must be linear or logarithmic")
    require(cfg.blur.kernel_size >= 1 and cfg.blur.kernel_size % 2 == 1, "blur kernel_size must be odd")
    require(cfg.blur.sigma >= 0, "blur sigma must be >= 0")
    require(0.0 <= cfg.blur.decay <= 1.0, "blur decay must lie in [0, 1] (0 = derived)")
    require(cfg.densify.grad_threshold > 0, "densify grad_threshold must be > 0")
    require(cfg.densify.split_scale_div > 1.0, "split_scale_div must be > 1")
    require(cfg.optim.eps > 0, "optimizer eps must be > 0")
    require(cfg.threads >= 1, "threads must be >= 1")


def describe_toggles(cfg: "TrainConfig") -> str:
    names = [
        ("BL", cfg.tricks.blur),
        ("DS", cfg.tricks.downsample),
        ("SG", cfg.tricks.significance),
        ("GM", cfg.tricks.gaussian_mask),
        ("SHM", cfg.tricks.sh_mask),
        ("AT", cfg.tricks.accelerated),
        ("DE", cfg.tricks.late_densify),
        ("SC", cfg.tricks.progressive_scale),
    ]
    return " ".join(f"{n}={'on' if v else 'off'}" for n, v in names)
