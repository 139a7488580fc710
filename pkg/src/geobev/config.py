"""Line-based ``key = value`` configuration shared by every command."""

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .camera import BevGridSpec
from .exceptions import ConfigError
from .synthetic import SceneConfig

TEMPORAL_MODULES = ("static", "conv3d", "convgru", "geo-convgru")

MODEL_KEYS = (
    "seed", "temporal_module", "temporal_field", "num_classes", "encoder_channels",
    "feature_channels", "hidden_channels", "head_channels", "depth_bins", "depth_min",
    "depth_max", "gru_units", "kernel_size", "epsilon", "extent_x", "extent_y",
    "resolution", "feature_stride", "lr", "beta1", "beta2", "adam_eps", "epochs",
    "batch_size", "max_steps",
)


@dataclass
class Config:
    # model
    seed: int = 0
    temporal_module: str = "geo-convgru"
    temporal_field: int = 5
    num_classes: int = 2
    encoder_channels: int = 16
    feature_channels: int = 16
    hidden_channels: int = 16
    head_channels: int = 16
    depth_bins: int = 16
    depth_min: float = 1.0
    depth_max: float = 40.0
    gru_units: int = 2
    kernel_size: int = 3
    epsilon: float = 0.1
    extent_x: float = 100.0
    extent_y: float = 100.0
    resolution: float = 0.5
    feature_stride: int = 8
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1
    batch_size: int = 1
    max_steps: int = 0
    val_scenes: int = 0
    # scene generation
    num_frames: int = 10
    dt: float = 0.5
    vehicles_min: int = 2
    vehicles_max: int = 6
    speed_max: float = 8.0
    spawn_r_min: float = 4.0
    spawn_r_max: float = 30.0
    distractors: int = 0
    distractor_r_min: float = 30.0
    distractor_r_max: float = 45.0
    distractor_speed: float = 10.0
    noise_std: float = 0.0
    frame_dropout: float = 0.0
    num_cameras: int = 6
    fov_deg: float = 70.0
    camera_height: float = 1.5
    image_height: int = 96
    image_width: int = 160
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    vehicle_height: float = 1.6
    max_attempts: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.temporal_module not in TEMPORAL_MODULES:
            raise ConfigError(f"temporal_module: expected one of {TEMPORAL_MODULES}, "
                              f"got {self.temporal_module!r}")
        positive = ("temporal_field", "num_classes", "encoder_channels", "feature_channels",
                    "hidden_channels", "head_channels", "depth_bins", "gru_units",
                    "kernel_size", "batch_size", "num_cameras", "image_height", "image_width")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        for key in ("epochs", "max_steps", "val_scenes"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be >= 0")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size: must be odd, got {self.kernel_size}")
        if self.feature_stride < 2 or self.feature_stride % 2:
            raise ConfigError(f"feature_stride: must be an even number >= 2")
        if self.image_height % self.feature_stride or self.image_width % self.feature_stride:
            raise ConfigError("image_height/image_width: must be divisible by feature_stride")
        if not 0 < self.epsilon <= 1:
            raise ConfigError(f"epsilon: must lie in (0, 1], got {self.epsilon}")
        if not 0 < self.depth_min < self.depth_max:
            raise ConfigError("depth_min/depth_max: need 0 < depth_min < depth_max")
        if self.lr <= 0:
            raise ConfigError("lr: must be positive")
        try:
            self.grid()
        except ConfigError as exc:
            raise ConfigError(f"extent_x/extent_y/resolution: {exc}") from exc

    def grid(self):
        return BevGridSpec(self.extent_x, self.extent_y, self.resolution)

    def depth_values(self):
        if self.depth_bins == 1:
            return np.array([self.depth_min])
        return np.linspace(self.depth_min, self.depth_max, self.depth_bins)

    def scene_config(self):
        names = {f.name for f in fields(SceneConfig)}
        return SceneConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def model_params(self):
        return {k: getattr(self, k) for k in MODEL_KEYS}

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return Config(**data)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(key, raw, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    return raw


def parse_config(text, source="<config>"):
    types = {f.name: f.type for f in fields(Config)}
    types = {k: {"int": int, "float": float, "str": str}.get(t, t) for k, t in types.items()}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        values[key] = _coerce(key, val, types[key])
    try:
        return Config(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None):
    if path is None:
        return Config()
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))
