"""
Model / training configuration and the named presets.

Presets `modelnet40` and `scanobjectnn` carry the full-scale benchmark settings;
`desk` is what the CPU test and validation runs use.
"""

import json
from dataclasses import dataclass, field, fields, asdict, replace

from models.errors import UsageError, InvalidParameterError

ORDERINGS = ("nimba", "axis-triple", "ysort", "identity")
MIXERS = ("mamba", "attention")
DEFAULT_SEEDS = (0, 123, 777)


@dataclass(frozen=True)
class ModelConfig:
    d_e: int = 64
    layers: int = 4
    n_points: int = 512
    n_c: int = 32
    n_p: int = 16
    use_positional_embedding: bool = False
    ordering: str = "nimba"
    r: float = 0.8
    candidate: str = "first"
    expand: int = 2
    conv_kernel: int = 4
    d_state: int = 16
    num_classes: int = 4
    patch_hidden: int = 64
    pe_hidden: int = 128
    head_hidden: int = 128
    mixer: str = "mamba"
    skip_mode: str = "constant"

    def __post_init__(self):
        for name in ("d_e", "layers", "n_points", "n_c", "n_p", "expand",
                     "conv_kernel", "d_state", "num_classes",
                     "patch_hidden", "pe_hidden", "head_hidden"):
            # zero encoder layers is allowed (identity + final norm)
            minimum = 0 if name == "layers" else 1
            if getattr(self, name) < minimum:
                raise InvalidParameterError(f"{name} must be >= {minimum}, got {getattr(self, name)}")
        if self.ordering not in ORDERINGS:
            raise InvalidParameterError(f"unknown ordering {self.ordering!r}; expected one of {ORDERINGS}")
        if self.mixer not in MIXERS:
            raise InvalidParameterError(f"unknown mixer {self.mixer!r}; expected one of {MIXERS}")
        if self.candidate not in ("first", "nearest"):
            raise InvalidParameterError(f"unknown candidate rule {self.candidate!r}")
        if self.skip_mode not in ("constant", "input_dependent"):
            raise InvalidParameterError(f"unknown skip mode {self.skip_mode!r}")
        if self.r < 0:
            raise InvalidParameterError(f"r must be >= 0, got {self.r}")
        if self.n_c > self.n_points or self.n_p > self.n_points:
            raise InvalidParameterError("n_c and n_p must not exceed n_points")

    @property
    def sequence_length(self):
        return 3 * self.n_c if self.ordering == "axis-triple" else self.n_c

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**_known_keys(cls, data))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 5e-2
    warmup_epochs: int = 5
    seed: int = 0
    seeds: tuple = DEFAULT_SEEDS
    classes: int = 4
    per_class: int = 50
    random_pose: bool = False
    threads: int = 1
    # test-set evaluation period in epochs; 0 evaluates after the last epoch only
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidParameterError("epochs must be >= 0 and batch_size >= 1")
        if self.eval_every < 0:
            raise InvalidParameterError(f"eval_every must be >= 0, got {self.eval_every}")
        if self.lr < 0 or self.weight_decay < 0:
            raise InvalidParameterError("lr and weight_decay must be >= 0")

    def to_dict(self):
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data

    @classmethod
    def from_dict(cls, data):
        data = _known_keys(cls, data)
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        return cls(**data)


@dataclass(frozen=True)
class Preset:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


PRESETS = {
    "desk": Preset(),
    "toy": Preset(
        model=ModelConfig(d_e=8, layers=1, n_points=64, n_c=6, n_p=8, d_state=4,
                          num_classes=2, patch_hidden=8, pe_hidden=8, head_hidden=8,
                          use_positional_embedding=True),
        train=TrainConfig(epochs=5, batch_size=4, classes=2, per_class=4),
    ),
    "modelnet40": Preset(
        model=ModelConfig(d_e=384, layers=12, n_points=1024, n_c=64, n_p=32, num_classes=40,
                          patch_hidden=256, pe_hidden=128, head_hidden=256),
        train=TrainConfig(epochs=300, batch_size=32, lr=1e-4, weight_decay=5e-2, warmup_epochs=10,
                          seeds=DEFAULT_SEEDS, classes=40),
    ),
    "scanobjectnn": Preset(
        model=ModelConfig(d_e=384, layers=12, n_points=2048, n_c=128, n_p=32, num_classes=15,
                          patch_hidden=256, pe_hidden=128, head_hidden=256),
        train=TrainConfig(epochs=300, batch_size=32, lr=5e-4, weight_decay=5e-2, warmup_epochs=10,
                          seeds=DEFAULT_SEEDS, classes=15),
    ),
}


def _known_keys(cls, data):
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


def resolve(preset="desk", config_path=None, overrides=None):
    """preset -> JSON config file -> explicit overrides; returns (ModelConfig, TrainConfig)."""
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model_data = PRESETS[preset].model.to_dict()
    train_data = PRESETS[preset].train.to_dict()

    layers = [load_config_file(config_path)] if config_path else []
    layers.append(overrides or {})
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if key in model_data:
                model_data[key] = value
            if key in train_data:
                train_data[key] = value

    model = ModelConfig.from_dict(model_data)
    train = TrainConfig.from_dict(train_data)
    if train.classes != model.num_classes:
        model = replace(model, num_classes=train.classes)
    return model, train


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON config ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data
