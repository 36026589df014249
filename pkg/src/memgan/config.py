"""Experiment configuration: flat key = value text files plus overrides.

Unknown keys and out-of-range values are rejected with the offending
field named, so a config typo fails fast instead of silently training
the wrong thing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .pipeline import MODES

BIT_CHOICES = (4, 8, 16, 32)
IMAGE_SIZES = (20, 28, 32)
DATASETS = ("mnist", "cifar10", "digits")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset_name: str = "mnist"
    dataset_path: str = ""
    bits: int = 8
    parallelism: int = 32
    batch: int = 64
    iterations: int = 200
    seed: int = 0
    pipeline_mode: str = "cross_parallel"
    out_dir: str = "out"
    alpha: float = 0.05
    image_size: int = 20
    noise_dim: int = 64
    train_subset: int = 6000
    eval_subset: int = 1000
    bits_list: tuple = (32, 16, 8, 4)
    parallelism_list: tuple = (1, 2, 4, 8, 16, 32, 64)
    workload: str = "imagenet"

    def validate(self) -> "ExperimentConfig":
        if self.dataset_name not in DATASETS:
            raise ConfigError(f"dataset_name must be one of {DATASETS}, got {self.dataset_name!r}")
        if self.bits not in BIT_CHOICES:
            raise ConfigError(f"bits must be one of {BIT_CHOICES}, got {self.bits}")
        if not 1 <= self.parallelism <= 64:
            raise ConfigError(f"parallelism must be in [1, 64], got {self.parallelism}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.pipeline_mode not in MODES:
            raise ConfigError(f"pipeline_mode must be one of {MODES}, got {self.pipeline_mode!r}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.image_size not in IMAGE_SIZES:
            raise ConfigError(f"image_size must be one of {IMAGE_SIZES}, got {self.image_size}")
        if self.noise_dim < 1:
            raise ConfigError(f"noise_dim must be >= 1, got {self.noise_dim}")
        if self.train_subset < 1:
            raise ConfigError(f"train_subset must be >= 1, got {self.train_subset}")
        if self.eval_subset < 1:
            raise ConfigError(f"eval_subset must be >= 1, got {self.eval_subset}")
        for b in self.bits_list:
            if b not in BIT_CHOICES:
                raise ConfigError(f"bits_list entries must be in {BIT_CHOICES}, got {b}")
        for s in self.parallelism_list:
            if not 1 <= s <= 64:
                raise ConfigError(f"parallelism_list entries must be in [1, 64], got {s}")
        if self.workload not in ("imagenet", "lsun_bedroom"):
            raise ConfigError(f"workload must be imagenet or lsun_bedroom, got {self.workload!r}")
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_INT_FIELDS = {"bits", "parallelism", "batch", "iterations", "seed", "image_size",
               "noise_dim", "train_subset", "eval_subset"}
_FLOAT_FIELDS = {"alpha"}
_LIST_FIELDS = {"bits_list", "parallelism_list"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        if key in _LIST_FIELDS:
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"field {key}: cannot parse value {raw!r}") from None
    return raw


def parse_config_text(text: str) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
