"""
Experiment configuration files and environment settings.

Config files are flat ``key = value`` text: one assignment per line, ``#``
starts a comment, list values are comma-separated. Every key is a field of
``schemas.ExperimentConfig``; omitted keys take the documented defaults.
"""
import hashlib
import os
from enum import Enum
from pathlib import Path
from typing import Dict, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from .data import Dataset, generate_synthetic, load_cifar10, load_cifar100, load_idx
from .errors import ConfigError
from .schemas import DatasetKind, ExperimentConfig

# Environment settings, optionally from a .env file
load_dotenv()

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
DEFAULT_WORKERS = int(os.getenv("HETFED_WORKERS", "1"))
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./hetfed.db")

LIST_KEYS = {"synthetic_shape", "targets"}
# Keys that do not change what a run computes
NON_SEMANTIC_KEYS = {"workers", "output_dir"}


def parse_config_text(text: str) -> ExperimentConfig:
    raw: Dict[str, object] = {}
    known = set(ExperimentConfig.__fields__)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(key, "unknown key")
        if key in raw:
            raise ConfigError(key, "given more than once")
        raw[key] = [item.strip() for item in value.split(",") if item.strip()] if key in LIST_KEYS else value
    raw.setdefault("workers", DEFAULT_WORKERS)
    return build_config(raw)


def build_config(raw: Dict[str, object]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        error = e.errors()[0]
        raise ConfigError(str(error["loc"][0]), error["msg"]) from e


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"{path} not found")
    return parse_config_text(path.read_text())


def _format(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(config: ExperimentConfig, include_non_semantic: bool = True) -> str:
    """Canonical text form: every key, sorted, one per line"""
    lines = []
    for key in sorted(ExperimentConfig.__fields__):
        if not include_non_semantic and key in NON_SEMANTIC_KEYS:
            continue
        lines.append(f"{key} = {_format(getattr(config, key))}")
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(config, include_non_semantic=False).encode("utf-8")).hexdigest()


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == DatasetKind.SYNTHETIC:
        return generate_synthetic(
            config.synthetic_classes,
            config.synthetic_per_class,
            config.synthetic_shape,
            config.synthetic_sigma,
            config.seed,
        )
    if config.dataset == DatasetKind.CIFAR10:
        return load_cifar10(config.dataset_path)
    if config.dataset == DatasetKind.CIFAR100:
        return load_cifar100(config.dataset_path)
    return load_idx(config.idx_images, config.idx_labels)
