"""
Run configuration: typed sections, TOML files and command-line overrides.

A config file has the sections ``[run]``, ``[synth]``, ``[preprocess]``, ``[model]``,
``[pretrain]`` and ``[finetune]``; each maps onto the dataclass of the package that
consumes it. Values resolve as dataclass defaults < config file < ``--set`` overrides <
dedicated flags (``--seed``, ``--jobs``). The resolved config is written next to every
run's outputs and can be loaded back unchanged.

Usage:
    from src.utils.config import get_value, load_config

    config = load_config("configs/quick.toml", overrides=["pretrain.total_steps=40"], seed=3)
    steps = get_value(config, "pretrain.total_steps", 20000)
    config.write_snapshot(out_dir)
"""

import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import tomli_w

from src.data.preprocessing import PreprocessConfig
from src.data.synthesis import SynthConfig
from src.models.encoder import EncoderConfig
from src.training.finetune import FinetuneConfig
from src.training.pretrain import PretrainConfig
from src.utils.errors import ConfigError
from src.utils.validation import require, validate_choice, validate_positive, validate_section_keys

logger = logging.getLogger(__name__)

SNAPSHOT_FILENAME = "config.toml"
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class RunSection:
    """Settings shared by every command."""

    seed: int = 0
    jobs: int = 1
    dtype: str = "float64"
    k_folds: int = 6
    horizon: float = 12.0
    allow_any_horizon: bool = False

    def __post_init__(self) -> None:
        require(
            validate_positive("run.jobs", self.jobs),
            validate_choice("run.dtype", self.dtype, list(DTYPES)),
            (isinstance(self.k_folds, int) and self.k_folds >= 2, f"run.k_folds must be an integer >= 2, got {self.k_folds}"),
            validate_positive("run.horizon", self.horizon),
        )

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]


SECTIONS = {
    "run": RunSection,
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "model": EncoderConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
}


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self) -> None:
        if tuple(self.preprocess.out_size) != tuple(self.model.input_size):
            raise ConfigError(
                f"preprocess.out_size {tuple(self.preprocess.out_size)} must equal model.input_size "
                f"{tuple(self.model.input_size)}"
            )

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        """
        Build a config from nested section dictionaries.

        Raises:
            ConfigError: Unknown section or key, or an invalid value
        """
        require(validate_section_keys("top level", data, SECTIONS))
        sections = {}
        for name, section_cls in SECTIONS.items():
            values = dict(data.get(name, {}))
            require(validate_section_keys(name, values, [f.name for f in fields(section_cls)]))
            try:
                sections[name] = section_cls(**values)
            except TypeError as e:
                raise ConfigError(f"[{name}]: {e}") from e
        return cls(**sections)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def write_snapshot(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / SNAPSHOT_FILENAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(tomli_w.dumps(self.to_dict()).encode("utf-8"))
        logger.debug("Wrote resolved config to %s", path)
        return path

    @property
    def dtype(self):
        return self.run.numpy_dtype


def parse_override(text: str) -> Tuple[str, str, Any]:
    """
    Split a ``section.key=value`` override.

    The value is read as a TOML value (numbers, booleans, arrays, quoted strings); bare
    words that are not valid TOML are kept as strings.

    Returns:
        Tuple of (section, key, value)
    """
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key must be section.key, got {path!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def read_config_file(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        path: TOML config file, or None for the built-in defaults
        overrides: ``section.key=value`` strings applied after the file
        seed: Replaces the seed of every section that has one
        jobs: Replaces ``run.jobs``

    Returns:
        The validated RunConfig
    """
    data: Dict[str, Dict[str, Any]] = {}
    if path is not None:
        data = {k: dict(v) if isinstance(v, dict) else v for k, v in read_config_file(path).items()}
        logger.info("Loaded config file %s", path)
    for text in overrides:
        section, key, value = parse_override(text)
        data.setdefault(section, {})[key] = value
    if seed is not None:
        for section in ("run", "synth", "pretrain", "finetune"):
            data.setdefault(section, {})["seed"] = int(seed)
    if jobs is not None:
        data.setdefault("run", {})["jobs"] = int(jobs)
    for name, values in data.items():
        if not isinstance(values, dict):
            raise ConfigError(f"'{name}' must be a [section], got a plain value")
    return RunConfig.from_dict(data)


def get_value(config: Union[RunConfig, Mapping[str, Any]], key_path: str, default: Any = None) -> Any:
    """
    Retrieve a value by dot-notation path.

    Args:
        config: A RunConfig or its dictionary form
        key_path: Path such as ``'pretrain.total_steps'``
        default: Returned when any part of the path is missing

    Examples:
        >>> get_value(config, 'model.variant', 'vgg')
        >>> get_value(config, 'finetune.learning_rates')
    """
    value: Any = config.to_dict() if isinstance(config, RunConfig) else config
    for key in key_path.split("."):
        try:
            value = value[key]
        except (KeyError, TypeError, IndexError):
            return default
    return value


__all__ = [
    "DTYPES",
    "RunConfig",
    "RunSection",
    "SECTIONS",
    "SNAPSHOT_FILENAME",
    "get_value",
    "load_config",
    "parse_override",
    "read_config_file",
]
