"""
Experiment configuration files.

A configuration is a flat text file of ``section.key = value`` lines; blank
lines and lines starting with ``#`` are ignored, lists are comma separated.
One file fully determines a run::

    dataset.kind = blobs
    dataset.dims = 64
    model.layer_sizes = 64, 16, 4
    federation.transform = standin
    attack.method = grad_match
    run.seeds = 0, 1, 2

Keys not given fall back to the dataclass defaults below.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

from gradient_standin.attacks import AttackConfig
from gradient_standin.defense import TransformKind
from gradient_standin.federation import RoundConfig
from gradient_standin.harness.data_loader import idx_summary
from gradient_standin.nn import MlpSpec

VALID_DATASETS = {"blobs", "idx"}


class ConfigError(ValueError):
    """A configuration file is missing, malformed or describes an invalid run."""


@dataclass(frozen=True)
class DatasetConfig:
    """Where the samples come from: synthetic blobs or a pair of IDX files."""

    kind: str = "blobs"
    n_per_class: int = 50
    dims: int = 8
    classes: int = 4
    spread: float = 0.5
    scale: float = 3.0
    images: Optional[str] = None
    labels: Optional[str] = None
    downsample: int = 1
    limit: Optional[int] = None
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in VALID_DATASETS:
            raise ValueError(f"Dataset kind must be one of {sorted(VALID_DATASETS)}, not {self.kind}")
        if self.kind == "idx":
            for name in ("images", "labels"):
                location = getattr(self, name)
                if location is None:
                    raise ValueError(f"dataset.{name} is required for IDX data")
                if not Path(location).exists():
                    raise ValueError(f"dataset.{name} does not exist: {location}")
        if self.downsample < 1:
            raise ValueError(f"dataset.downsample must be >= 1, not {self.downsample}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"dataset.test_fraction must lie in (0, 1), not {self.test_fraction}")

    @property
    def name(self) -> str:
        if self.kind == "idx":
            return f"idx-{Path(self.images).name}"
        return f"blobs-{self.dims}x{self.classes}"


@dataclass(frozen=True)
class FederationConfig:
    """
    Federation size and the settings of its rounds.

    ``server_lr`` applies to every transform except the stand-in, which uses
    ``standin_server_lr``.
    """

    clients: int = 4
    rounds: int = 30
    local_iterations: int = 1
    batch_size: int = 32
    local_lr: float = 0.1
    server_lr: Optional[float] = None
    standin_server_lr: float = 0.01
    transform: TransformKind = field(default_factory=TransformKind.identity)

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError(f"federation.clients must be >= 1, not {self.clients}")
        if self.rounds < 1:
            raise ValueError(f"federation.rounds must be >= 1, not {self.rounds}")
        self.round_config()

    def round_config(self, transform: Optional[TransformKind] = None) -> RoundConfig:
        """RoundConfig for ``transform`` (the configured one by default)."""
        transform = self.transform if transform is None else transform
        return RoundConfig(
            local_iterations=self.local_iterations,
            batch_size=self.batch_size,
            local_lr=self.local_lr,
            server_lr=self.standin_server_lr if transform.uses_moments else self.server_lr,
            transform=transform,
        )


@dataclass(frozen=True)
class RunConfig:
    """Seeds, parallelism, output location and the grid of the ``experiment`` command."""

    seeds: Tuple[int, ...] = (0,)
    threads: int = 1
    output: str = "results"
    defenses: Tuple[TransformKind, ...] = (TransformKind.identity(), TransformKind.standin())
    methods: Tuple[str, ...] = ("analytic_fc", "grad_match")
    label_trials: int = 200

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("run.seeds needs at least one seed")
        if any(seed < 0 for seed in self.seeds):
            raise ValueError(f"Seeds must be >= 0, got {self.seeds}")
        if self.threads < 1:
            raise ValueError(f"run.threads must be >= 1, not {self.threads}")
        if self.label_trials < 1:
            raise ValueError(f"run.label_trials must be >= 1, not {self.label_trials}")
        for method in self.methods:
            AttackConfig(method=method)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: MlpSpec = field(default_factory=lambda: MlpSpec((8, 4), "tanh"))
    federation: FederationConfig = field(default_factory=FederationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.dataset.kind == "blobs":
            if self.model.input_dim != self.dataset.dims:
                raise ValueError(
                    f"model input {self.model.input_dim} differs from dataset.dims {self.dataset.dims}"
                )
            if self.model.n_classes != self.dataset.classes:
                raise ValueError(
                    f"model classes {self.model.n_classes} differ from dataset.classes {self.dataset.classes}"
                )
        else:
            self._check_idx()

    def _check_idx(self):
        data = self.dataset
        summary = idx_summary(data.images, data.labels, data.limit)
        factor = data.downsample
        if summary.rows % factor or summary.cols % factor:
            raise ValueError(
                f"dataset.downsample {factor} does not divide {summary.rows}x{summary.cols} images"
            )
        pixels = (summary.rows // factor) * (summary.cols // factor)
        if self.model.input_dim != pixels:
            raise ValueError(
                f"model input {self.model.input_dim} differs from the {pixels} pixels of "
                f"{summary.rows}x{summary.cols} images downsampled by {factor}"
            )
        if summary.max_label >= self.model.n_classes:
            raise ValueError(
                f"label {summary.max_label} does not fit the {self.model.n_classes} model classes"
            )


def _optional(convert: Callable) -> Callable:
    def parse(text: str):
        return None if text.lower() in {"", "none"} else convert(text)

    return parse


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in text.split(",") if item.strip())


def _words(text: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _transforms(text: str) -> Tuple[TransformKind, ...]:
    return tuple(TransformKind.parse(item) for item in _words(text))


_SCHEMA: Dict[str, Dict[str, Callable]] = {
    "dataset": {
        "kind": str,
        "n_per_class": int,
        "dims": int,
        "classes": int,
        "spread": float,
        "scale": float,
        "images": _optional(str),
        "labels": _optional(str),
        "downsample": int,
        "limit": _optional(int),
        "test_fraction": float,
    },
    "model": {"layer_sizes": _ints, "activation": str},
    "federation": {
        "clients": int,
        "rounds": int,
        "local_iterations": int,
        "batch_size": int,
        "local_lr": float,
        "server_lr": _optional(float),
        "standin_server_lr": float,
        "transform": TransformKind.parse,
    },
    "attack": {
        "method": str,
        "distance": str,
        "iterations": int,
        "step_size": float,
        "seed": int,
        "finite_diff_h": float,
    },
    "run": {
        "seeds": _ints,
        "threads": int,
        "output": str,
        "defenses": _transforms,
        "methods": _words,
        "label_trials": int,
    },
}

_SECTIONS = {
    "dataset": DatasetConfig,
    "model": MlpSpec,
    "federation": FederationConfig,
    "attack": AttackConfig,
    "run": RunConfig,
}


def parse_config_text(text: str) -> Dict[str, Dict[str, object]]:
    """
    Parse configuration text into typed values per section.

    Raises
    ------
    ConfigError
        On malformed lines, unknown sections or keys, repeated keys or values
        that do not convert.
    """
    values: Dict[str, Dict[str, object]] = {section: {} for section in _SCHEMA}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'section.key = value', got '{line}'")
        name, raw = (part.strip() for part in line.split("=", 1))
        section, _, key = name.partition(".")
        if section not in _SCHEMA:
            raise ConfigError(f"line {number}: unknown section '{section}'")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {number}: unknown key '{name}'")
        if key in values[section]:
            raise ConfigError(f"line {number}: '{name}' given twice")
        try:
            values[section][key] = _SCHEMA[section][key](raw)
        except ValueError as error:
            raise ConfigError(f"line {number}: bad value for '{name}': {error}") from error
    return values


def build_config(values: Dict[str, Dict[str, object]]) -> ExperimentConfig:
    """Assemble and validate an :class:`ExperimentConfig` from parsed values."""
    try:
        sections = {
            section: cls(**values[section])
            for section, cls in _SECTIONS.items()
            if values.get(section)
        }
        return ExperimentConfig(**sections)
    except (TypeError, ValueError) as error:
        raise ConfigError(str(error)) from error


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a configuration file.

    Raises
    ------
    ConfigError
        If the file is missing or invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")
    return build_config(parse_config_text(path.read_text(encoding="utf-8")))


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    output: Optional[Union[str, Path]] = None,
) -> ExperimentConfig:
    """Apply command-line overrides; ``seed`` replaces the whole seed list."""
    changes = {}
    if seed is not None:
        changes["seeds"] = (int(seed),)
    if threads is not None:
        changes["threads"] = int(threads)
    if output is not None:
        changes["output"] = str(output)
    if not changes:
        return cfg
    try:
        return dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, **changes))
    except ValueError as error:
        raise ConfigError(str(error)) from error
