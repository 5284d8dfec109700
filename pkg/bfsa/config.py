"""Run configuration: a tree of dataclasses loaded from JSON with unknown keys rejected."""
import dataclasses
import json
import logging
import typing as t

import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.optimizer as optimizer
import bfsa.parallel as parallel


@dataclasses.dataclass(frozen=True)
class KernelConfig:
    variant: str = kernels.PACIOREK_SCHERVISH
    nu: float = 1.0
    nugget: float = 0.0
    sigma2: t.Optional[float] = None
    initial_range: t.Optional[float] = None
    num_centers: int = 4
    width: t.Optional[float] = None

    def __post_init__(self):
        if self.variant not in kernels.VARIANTS:
            raise ValueError(f"Unknown kernel variant {self.variant!r}; expected one of {kernels.VARIANTS}.")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}.")
        if not self.nugget >= 0:
            raise ValueError(f"nugget must be nonnegative, got {self.nugget}.")
        for name in ("sigma2", "initial_range", "width"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}.")
        if self.num_centers < 1 or self.num_centers & (self.num_centers - 1):
            raise ValueError(f"num_centers must be a power of two, got {self.num_centers}.")


@dataclasses.dataclass(frozen=True)
class PathsConfig:
    data: t.Optional[str] = None
    targets: t.Optional[str] = None
    params: t.Optional[str] = None
    output_dir: str = "output"


@dataclasses.dataclass(frozen=True)
class BenchConfig:
    ladder: t.List[int] = dataclasses.field(
        default_factory=lambda: [2 ** e for e in range(9, 16)]
    )
    block_size: int = 128
    num_landmarks: int = 32
    num_targets: int = 512
    repeats: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.ladder or any(n < self.block_size for n in self.ladder):
            raise ValueError(f"Every ladder size must be at least the block size {self.block_size}.")
        if self.repeats < 1:
            raise ValueError(f"repeats must be positive, got {self.repeats}.")


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    n: int = 2000
    layout: str = "uniform"
    width: float = 1.0
    height: float = 1.0
    variant: str = kernels.PACIOREK_SCHERVISH
    nu: float = 1.0
    sigma2: float = 1.0
    rho: float = 0.1
    nugget: float = 1e-4
    num_centers: int = 4
    anisotropy_spread: float = 0.5
    holdout: t.Optional[t.List[float]] = None
    num_blocks: int = 16
    num_landmarks: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.layout not in ("uniform", "grid"):
            raise ValueError(f"layout must be 'uniform' or 'grid', got {self.layout!r}.")
        if self.holdout is not None and len(self.holdout) != 4:
            raise ValueError("holdout must be [x_min, y_min, x_max, y_max].")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    kernel: KernelConfig = dataclasses.field(default_factory=KernelConfig)
    paths: PathsConfig = dataclasses.field(default_factory=PathsConfig)
    block_size: int = 128
    num_blocks: t.Optional[int] = None
    num_landmarks: int = 32
    trust_region: optimizer.TrustRegionConfig = dataclasses.field(
        default_factory=optimizer.TrustRegionConfig
    )
    local_trust_region: optimizer.TrustRegionConfig = dataclasses.field(
        default_factory=lambda: optimizer.TrustRegionConfig(curvature_mode=optimizer.FISHER_EXACT)
    )
    free: t.Optional[t.List[int]] = None
    num_samples: int = 10
    seed: int = 0
    conditional: bool = True
    zscore_count: int = 100
    bench: BenchConfig = dataclasses.field(default_factory=BenchConfig)
    synthetic: SyntheticConfig = dataclasses.field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError(f"block_size must be positive, got {self.block_size}.")
        if self.num_landmarks < 0:
            raise ValueError(f"num_landmarks must be nonnegative, got {self.num_landmarks}.")
        if self.num_samples < 0:
            raise ValueError(f"num_samples must be nonnegative, got {self.num_samples}.")

    def blocks_for(self, n: int, num_regions: t.Optional[int] = None) -> int:
        """num_blocks if set, else the model's basis regions, else a count from block_size.

        The count from block_size is the largest power of two keeping at least
        block_size points per block.
        """
        if self.num_blocks is not None:
            return self.num_blocks
        if num_regions is not None:
            return num_regions
        return geometry.blocks_for_size(n, self.block_size)


def _is_dataclass_type(annotation) -> bool:
    return isinstance(annotation, type) and dataclasses.is_dataclass(annotation)


def from_dict(cls, data: t.Mapping[str, t.Any], path: str = ""):
    """Builds the dataclass cls from a mapping, recursing into nested sections."""
    if not isinstance(data, dict):
        raise ValueError(f"Configuration section {path or '<root>'} must be an object.")
    hints = t.get_type_hints(cls)
    names = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"Unknown configuration keys at {path or '<root>'}: {unknown}.")
    values = {}
    for name, value in data.items():
        annotation = hints[name]
        if _is_dataclass_type(annotation):
            value = from_dict(annotation, value, f"{path}.{name}".lstrip("."))
        values[name] = value
    try:
        return cls(**values)
    except TypeError as error:
        raise ValueError(f"Invalid configuration at {path or '<root>'}: {error}") from error


def load_config(path: t.Optional[str]) -> RunConfig:
    if path is None:
        logging.info("No configuration file given, using defaults")
        return RunConfig()
    logging.info(f"Loading configuration from {path}")
    with open(path) as file:
        try:
            data = json.load(file)
        except json.JSONDecodeError as error:
            raise ValueError(f"Configuration file {path} is not valid JSON: {error}") from error
    return from_dict(RunConfig, data)


def to_dict(config) -> dict:
    return dataclasses.asdict(config)


_JSON_TYPES = {int: "integer", float: "number", str: "string", bool: "boolean"}


def _schema_for(annotation) -> dict:
    if _is_dataclass_type(annotation):
        return schema(annotation)
    origin = t.get_origin(annotation)
    args = t.get_args(annotation)
    if origin is t.Union:
        options = [_schema_for(arg) for arg in args if arg is not type(None)]
        option = options[0] if len(options) == 1 else {"anyOf": options}
        return {"anyOf": [option, {"type": "null"}]}
    if origin is list:
        return {"type": "array", "items": _schema_for(args[0])}
    return {"type": _JSON_TYPES.get(annotation, "string")}


def schema(cls=RunConfig) -> dict:
    """A JSON-schema description of a configuration dataclass and its defaults."""
    hints = t.get_type_hints(cls)
    defaults = to_dict(cls())
    properties = {}
    for field in dataclasses.fields(cls):
        entry = _schema_for(hints[field.name])
        if not _is_dataclass_type(hints[field.name]):
            entry["default"] = defaults[field.name]
        properties[field.name] = entry
    return {"type": "object", "properties": properties, "additionalProperties": False}


def resolve_threads(flag: t.Optional[int]) -> int:
    """--threads wins over BFSA_THREADS; the result is installed as the pool size."""
    count = flag if flag is not None else parallel.thread_count_from_environment()
    parallel.set_thread_count(count)
    return count
