"""Engine configuration: defaults, file loading (TOML/JSON), validation.

The configuration is a nested mapping with fixed sections; unknown sections or
keys are rejected by name so typos fail loudly.  Defaults reproduce the
pipeline's standard operating point: triangulation angles 6-60 degrees with a
20% acceptance fraction, 3-frame stereo groups, a 5-map consistency window,
and a 4-frame fusion buffer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .engine import PatchSpec
from .errors import ConfigError
from .pipeline import ConsistencyConfig, FusionConfig
from .viewfilter import ViewFilterConfig


@dataclass(frozen=True)
class PatchmatchConfig:
    half_window: int = 5
    sample_stride: int = 2
    cost_truncation: float = 1.2
    iterations: int = 6
    depth_min: float = 0.5
    depth_max: float = 16.0
    warp: bool = True
    seed: int = 0
    median_window: int = 5
    median_rel_threshold: float = 0.2

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError(
                f"patchmatch.iterations must be >= 1, got {self.iterations}"
            )
        if not (0.0 < self.depth_min < self.depth_max):
            raise ConfigError(
                "patchmatch depth range must satisfy 0 < depth_min < depth_max, "
                f"got depth_min={self.depth_min}, depth_max={self.depth_max}"
            )
        if self.median_window < 3 or self.median_window % 2 == 0:
            raise ConfigError(
                f"patchmatch.median_window must be odd and >= 3, got {self.median_window}"
            )
        if self.median_rel_threshold <= 0:
            raise ConfigError(
                "patchmatch.median_rel_threshold must be > 0, "
                f"got {self.median_rel_threshold}"
            )
        self.spec  # PatchSpec validates half_window/stride/truncation

    @property
    def spec(self) -> PatchSpec:
        return PatchSpec(
            half_window=self.half_window,
            sample_stride=self.sample_stride,
            cost_truncation=self.cost_truncation,
        )

    @property
    def depth_range(self) -> tuple[float, float]:
        return (self.depth_min, self.depth_max)


@dataclass(frozen=True)
class ProcessingConfig:
    resolution: tuple[int, int] | None = None
    workers: int | None = None
    threaded: bool = True
    queue_size: int = 8

    def __post_init__(self) -> None:
        if self.resolution is not None:
            try:
                w, h = (int(v) for v in self.resolution)
            except (TypeError, ValueError) as exc:
                raise ConfigError(
                    f"processing.resolution must be [width, height], got {self.resolution!r}"
                ) from exc
            if w != 2 * h or h < 1:
                raise ConfigError(
                    f"processing.resolution must be 2:1 (width = 2*height), got {w}x{h}"
                )
            object.__setattr__(self, "resolution", (w, h))
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"processing.workers must be >= 1, got {self.workers}")
        if self.queue_size < 1:
            raise ConfigError(
                f"processing.queue_size must be >= 1, got {self.queue_size}"
            )


@dataclass(frozen=True)
class OutputConfig:
    save_depth: bool = False


@dataclass(frozen=True)
class EngineConfig:
    viewfilter: ViewFilterConfig = field(default_factory=ViewFilterConfig)
    patchmatch: PatchmatchConfig = field(default_factory=PatchmatchConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    processing: ProcessingConfig = field(default_factory=ProcessingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return {
            "viewfilter": {
                "theta_min": self.viewfilter.theta_min,
                "theta_max": self.viewfilter.theta_max,
                "accept_fraction": self.viewfilter.accept_fraction,
            },
            "patchmatch": {
                "half_window": self.patchmatch.half_window,
                "sample_stride": self.patchmatch.sample_stride,
                "cost_truncation": self.patchmatch.cost_truncation,
                "iterations": self.patchmatch.iterations,
                "depth_min": self.patchmatch.depth_min,
                "depth_max": self.patchmatch.depth_max,
                "warp": self.patchmatch.warp,
                "seed": self.patchmatch.seed,
                "median_window": self.patchmatch.median_window,
                "median_rel_threshold": self.patchmatch.median_rel_threshold,
            },
            "consistency": {
                "window": self.consistency.window,
                "min_support": self.consistency.min_support,
                "rel_depth_tol": self.consistency.rel_depth_tol,
            },
            "fusion": {
                "buffer": self.fusion.buffer,
                "reproj_px": self.fusion.reproj_px,
                "rel_depth_tol": self.fusion.rel_depth_tol,
            },
            "processing": {
                "resolution": (
                    list(self.processing.resolution)
                    if self.processing.resolution
                    else None
                ),
                "workers": self.processing.workers,
                "threaded": self.processing.threaded,
                "queue_size": self.processing.queue_size,
            },
            "output": {"save_depth": self.output.save_depth},
        }


_SECTION_TYPES = {
    "viewfilter": ViewFilterConfig,
    "patchmatch": PatchmatchConfig,
    "consistency": ConsistencyConfig,
    "fusion": FusionConfig,
    "processing": ProcessingConfig,
    "output": OutputConfig,
}


def _parse_file(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".toml":
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    if suffix == ".json":
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path}: top level must be an object")
        return data
    raise ConfigError(
        f"config file {path} must end in .toml or .json, got {suffix!r}"
    )


def load_config(
    path: str | Path | None = None, overrides: dict | None = None
) -> EngineConfig:
    """Defaults, overlaid with a TOML/JSON file, overlaid with CLI overrides.

    ``overrides`` maps dotted keys ("patchmatch.seed") to values.  Unknown
    sections or keys raise a ConfigError naming the offender.
    """
    sections: dict[str, dict] = {name: {} for name in _SECTION_TYPES}

    if path is not None:
        data = _parse_file(Path(path))
        for section, values in data.items():
            if section not in _SECTION_TYPES:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be a table/object")
            for key, value in values.items():
                _check_key(section, key)
                sections[section][key] = value

    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SECTION_TYPES or not key:
            raise ConfigError(f"unknown config override {dotted!r}")
        _check_key(section, key)
        sections[section][key] = value

    built = {}
    for section, cls in _SECTION_TYPES.items():
        values = dict(sections[section])
        if section == "processing" and isinstance(values.get("resolution"), list):
            values["resolution"] = tuple(values["resolution"])
        built[section] = cls(**values)
    return EngineConfig(**built)


def _check_key(section: str, key: str) -> None:
    cls = _SECTION_TYPES[section]
    if key not in cls.__dataclass_fields__:
        raise ConfigError(f"unknown config key {section + '.' + key!r}")
