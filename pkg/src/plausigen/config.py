"""Generation settings and TOML config loading.

Every tunable used by the perturbation, camera and render stages lives on
:class:`Config`. A config file is a flat TOML table whose keys match the
field names; ``target_distribution`` is a sub-table keyed by size category.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import SchemaError


def _default_target() -> Dict[str, float]:
    return {"small": 1 / 3, "medium": 1 / 3, "large": 1 / 3}


@dataclass(frozen=True)
class Config:
    # perturbation
    epsilon_height: float = 1.0
    retry_budget: int = 50
    size_up_probability: float = 0.5
    co_loc_radius: float = 60.0
    separation_step: float = 0.01
    separation_budget_factor: float = 10.0
    target_distribution: Dict[str, float] = field(default_factory=_default_target)
    size_share_tolerance: float = 0.15
    n_c: int = 5
    max_transforms: int = 5
    # geometry
    contact_tolerance: float = 1e-3
    drop_grid: int = 8
    # camera
    camera_fov: float = 50.0
    image_size: int = 512
    v_min: float = 0.10
    n_min: int = 5
    o_max: float = 0.02
    n_iter: int = 50
    step_fraction: float = 0.05
    camera_box_half_xy: float = 200.0
    camera_box_z_min: float = 100.0
    camera_box_z_max: float = 250.0
    visibility_samples: int = 64
    near_plane: float = 1.0

    def __post_init__(self):
        target = dict(self.target_distribution)
        if set(target) != {"small", "medium", "large"}:
            raise SchemaError("target_distribution needs exactly small/medium/large")
        if any(v < 0 or v > 1 for v in target.values()) or abs(sum(target.values()) - 1) > 1e-9:
            raise SchemaError("target_distribution fractions must lie in [0,1] and sum to 1")
        if not 10.0 < self.camera_fov < 120.0:
            raise SchemaError("camera_fov must lie in (10, 120) degrees")
        if self.retry_budget < 1 or self.n_iter < 1 or self.step_fraction <= 0:
            raise SchemaError("retry_budget, n_iter and step_fraction must be positive")
        if not self.camera_box_z_min > 0 or self.camera_box_z_max < self.camera_box_z_min:
            raise SchemaError("camera box must lie strictly above the centroid")

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_toml(cls, path) -> "Config":
        with open(Path(path), "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise SchemaError(f"{path}: {exc}") from exc
        return cls.from_mapping(data)


DEFAULT_CONFIG = Config()
