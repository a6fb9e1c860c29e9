"""Configuration for scan integration and mapping runs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields


@dataclass
class FusionConfig:
    """Integration parameters.

    Unset derived values follow ``voxel_size``: truncation defaults to two
    voxels, the surface band to half the voxel diagonal and the free
    threshold to one voxel.
    """

    voxel_size: float = 0.1
    truncation: float | None = None
    max_range: float = 20.0
    free_threshold: float | None = None
    surface_band: float | None = None
    weight_cap: float = 1000.0
    sigma_max: float = 0.9
    sigma_range_coeff: float = 0.5
    normal_neighbors: int = 8

    def __post_init__(self):
        vs = self.voxel_size
        if not vs > 0:
            raise ValueError("voxel_size must be positive")
        if self.truncation is None:
            self.truncation = 2.0 * vs
        if self.surface_band is None:
            self.surface_band = math.sqrt(3.0) / 2.0 * vs
        if self.free_threshold is None:
            self.free_threshold = vs
        if self.truncation < vs:
            raise ValueError("truncation must be >= voxel_size")
        if self.surface_band > self.truncation:
            raise ValueError("surface_band must be <= truncation")
        if self.free_threshold < self.surface_band:
            raise ValueError("free_threshold must be >= surface_band")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not self.weight_cap > 0:
            raise ValueError("weight_cap must be positive")
        if not 0.0 <= self.sigma_max < 1.0:
            raise ValueError("sigma_max must be in [0, 1)")
        if self.sigma_range_coeff < 0:
            raise ValueError("sigma_range_coeff must be >= 0")
        if self.normal_neighbors < 3:
            raise ValueError("normal_neighbors must be >= 3")

    @property
    def normal_radius(self) -> float:
        return 4.0 * self.voxel_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fusion config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SubmapPolicy:
    missing_motion: str = "strict"  # or "lenient"
    retire_after: int = 100
    body_frame_carving: bool = False

    def __post_init__(self):
        if self.missing_motion not in ("strict", "lenient"):
            raise ValueError("missing_motion must be 'strict' or 'lenient'")
        if self.retire_after < 1:
            raise ValueError("retire_after must be >= 1")


@dataclass
class RunConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    policy: SubmapPolicy = field(default_factory=SubmapPolicy)
    mesh_every: int = 10
    coverage_lambda: float | None = None
    gt_sample_spacing: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.mesh_every < 0:
            raise ValueError("mesh_every must be >= 0")
        if self.coverage_lambda is not None and not self.coverage_lambda > 0:
            raise ValueError("coverage_lambda must be positive")
        if not self.gt_sample_spacing > 0:
            raise ValueError("gt_sample_spacing must be positive")

    @property
    def lambda_cover(self) -> float:
        if self.coverage_lambda is not None:
            return self.coverage_lambda
        return math.sqrt(3.0) / 2.0 * self.fusion.voxel_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        fusion = FusionConfig.from_dict(d.pop("fusion", {}))
        policy = SubmapPolicy(**d.pop("policy", {}))
        known = {f.name for f in fields(cls)} - {"fusion", "policy"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(fusion=fusion, policy=policy, **d)
