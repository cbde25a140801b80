"""Run configuration: one JSON file, every key overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

VARIANTS = ("voxel", "cross", "within", "magnitude")
ALTERNATIVES = ("more-coherent", "less-coherent")

PHANTOM_DEFAULTS = {
    "preset": "crossing",  # crossing | single-fiber | null
    "dims": [64, 64, 64],
    "pairs_interest": 20,
    "pairs_control": 20,
    "pairs_holdout": 0,
    "rho_interest": 0.7,
    "rho_control": 0.0,
    "rho_holdout": 0.6,
    "kappa": 15.0,
    "sigma": 0.15,
    "noise_peaks": 0,
    "background_radius_mm": None,
    "odf": False,
    "deformation": False,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    connectivity: int = 26
    peaks: int = 1
    variant: str = "cross"
    pthresh: float = 1e-4
    alternative: str = "more-coherent"
    top_regions: int = 22
    min_voxels: int = 100
    jacobian_pthresh: float = 1e-3
    sphere_level: int = 3
    seed: int = 0
    threads: int | None = None  # None -> DYCOH_THREADS or 1
    phantom: dict = field(default_factory=lambda: dict(PHANTOM_DEFAULTS))

    def __post_init__(self):
        if self.connectivity not in (6, 18, 26):
            raise ConfigError("connectivity must be 6, 18 or 26")
        if not (isinstance(self.peaks, int) and 1 <= self.peaks <= 4):
            raise ConfigError("peaks must be an integer between 1 and 4")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.alternative not in ALTERNATIVES:
            raise ConfigError(f"alternative must be one of {ALTERNATIVES}")
        for name in ("pthresh", "jacobian_pthresh"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 < v <= 1):
                raise ConfigError(f"{name} must be in (0, 1]")
        if self.top_regions < 0:
            raise ConfigError("top_regions must be non-negative")
        if self.min_voxels < 2:
            raise ConfigError("min_voxels must be at least 2")
        if not 0 <= self.sphere_level <= 6:
            raise ConfigError("sphere_level must be between 0 and 6")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be positive")
        unknown = set(self.phantom) - set(PHANTOM_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown phantom keys: {sorted(unknown)}")
        merged = dict(PHANTOM_DEFAULTS)
        merged.update(self.phantom)
        if merged["preset"] not in ("crossing", "single-fiber", "null"):
            raise ConfigError("phantom preset must be crossing, single-fiber or null")
        if len(merged["dims"]) != 3:
            raise ConfigError("phantom dims must have three entries")
        object.__setattr__(self, "phantom", merged)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(obj)

    def override(self, **kw) -> "RunConfig":
        """Copy with the non-None keyword values replaced."""
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_json(self) -> dict:
        return asdict(self)
