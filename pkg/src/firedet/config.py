"""Run configuration: JSON-loadable, fully defaulted, validated up front."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import AugmentConfig

# default mid-band radii at the reference 256x256 resolution
REF_SIZE = 256
REF_R_LO = 40.0
REF_R_HI = 120.0


def scaled_radii(image_size: int) -> tuple[float, float]:
    """Mid-band annulus radii scaled linearly with resolution."""
    return (REF_R_LO * image_size / REF_SIZE, REF_R_HI * image_size / REF_SIZE)


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 0
    image_size: int = 256
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 100
    lambda0: float = 0.2
    lambda1: float = 0.2
    lambda2: float = 0.6
    r_lo: float | None = None   # None -> scaled_radii(image_size)
    r_hi: float | None = None
    ae_frozen: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    paths: dict = field(default_factory=dict)

    def radii(self) -> tuple[float, float]:
        lo, hi = scaled_radii(self.image_size)
        return (lo if self.r_lo is None else self.r_lo,
                hi if self.r_hi is None else self.r_hi)

    def validate(self) -> None:
        errors = []
        if self.image_size < 16 or self.image_size % 16 != 0:
            errors.append(f"image_size must be a positive multiple of 16, "
                          f"got {self.image_size}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            errors.append(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            errors.append(f"epochs must be >= 0, got {self.epochs}")
        for name in ("lambda0", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0, got {getattr(self, name)}")
        r_lo, r_hi = self.radii()
        if not 0 <= r_lo <= r_hi:
            errors.append(f"radii must satisfy 0 <= r_lo <= r_hi, "
                          f"got [{r_lo}, {r_hi}]")
        errors.extend(self.augment.validate())
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["augment"]["crop_scale"] = list(self.augment.crop_scale)
        d["augment"]["jpeg_quality"] = list(self.augment.jpeg_quality)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "Config":
        obj = dict(obj)
        aug_obj = obj.pop("augment", {})
        known = {f.name for f in dataclasses.fields(cls)} - {"augment"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        aug_known = {f.name for f in dataclasses.fields(AugmentConfig)}
        aug_unknown = set(aug_obj) - aug_known
        if aug_unknown:
            raise ConfigError(f"unknown augment fields: {sorted(aug_unknown)}")
        for key in ("crop_scale", "jpeg_quality"):
            if key in aug_obj:
                aug_obj[key] = tuple(aug_obj[key])
        cfg = cls(**obj, augment=AugmentConfig(**aug_obj))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "Config":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in config {path}: {exc}")
        if not isinstance(obj, dict):
            raise ConfigError(f"config root must be a JSON object: {path}")
        return cls.from_dict(obj)
