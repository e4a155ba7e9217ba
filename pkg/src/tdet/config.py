"""Flat key=value run configuration with a closed key schema.

Files contain one ``key=value`` per line ('#' starts a comment); unknown
keys are rejected so typos fail loudly before any work starts. CLI flags
override file values, which override the defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import sha256_text
from .losses import LossConfig
from .turbulence import DegradeConfig


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    seed: int = 0

    gen_train_images: int = 400
    gen_test_images: int = 100
    gen_image_size: int = 64
    gen_min_size: float = 12.0
    gen_max_size: float = 32.0
    gen_max_objects: int = 3

    degrade_max_displacement: float = 2.5
    degrade_cell_size: int = 16
    degrade_psf_sigma_min: float = 0.4
    degrade_psf_sigma_max: float = 1.4
    degrade_psf_radius_min: float = 1.0
    degrade_psf_radius_max: float = 2.5
    degrade_noise_sigma: float = 0.02
    degrade_tile_size: int = 16

    model_deformable: bool = True
    model_fpn: bool = True
    model_num_classes: int = 3

    loss_alpha: float = 1.0
    loss_sigma: float = 3.0

    train_steps: int = 2000
    train_lr: float = 1e-4

    proposal_pre_nms: int = 300
    proposal_post_nms: int = 50
    proposal_nms_iou: float = 0.7

    detect_score_min: float = 0.05
    detect_nms_iou: float = 0.5
    detect_max_dets: int = 50

    eval_iou_thresh: float = 0.5
    eval_score_thresh: float = 0.5

    def degrade_config(self) -> DegradeConfig:
        return DegradeConfig(
            seed=self.seed,
            max_displacement=self.degrade_max_displacement,
            cell_size=self.degrade_cell_size,
            psf_sigma=(self.degrade_psf_sigma_min, self.degrade_psf_sigma_max),
            psf_radius=(self.degrade_psf_radius_min, self.degrade_psf_radius_max),
            noise_sigma=self.degrade_noise_sigma,
            tile_size=self.degrade_tile_size,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.loss_alpha, sigma=self.loss_sigma)

    def canonical_text(self) -> str:
        lines = [f"{_KEY_BY_ATTR[f.name]}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(sorted(lines)) + "\n"

    def config_hash(self) -> str:
        return sha256_text(self.canonical_text())


# File keys use dots for grouping; attributes use underscores.
_KEY_BY_ATTR = {f.name: f.name.replace("_", ".", 1) if "_" in f.name else f.name for f in fields(RunConfig)}
_ATTR_BY_KEY = {v: k for k, v in _KEY_BY_ATTR.items()}
_PARSERS = {bool: _parse_bool, int: lambda s: int(s, 0), float: float}


def parse_config_text(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        attr = _ATTR_BY_KEY.get(key)
        if attr is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        ftype = RunConfig.__dataclass_fields__[attr].type
        pytype = {"int": int, "float": float, "bool": bool}.get(str(ftype), str)
        try:
            setattr(cfg, attr, _PARSERS.get(pytype, str)(value))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), base, source=str(path))


def config_keys() -> list:
    return sorted(_ATTR_BY_KEY)
