"""Run configuration: an INI file with sections, validated with named keys.

Defaults are the desk-scale preset (small models, 64x64 images) so the
whole pipeline runs in minutes on a laptop CPU. Every value can be
overridden per key in the config file or via CLI flags.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..errors import ValidationError
from ..imagereg import PadMode
from ..nn.models import Pix2PixConfig, UNetConfig


@dataclass
class StoppingConfig:
    max_steps: int = 1500
    patience: int = 10        # evaluations without improvement before stopping
    min_delta: float = 1e-4   # improvement threshold on the validation loss
    eval_every: int = 25      # steps between validation evaluations

    def validate(self, name: str) -> None:
        if self.max_steps < 0:
            raise ValidationError(f"{name}.max_steps must be >= 0")
        if self.patience < 1:
            raise ValidationError(f"{name}.patience must be >= 1")
        if self.eval_every < 1:
            raise ValidationError(f"{name}.eval_every must be >= 1")


@dataclass
class UNetTrainConfig:
    model: UNetConfig = field(default_factory=lambda: UNetConfig(
        in_channels=3, out_channels=3, base_width=8, depth=2, patch=32))
    batch_size: int = 64
    lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)


@dataclass
class Pix2PixTrainConfig:
    model: Pix2PixConfig = field(default_factory=Pix2PixConfig)
    # Desk-scale preset: the larger rate converges within a CPU budget;
    # set lr = 0.00002 to train with the full-scale setting.
    lr: float = 0.0002
    stopping: StoppingConfig = field(default_factory=lambda: StoppingConfig(
        max_steps=4000, eval_every=100))


@dataclass
class RunConfig:
    seed: int = 7
    out_dir: Path = Path("runs/default")
    msi_dir: Path = Path("data/msi")
    histology_dir: Path = Path("data/hist")
    control_points_dir: Path = Path("data/points")
    train_fraction: float = 0.70
    val_fraction: float = 0.10
    test_fraction: float = 0.20
    pad_mode: PadMode = PadMode.BLACK
    k_peaks: int = 50
    min_separation: float = 0.0
    bins_mi: int = 64
    image_size: int = 64
    unet: UNetTrainConfig = field(default_factory=UNetTrainConfig)
    pix2pix: Pix2PixTrainConfig = field(default_factory=Pix2PixTrainConfig)

    def validate(self) -> None:
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(
                f"data.train/val/test fractions sum to {total}, expected 1.0"
            )
        for name in ("train_fraction", "val_fraction", "test_fraction"):
            if getattr(self, name) < 0:
                raise ValidationError(f"data.{name} must be >= 0")
        if self.k_peaks < 1:
            raise ValidationError("data.k_peaks must be >= 1")
        if self.min_separation < 0:
            raise ValidationError("data.min_separation must be >= 0")
        if self.bins_mi < 2:
            raise ValidationError("metrics.bins_mi must be >= 2")
        if self.image_size < 8:
            raise ValidationError("data.image_size must be >= 8")
        self.unet.model.validate()
        self.pix2pix.model.image_size = self.image_size
        self.pix2pix.model.gen.patch = self.image_size
        self.pix2pix.model.validate()
        self.unet.stopping.validate("unet")
        self.pix2pix.stopping.validate("pix2pix")
        if self.unet.batch_size < 1:
            raise ValidationError("unet.batch_size must be >= 1")


_SCHEMA = {
    "run": {"seed": int, "out_dir": str},
    "data": {
        "msi_dir": str,
        "histology_dir": str,
        "control_points_dir": str,
        "train_fraction": float,
        "val_fraction": float,
        "test_fraction": float,
        "pad_mode": str,
        "k_peaks": int,
        "min_separation": float,
        "image_size": int,
    },
    "metrics": {"bins_mi": int},
    "unet": {
        "depth": int,
        "base_width": int,
        "patch": int,
        "batch_size": int,
        "lr": float,
        "max_steps": int,
        "patience": int,
        "min_delta": float,
        "eval_every": int,
    },
    "pix2pix": {
        "depth": int,
        "base_width": int,
        "disc_layers": int,
        "disc_width": int,
        "lr": float,
        "lambda_l1": float,
        "beta1": float,
        "beta2": float,
        "max_steps": int,
        "patience": int,
        "min_delta": float,
        "eval_every": int,
    },
}


def _parse_value(section: str, key: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(
            f"config key [{section}] {key}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an INI file plus CLI overrides.

    Unknown sections or keys are rejected by name.
    """
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ValidationError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ValidationError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ValidationError(f"unknown config key [{section}] {key}")
                value = _parse_value(section, key, raw, _SCHEMA[section][key])
                _apply(cfg, section, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        _apply_override(cfg, key, value)
    cfg.validate()
    return cfg


def _apply(cfg: RunConfig, section: str, key: str, value) -> None:
    if section == "run":
        if key == "seed":
            cfg.seed = value
        elif key == "out_dir":
            cfg.out_dir = Path(value)
    elif section == "data":
        if key == "pad_mode":
            cfg.pad_mode = PadMode.parse(value)
        elif key in ("msi_dir", "histology_dir", "control_points_dir"):
            setattr(cfg, key, Path(value))
        else:
            setattr(cfg, key, value)
    elif section == "metrics":
        cfg.bins_mi = value
    elif section == "unet":
        if key in ("depth", "base_width", "patch"):
            setattr(cfg.unet.model, key, value)
        elif key in ("batch_size", "lr"):
            setattr(cfg.unet, key, value)
        else:
            setattr(cfg.unet.stopping, key, value)
    elif section == "pix2pix":
        if key in ("depth", "base_width"):
            setattr(cfg.pix2pix.model.gen, key, value)
        elif key in ("disc_layers", "disc_width", "lambda_l1"):
            setattr(cfg.pix2pix.model, key, value)
        elif key == "beta1":
            cfg.pix2pix.model.betas = (value, cfg.pix2pix.model.betas[1])
        elif key == "beta2":
            cfg.pix2pix.model.betas = (cfg.pix2pix.model.betas[0], value)
        elif key == "lr":
            cfg.pix2pix.lr = value
        else:
            setattr(cfg.pix2pix.stopping, key, value)


def _apply_override(cfg: RunConfig, key: str, value) -> None:
    if key == "seed":
        cfg.seed = int(value)
    elif key == "pad":
        cfg.pad_mode = PadMode.parse(value)
    elif key == "k_peaks":
        cfg.k_peaks = int(value)
    elif key == "out":
        cfg.out_dir = Path(value)
    else:
        raise ValidationError(f"unknown override {key}")


def config_echo(cfg: RunConfig) -> dict:
    """JSON-serializable snapshot of a config (stored in checkpoints)."""
    return {
        "seed": cfg.seed,
        "pad_mode": cfg.pad_mode.value,
        "k_peaks": cfg.k_peaks,
        "bins_mi": cfg.bins_mi,
        "image_size": cfg.image_size,
        "unet": {
            "in_channels": cfg.unet.model.in_channels,
            "out_channels": cfg.unet.model.out_channels,
            "base_width": cfg.unet.model.base_width,
            "depth": cfg.unet.model.depth,
            "patch": cfg.unet.model.patch,
            "batch_size": cfg.unet.batch_size,
            "lr": cfg.unet.lr,
        },
        "pix2pix": {
            "image_size": cfg.pix2pix.model.image_size,
            "lambda_l1": cfg.pix2pix.model.lambda_l1,
            "lr": cfg.pix2pix.lr,
            "betas": list(cfg.pix2pix.model.betas),
            "gen_depth": cfg.pix2pix.model.gen.depth,
            "gen_base_width": cfg.pix2pix.model.gen.base_width,
            "disc_layers": cfg.pix2pix.model.disc_layers,
            "disc_width": cfg.pix2pix.model.disc_width,
        },
    }
