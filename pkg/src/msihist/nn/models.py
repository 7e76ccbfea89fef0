"""Image translation models built on the autodiff engine.

UNet: encoder/decoder with skip connections; 3x3 convolutions, 2x2 max
pooling on the way down, 2x2 stride-2 transposed convolutions on the way
up, optional per-layer instance normalization (used by the adversarial
generator, not by the plain baseline), sigmoid output.

PatchGAN: convolutional discriminator emitting a grid of real/fake
logits; each logit judges a bounded patch of the (condition, image) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from . import ops
from .tensor import Tensor

INIT_STD = 0.02


@dataclass
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 3
    base_width: int = 8
    depth: int = 2
    final_activation: str = "sigmoid"
    patch: int = 32
    instance_norm: bool = False

    def validate(self) -> None:
        if self.final_activation != "sigmoid":
            raise ValidationError("final_activation must be 'sigmoid'")
        if self.depth < 1:
            raise ValidationError("depth must be >= 1")
        if self.base_width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError("channel counts must be positive")
        if self.patch % (1 << self.depth):
            raise ValidationError(
                f"input size {self.patch} not divisible by 2^depth = {1 << self.depth}"
            )


@dataclass
class Pix2PixConfig:
    image_size: int = 64
    lambda_l1: float = 200.0
    lr: float = 0.00002
    betas: tuple[float, float] = (0.5, 0.999)
    gen: UNetConfig = field(default_factory=lambda: UNetConfig(
        depth=3, base_width=8, patch=64, instance_norm=True))
    disc_layers: int = 2
    disc_width: int = 8

    def validate(self) -> None:
        if self.lambda_l1 < 0:
            raise ValidationError("lambda_l1 must be >= 0")
        if self.image_size % (1 << self.gen.depth):
            raise ValidationError(
                f"image size {self.image_size} not divisible by 2^depth = {1 << self.gen.depth}"
            )
        if self.disc_layers < 1:
            raise ValidationError("disc_layers must be >= 1")
        self.gen.validate()


def _init_conv(rng: np.random.Generator, f: int, c: int, kh: int, kw: int) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, size=(f, c, kh, kw)), requires_grad=True)


def _init_convt(rng: np.random.Generator, cin: int, cout: int, kh: int, kw: int) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, size=(cin, cout, kh, kw)), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class _Module:
    """Named parameter registry shared by the models."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name}")
        self._params[name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ValidationError(
                f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, arr in values.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ValidationError(
                    f"parameter {name} shape {arr.shape} != {p.data.shape}"
                )
            p.data = np.asarray(arr, dtype=np.float64).copy()


class _ConvBlock:
    """conv3x3 (pad 1) -> optional instance norm -> relu."""

    def __init__(self, module: _Module, name: str, cin: int, cout: int,
                 norm: bool, rng: np.random.Generator):
        self.w = module._register(f"{name}.w", _init_conv(rng, cout, cin, 3, 3))
        self.b = module._register(f"{name}.b", _zeros(cout))
        self.norm = norm
        if norm:
            self.gamma = module._register(f"{name}.gamma", _ones(cout))
            self.beta = module._register(f"{name}.beta", _zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.w, self.b, stride=1, pad=1)
        if self.norm:
            y = ops.instance_norm(y, self.gamma, self.beta)
        return ops.relu(y)


class UNet(_Module):
    def __init__(self, cfg: UNetConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        norm = cfg.instance_norm
        w0 = cfg.base_width

        self.enc: list[tuple[_ConvBlock, _ConvBlock]] = []
        cin = cfg.in_channels
        for lvl in range(cfg.depth):
            cout = w0 << lvl
            self.enc.append((
                _ConvBlock(self, f"enc{lvl}.conv1", cin, cout, norm, rng),
                _ConvBlock(self, f"enc{lvl}.conv2", cout, cout, norm, rng),
            ))
            cin = cout

        cbot = w0 << cfg.depth
        self.bottleneck = (
            _ConvBlock(self, "bottleneck.conv1", cin, cbot, norm, rng),
            _ConvBlock(self, "bottleneck.conv2", cbot, cbot, norm, rng),
        )

        self.dec: list[tuple[Tensor, Tensor, _ConvBlock, _ConvBlock]] = []
        cin = cbot
        for lvl in reversed(range(cfg.depth)):
            cskip = w0 << lvl
            up_w = self._register(f"dec{lvl}.up.w", _init_convt(rng, cin, cskip, 2, 2))
            up_b = self._register(f"dec{lvl}.up.b", _zeros(cskip))
            self.dec.append((
                up_w, up_b,
                _ConvBlock(self, f"dec{lvl}.conv1", cskip * 2, cskip, norm, rng),
                _ConvBlock(self, f"dec{lvl}.conv2", cskip, cskip, norm, rng),
            ))
            cin = cskip

        self.out_w = self._register("out.w", _init_conv(rng, cfg.out_channels, w0, 1, 1))
        self.out_b = self._register("out.b", _zeros(cfg.out_channels))

    def forward(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        if t.ndim != 4 or t.shape[1] != self.cfg.in_channels:
            raise ValidationError(
                f"expected (N,{self.cfg.in_channels},H,W) input, got {t.shape}"
            )
        div = 1 << self.cfg.depth
        if t.shape[2] % div or t.shape[3] % div:
            raise ValidationError(
                f"input spatial dims {t.shape[2]}x{t.shape[3]} not divisible by {div}"
            )
        skips = []
        for conv1, conv2 in self.enc:
            t = conv2(conv1(t))
            skips.append(t)
            t = ops.max_pool2d(t, 2)
        t = self.bottleneck[1](self.bottleneck[0](t))
        for (up_w, up_b, conv1, conv2), skip in zip(self.dec, reversed(skips)):
            t = ops.conv_transpose2d(t, up_w, up_b, stride=2, pad=0)
            t = conv2(conv1(ops.concat([skip, t], axis=1)))
        t = ops.conv2d(t, self.out_w, self.out_b, stride=1, pad=0)
        return ops.sigmoid(t)


class PatchGAN(_Module):
    """Discriminator over channel-concatenated (condition, image) pairs."""

    def __init__(self, in_channels: int, base_width: int, n_layers: int,
                 rng: np.random.Generator):
        super().__init__()
        if n_layers < 1:
            raise ValidationError("PatchGAN needs at least one stride-2 layer")
        self.in_channels = in_channels
        self.layers: list[dict] = []

        cin = in_channels
        width = base_width
        for i in range(n_layers):
            layer = {
                "w": self._register(f"d{i}.w", _init_conv(rng, width, cin, 4, 4)),
                "b": self._register(f"d{i}.b", _zeros(width)),
                "stride": 2,
                "norm": i > 0,  # first layer keeps raw image statistics
            }
            if layer["norm"]:
                layer["gamma"] = self._register(f"d{i}.gamma", _ones(width))
                layer["beta"] = self._register(f"d{i}.beta", _zeros(width))
            self.layers.append(layer)
            cin = width
            width *= 2

        layer = {
            "w": self._register("pre.w", _init_conv(rng, width, cin, 4, 4)),
            "b": self._register("pre.b", _zeros(width)),
            "stride": 1,
            "norm": True,
            "gamma": self._register("pre.gamma", _ones(width)),
            "beta": self._register("pre.beta", _zeros(width)),
        }
        self.layers.append(layer)
        self.final_w = self._register("final.w", _init_conv(rng, 1, width, 4, 4))
        self.final_b = self._register("final.b", _zeros(1))

    def forward(self, condition, image) -> Tensor:
        c = condition if isinstance(condition, Tensor) else Tensor(condition)
        im = image if isinstance(image, Tensor) else Tensor(image)
        if c.shape[0] != im.shape[0] or c.shape[2:] != im.shape[2:]:
            raise ValidationError(
                f"condition {c.shape} and image {im.shape} do not align"
            )
        if c.shape[1] + im.shape[1] != self.in_channels:
            raise ValidationError(
                f"expected {self.in_channels} total channels, got {c.shape[1] + im.shape[1]}"
            )
        t = ops.concat([c, im], axis=1)
        for layer in self.layers:
            t = ops.conv2d(t, layer["w"], layer["b"], stride=layer["stride"], pad=1)
            if layer["norm"]:
                t = ops.instance_norm(t, layer["gamma"], layer["beta"])
            t = ops.leaky_relu(t, 0.2)
        return ops.conv2d(t, self.final_w, self.final_b, stride=1, pad=1)
