"""Stacked-hourglass keypoint network.

The graph has three parts: a stem that brings the input down to heatmap
resolution, ``num_stacks - 1`` intermediate stages that each predict a
heatmap and feed it back into the trunk, and a final stage that only emits
its heatmap. Every stage's heatmap is returned so that all of them can be
supervised.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .heatmap import NUM_JOINTS

UPSAMPLE_MODES = ("nearest", "deconv")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_stacks: int = 8
    hourglass_order: int = 1
    channels: int = 256
    num_joints: int = NUM_JOINTS
    input_side: int = 256
    heatmap_side: int = 64
    upsample_mode: str = "deconv"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_stacks < 1:
            raise ModelError(f"num_stacks must be >= 1, got {self.num_stacks}")
        if self.hourglass_order < 1:
            raise ModelError(f"hourglass_order must be >= 1, got {self.hourglass_order}")
        if self.channels < 4 or self.channels % 4:
            raise ModelError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.num_joints < 1:
            raise ModelError(f"num_joints must be >= 1, got {self.num_joints}")
        if self.heatmap_side * 4 != self.input_side:
            raise ModelError(
                f"input_side ({self.input_side}) must be 4 x heatmap_side ({self.heatmap_side})"
            )
        if self.heatmap_side % (2 ** self.hourglass_order):
            raise ModelError(
                f"heatmap_side {self.heatmap_side} is not divisible by 2^{self.hourglass_order}"
            )
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ModelError(f"upsample_mode must be one of {UPSAMPLE_MODES}, got {self.upsample_mode!r}")

    @property
    def name(self) -> str:
        return f"sh{self.num_stacks}{self.hourglass_order}"

    @classmethod
    def from_name(cls, name: str, **overrides) -> "ModelConfig":
        """Parse variant names: ``sh81`` is 8 stacks of order 1."""
        if not (name.startswith("sh") and name[2:].isdigit() and len(name) >= 4):
            raise ModelError(f"cannot parse model name {name!r}; expected sh<stacks><order>")
        return cls(num_stacks=int(name[2:-1]), hourglass_order=int(name[-1]), **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in fields})

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class DeconvSpec:
    stride: int = 2
    kernel_size: int = 4
    padding: int = 1

    def __post_init__(self):
        if self.stride < 1 or self.kernel_size < 1 or self.padding < 0:
            raise ModelError(f"invalid deconvolution spec {self}")


UPSAMPLE_DECONV = DeconvSpec(stride=2, kernel_size=4, padding=1)


def deconv_output_size(input_size: int, spec: DeconvSpec) -> int:
    out = spec.stride * (input_size - 1) + spec.kernel_size - 2 * spec.padding
    if out <= 0:
        raise ModelError(f"transposed convolution of size {input_size} with {spec} has no output")
    return out


def _init_conv(conv: nn.Module) -> None:
    w = conv.weight
    if isinstance(conv, nn.ConvTranspose2d):
        in_ch, _, kh, kw = w.shape
        fan_in = in_ch * kh * kw / (conv.stride[0] * conv.stride[1])
    else:
        _, in_ch, kh, kw = w.shape
        fan_in = in_ch * kh * kw
    with torch.no_grad():
        w.normal_(0.0, math.sqrt(2.0 / fan_in))
        if conv.bias is not None:
            conv.bias.zero_()


def _conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1, bias: bool = False) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, bias=bias)
    _init_conv(conv)
    return conv


def _bn(ch: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(ch, eps=BN_EPS, momentum=BN_MOMENTUM)


class Residual(nn.Module):
    """Bottleneck residual unit (1x1 -> 3x3 -> 1x1) with a skip branch."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        if in_ch < 1 or out_ch < 2 or out_ch % 2:
            raise ModelError(f"residual block needs an even output width, got {in_ch}->{out_ch}")
        mid = out_ch // 2
        self.conv1 = _conv(in_ch, mid, 1)
        self.bn1 = _bn(mid)
        self.conv2 = _conv(mid, mid, 3)
        self.bn2 = _bn(mid)
        self.conv3 = _conv(mid, out_ch, 1)
        self.bn3 = _bn(out_ch)
        self.skip = nn.Identity() if in_ch == out_ch else _conv(in_ch, out_ch, 1, bias=True)

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        return F.relu(y + self.skip(x))


class Upsample2x(nn.Module):
    def __init__(self, channels: int, mode: str):
        super().__init__()
        if mode not in UPSAMPLE_MODES:
            raise ModelError(f"unknown upsample mode {mode!r}")
        self.mode = mode
        if mode == "deconv":
            s = UPSAMPLE_DECONV
            self.deconv = nn.ConvTranspose2d(channels, channels, s.kernel_size, stride=s.stride,
                                             padding=s.padding)
            _init_conv(self.deconv)

    def forward(self, x):
        if self.mode == "nearest":
            return F.interpolate(x, scale_factor=2, mode="nearest")
        return self.deconv(x)


class Hourglass(nn.Module):
    """Recursive hourglass; ``order`` is the number of 2x pooling levels."""

    def __init__(self, order: int, channels: int, upsample_mode: str = "deconv"):
        super().__init__()
        if order < 1:
            raise ModelError(f"hourglass order must be >= 1, got {order}")
        self.order = order
        self.up1 = Residual(channels, channels)
        self.low1 = Residual(channels, channels)
        self.low2 = Hourglass(order - 1, channels, upsample_mode) if order > 1 else Residual(channels, channels)
        self.low3 = Residual(channels, channels)
        self.up2 = Upsample2x(channels, upsample_mode)

    def forward(self, x):
        h, w = x.shape[-2:]
        step = 2 ** self.order
        if h % step or w % step:
            raise ModelError(f"hourglass of order {self.order} needs sides divisible by {step}, got {h}x{w}")
        skip = self.up1(x)
        low = self.low3(self.low2(self.low1(F.max_pool2d(x, 2))))
        return skip + self.up2(low)


class Stem(nn.Module):
    """Input -> 1/4 resolution features with ``channels`` channels."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 4:
            raise ModelError(f"stem channels must be a multiple of 4, got {channels}")
        c4, c2 = channels // 4, channels // 2
        self.conv = nn.Conv2d(3, c4, 7, stride=2, padding=3, bias=False)
        _init_conv(self.conv)
        self.bn = _bn(c4)
        self.res1 = Residual(c4, c2)
        self.res2 = Residual(c2, c2)
        self.res3 = Residual(c2, channels)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] % 4 or x.shape[3] % 4:
            raise ModelError(f"stem expects Bx3xHxW with sides divisible by 4, got {tuple(x.shape)}")
        x = F.relu(self.bn(self.conv(x)))
        x = self.res1(x)
        x = F.max_pool2d(x, 2)
        return self.res3(self.res2(x))


class StackStage(nn.Module):
    """One hourglass stage: features -> heatmap, plus feedback when not last."""

    def __init__(self, config: ModelConfig, is_last: bool):
        super().__init__()
        c, k = config.channels, config.num_joints
        self.is_last = is_last
        self.hourglass = Hourglass(config.hourglass_order, c, config.upsample_mode)
        self.residual = Residual(c, c)
        self.conv = _conv(c, c, 1)
        self.bn = _bn(c)
        self.head = _conv(c, k, 1, bias=True)
        if not is_last:
            self.remap_features = _conv(c, c, 1, bias=True)
            self.remap_heatmap = _conv(k, c, 1, bias=True)

    def forward(self, x):
        y = self.residual(self.hourglass(x))
        features = F.relu(self.bn(self.conv(y)))
        heatmap = self.head(features)
        if self.is_last:
            return heatmap, None
        return heatmap, x + self.remap_features(features) + self.remap_heatmap(heatmap)


class StackedHourglass(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.stem = Stem(config.channels)
        self.stages = nn.ModuleList(
            StackStage(config, is_last=(i == config.num_stacks - 1)) for i in range(config.num_stacks)
        )

    def forward(self, x) -> list:
        cfg = self.config
        if tuple(x.shape[1:]) != (3, cfg.input_side, cfg.input_side):
            raise ModelError(
                f"{cfg.name} expects Bx3x{cfg.input_side}x{cfg.input_side} input, got {tuple(x.shape)}"
            )
        x = self.stem(x)
        outputs = []
        for stage in self.stages:
            heatmap, x = stage(x)
            outputs.append(heatmap)
        return outputs


def build_residual_block(channels: int, out_channels: int | None = None) -> Residual:
    return Residual(channels, channels if out_channels is None else out_channels)


def build_hourglass(order: int, channels: int, upsample_mode: str = "deconv") -> Hourglass:
    return Hourglass(order, channels, upsample_mode)


def build_stem(channels: int = 256) -> Stem:
    return Stem(channels)


def build_stack_stage(config: ModelConfig, is_last: bool) -> StackStage:
    return StackStage(config, is_last)


def build_model(config: ModelConfig, seed: int | None = None, dtype=torch.float32) -> StackedHourglass:
    """Construct a freshly initialized network; ``seed`` makes it reproducible."""
    if seed is None:
        model = StackedHourglass(config)
    else:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = StackedHourglass(config)
    return model.to(dtype)


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack ImageBuffers (or an NxHxWxC array) into an NxCxHxW tensor."""
    if isinstance(images, torch.Tensor):
        return images.to(dtype)
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([im.data for im in images])
    if arr.ndim != 4:
        raise ModelError(f"expected a batch of HxWxC images, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def forward(model: StackedHourglass, images) -> list:
    """Evaluation-mode forward pass; one heatmap batch per stack."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    try:
        with torch.no_grad():
            return model(images_to_tensor(images, dtype))
    finally:
        model.train(was_training)


def count_parameters(model_or_tensors) -> int:
    """Number of trainable scalars in a model, or in a name->array mapping."""
    if isinstance(model_or_tensors, nn.Module):
        return sum(p.numel() for p in model_or_tensors.parameters())
    if hasattr(model_or_tensors, "tensors"):
        model_or_tensors = model_or_tensors.tensors
    return int(sum(np.asarray(v).size for v in _trainable_values(model_or_tensors)))


def _trainable_values(tensors: dict) -> Sequence:
    return [v for k, v in tensors.items() if not k.endswith(("running_mean", "running_var", "num_batches_tracked"))]
