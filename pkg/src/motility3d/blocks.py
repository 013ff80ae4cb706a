"""Residual building blocks: preparation stem, basic residual block,
downsampling unit, and stage assembly.

A basic residual block is relu(bn2(conv2(relu(bn1(conv1(x))))) + x) with
3x3x3 kernels, stride 1, padding 1. A downsampling unit strides its first
convolution by 2 on all three axes and doubles the channel count; its
shortcut is a 1x1x1 stride-2 convolution followed by batch norm. The final
relu always follows the residual addition (post-activation ordering).

Weight initialization is the seeded scaled-normal scheme
std = sqrt(2 / fan_in); batch-norm gamma starts at 1, beta at 0.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import GeometryError
from .ops import BatchNormState
from .tensor import Tensor

STAGE_CHANNELS = (64, 128, 256, 512)


def he_normal(rng, shape, fan_in, dtype):
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.normal(0.0, std, size=shape)).astype(dtype), requires_grad=True)


def conv_weight(rng, out_ch, in_ch, kernel, dtype):
    kt, kh, kw = kernel
    return he_normal(rng, (out_ch, in_ch, kt, kh, kw), in_ch * kt * kh * kw, dtype)


@dataclass(frozen=True)
class StageSpec:
    """One network stage: how many units, their width, and whether the
    first unit downsamples (stride 2 on all three axes)."""

    block_count: int
    out_channels: int
    downsample: bool

    def __post_init__(self):
        if self.block_count < 1:
            raise GeometryError(f"stage block_count must be >= 1, got {self.block_count}")
        if self.out_channels not in STAGE_CHANNELS:
            raise GeometryError(
                f"stage out_channels must be one of {STAGE_CHANNELS}, got {self.out_channels}"
            )


class PrepParams:
    """Stem parameters: 7x7x7 convolution (1 -> 64 channels) + batch norm."""

    __slots__ = ("conv", "bn")

    def __init__(self, conv, bn):
        if conv.shape[1] != 1 or conv.shape[2:] != (7, 7, 7):
            raise GeometryError(f"prep conv must have shape (64,1,7,7,7), got {conv.shape}")
        self.conv = conv
        self.bn = bn

    @classmethod
    def create(cls, rng, dtype=np.float32):
        return cls(conv_weight(rng, 64, 1, (7, 7, 7), dtype), BatchNormState.create(64, dtype))

    def named_parameters(self, prefix):
        yield f"{prefix}.conv.weight", self.conv
        yield f"{prefix}.bn.gamma", self.bn.gamma
        yield f"{prefix}.bn.beta", self.bn.beta

    def named_buffers(self, prefix):
        yield f"{prefix}.bn.running_mean", self.bn.running_mean
        yield f"{prefix}.bn.running_var", self.bn.running_var


class BlockParams:
    """Parameters of one residual unit.

    The shortcut pair is present exactly when the unit downsamples
    (stride 2, channel doubling); identity units carry no shortcut.
    """

    __slots__ = ("conv1", "bn1", "conv2", "bn2", "shortcut_conv", "shortcut_bn", "stride")

    def __init__(self, conv1, bn1, conv2, bn2, shortcut_conv=None, shortcut_bn=None):
        out_ch, in_ch = conv1.shape[0], conv1.shape[1]
        if conv1.shape[2:] != (3, 3, 3) or conv2.shape[2:] != (3, 3, 3):
            raise GeometryError("residual unit convolutions must use 3x3x3 kernels")
        if conv2.shape[0] != out_ch or conv2.shape[1] != out_ch:
            raise GeometryError(
                f"conv2 must map {out_ch}->{out_ch} channels, got shape {conv2.shape}"
            )
        downsample = in_ch != out_ch
        if downsample and (shortcut_conv is None or shortcut_bn is None):
            raise GeometryError("channel-changing residual unit requires a shortcut")
        if not downsample and shortcut_conv is not None:
            raise GeometryError("identity residual unit must not carry a shortcut")
        if shortcut_conv is not None and shortcut_conv.shape != (out_ch, in_ch, 1, 1, 1):
            raise GeometryError(
                f"shortcut conv must have shape ({out_ch},{in_ch},1,1,1), "
                f"got {shortcut_conv.shape}"
            )
        self.conv1 = conv1
        self.bn1 = bn1
        self.conv2 = conv2
        self.bn2 = bn2
        self.shortcut_conv = shortcut_conv
        self.shortcut_bn = shortcut_bn
        self.stride = 2 if downsample else 1

    @classmethod
    def create(cls, rng, in_ch, out_ch, dtype=np.float32):
        conv1 = conv_weight(rng, out_ch, in_ch, (3, 3, 3), dtype)
        conv2 = conv_weight(rng, out_ch, out_ch, (3, 3, 3), dtype)
        if in_ch == out_ch:
            return cls(conv1, BatchNormState.create(out_ch, dtype), conv2,
                       BatchNormState.create(out_ch, dtype))
        sc = conv_weight(rng, out_ch, in_ch, (1, 1, 1), dtype)
        return cls(conv1, BatchNormState.create(out_ch, dtype), conv2,
                   BatchNormState.create(out_ch, dtype), sc, BatchNormState.create(out_ch, dtype))

    @property
    def downsamples(self):
        return self.shortcut_conv is not None

    def named_parameters(self, prefix):
        yield f"{prefix}.conv1.weight", self.conv1
        yield f"{prefix}.bn1.gamma", self.bn1.gamma
        yield f"{prefix}.bn1.beta", self.bn1.beta
        yield f"{prefix}.conv2.weight", self.conv2
        yield f"{prefix}.bn2.gamma", self.bn2.gamma
        yield f"{prefix}.bn2.beta", self.bn2.beta
        if self.shortcut_conv is not None:
            yield f"{prefix}.shortcut.conv.weight", self.shortcut_conv
            yield f"{prefix}.shortcut.bn.gamma", self.shortcut_bn.gamma
            yield f"{prefix}.shortcut.bn.beta", self.shortcut_bn.beta

    def named_buffers(self, prefix):
        yield f"{prefix}.bn1.running_mean", self.bn1.running_mean
        yield f"{prefix}.bn1.running_var", self.bn1.running_var
        yield f"{prefix}.bn2.running_mean", self.bn2.running_mean
        yield f"{prefix}.bn2.running_var", self.bn2.running_var
        if self.shortcut_bn is not None:
            yield f"{prefix}.shortcut.bn.running_mean", self.shortcut_bn.running_mean
            yield f"{prefix}.shortcut.bn.running_var", self.shortcut_bn.running_var


def prep_block(x, params, training):
    """Stem forward: 7x7x7 conv, stride (1,2,2), pad 3 -> bn -> relu ->
    3x3x3 max pool, stride 2, pad 1."""
    if x.shape[1] != 1:
        raise GeometryError(f"prep block expects 1 input channel, got {x.shape[1]}")
    h = ops.conv3d(x, params.conv, stride=(1, 2, 2), padding=(3, 3, 3))
    h = ops.batchnorm3d(h, params.bn, training)
    h = ops.relu(h)
    return ops.maxpool3d(h, kernel=(3, 3, 3), stride=(2, 2, 2), padding=(1, 1, 1))


def _main_path(x, params, training):
    h = ops.conv3d(x, params.conv1, stride=params.stride, padding=1)
    h = ops.batchnorm3d(h, params.bn1, training)
    h = ops.relu(h)
    h = ops.conv3d(h, params.conv2, stride=1, padding=1)
    return ops.batchnorm3d(h, params.bn2, training)


def basic_residual_block(x, params, training):
    """Identity-shortcut unit: relu(main(x) + x); shape preserved."""
    if params.downsamples:
        raise GeometryError("basic residual block called with downsampling parameters")
    if x.shape[1] != params.conv1.shape[1]:
        raise GeometryError(
            f"residual unit expects {params.conv1.shape[1]} channels, got {x.shape[1]}"
        )
    return ops.relu(ops.add(_main_path(x, params, training), x))


def downsample_unit(x, params, training):
    """Stride-2, channel-doubling unit: relu(main(x) + projection(x))."""
    if not params.downsamples:
        raise GeometryError("downsample unit called without shortcut parameters")
    if x.shape[1] != params.conv1.shape[1]:
        raise GeometryError(
            f"residual unit expects {params.conv1.shape[1]} channels, got {x.shape[1]}"
        )
    main = _main_path(x, params, training)
    short = ops.conv3d(x, params.shortcut_conv, stride=2, padding=0)
    short = ops.batchnorm3d(short, params.shortcut_bn, training)
    return ops.relu(ops.add(main, short))


def residual_unit(x, params, training):
    if params.downsamples:
        return downsample_unit(x, params, training)
    return basic_residual_block(x, params, training)


def make_stage(spec, in_channels, rng, dtype=np.float32):
    """Build the ordered unit list for one stage.

    With ``spec.downsample`` the first unit projects in_channels ->
    out_channels at stride 2 and the rest are identity units; otherwise
    in_channels must already equal out_channels.
    """
    if spec.downsample:
        if spec.out_channels != 2 * in_channels:
            raise GeometryError(
                f"downsampling stage must double channels, got "
                f"{in_channels}->{spec.out_channels}"
            )
    elif spec.out_channels != in_channels:
        raise GeometryError(
            f"non-downsampling stage must preserve channels, got "
            f"{in_channels}->{spec.out_channels}"
        )
    units = []
    ch = in_channels
    for _ in range(spec.block_count):
        units.append(BlockParams.create(rng, ch, spec.out_channels, dtype))
        ch = spec.out_channels
    return units


def stage_forward(x, units, training):
    for unit in units:
        x = residual_unit(x, unit, training)
    return x
