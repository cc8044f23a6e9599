"""Two-stage convolutional backbone and hierarchical feature fusion.

The backbone produces a stride-16 map (stage16_channels) and a stride-32
map (stage32_channels). Fusion upsamples the deep map with a stride-2
transposed convolution, projects both maps to fused_channels with 1x1
convolutions and adds them element-wise, keeping stride-16 geometry.

Inputs whose extents are not multiples of 32 are zero-padded on the
bottom/right before entering the backbone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FusionShapeError, InputError
from .grid import Grid, add, conv2d, fan_in_uniform, relu, transposed_conv2d, zeros_param

STRIDE_16 = 16
STRIDE_32 = 32
PAD_MULTIPLE = 32
MIN_EXTENT = 32


@dataclass(frozen=True)
class BackboneConfig:
    stage16_channels: int = 64
    stage32_channels: int = 96
    fused_channels: int = 64
    blocks_per_stage: int = 2

    def __post_init__(self):
        for field in ("stage16_channels", "stage32_channels", "fused_channels", "blocks_per_stage"):
            if getattr(self, field) < 1:
                raise ConfigError("%s must be >= 1" % field)


@dataclass
class FusedFeature:
    """Stride-16 fused feature map plus the strides it was built from."""
    grid: Grid
    source_strides: tuple[int, int] = (STRIDE_16, STRIDE_32)


def feature_shape_for(extent: tuple[int, int]) -> tuple[int, int]:
    """Stride-16 map shape for an input extent, after pad-to-multiple-of-32."""
    h, w = int(extent[0]), int(extent[1])
    if h < 1 or w < 1:
        raise InputError("image extent %r is empty" % (extent,))
    hp = -(-h // PAD_MULTIPLE) * PAD_MULTIPLE
    wp = -(-w // PAD_MULTIPLE) * PAD_MULTIPLE
    return hp // STRIDE_16, wp // STRIDE_16


def pad_to_multiple(pixels: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Zero-pad a [H, W] image on the bottom/right to a multiple of `multiple`."""
    h, w = pixels.shape
    hp = -(-h // multiple) * multiple
    wp = -(-w // multiple) * multiple
    if (hp, wp) == (h, w):
        return pixels
    out = np.zeros((hp, wp), dtype=np.float64)
    out[:h, :w] = pixels
    return out


def _ramp_channels(s16: int) -> tuple[int, int, int]:
    c1 = max(4, s16 // 8)
    c2 = max(c1, s16 // 4)
    c3 = max(c2, s16 // 2)
    return c1, c2, c3


def init_backbone_params(config: BackboneConfig, rng: np.random.Generator,
                         in_channels: int = 1) -> dict[str, Grid]:
    c1, c2, c3 = _ramp_channels(config.stage16_channels)
    plan = [("down1", in_channels, c1), ("down2", c1, c2), ("down3", c2, c3),
            ("down4", c3, config.stage16_channels)]
    params: dict[str, Grid] = {}
    for name, cin, cout in plan:
        params["backbone/%s.w" % name] = fan_in_uniform(rng, (cout, cin, 3, 3), cin * 9)
        params["backbone/%s.b" % name] = zeros_param((cout,))
    for i in range(config.blocks_per_stage):
        c = config.stage16_channels
        params["backbone/s16.block%d.w" % i] = fan_in_uniform(rng, (c, c, 3, 3), c * 9)
        params["backbone/s16.block%d.b" % i] = zeros_param((c,))
    params["backbone/down5.w"] = fan_in_uniform(
        rng, (config.stage32_channels, config.stage16_channels, 3, 3), config.stage16_channels * 9)
    params["backbone/down5.b"] = zeros_param((config.stage32_channels,))
    for i in range(config.blocks_per_stage):
        c = config.stage32_channels
        params["backbone/s32.block%d.w" % i] = fan_in_uniform(rng, (c, c, 3, 3), c * 9)
        params["backbone/s32.block%d.b" % i] = zeros_param((c,))
    return params


def _res_block(x: Grid, w: Grid, b: Grid) -> Grid:
    return relu(add(x, conv2d(x, w, b, stride=1, pad=1)))


def backbone_forward(image: Grid, config: BackboneConfig,
                     params: dict[str, Grid]) -> tuple[Grid, Grid]:
    """Run the backbone; returns (stride-16 map, stride-32 map).

    The image grid must already be padded to a multiple of 32 (see
    pad_to_multiple); extents below 32 are rejected.
    """
    if image.data.ndim != 4:
        raise InputError("backbone_forward() expects [N, C, H, W], got %r" % (image.shape,))
    h, w = image.shape[2], image.shape[3]
    if h < MIN_EXTENT or w < MIN_EXTENT:
        raise InputError("input extent (%d, %d) below the minimum of 32" % (h, w))
    if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
        raise InputError("input extent (%d, %d) must be padded to a multiple of 32" % (h, w))

    x = image
    for name in ("down1", "down2", "down3", "down4"):
        x = relu(conv2d(x, params["backbone/%s.w" % name], params["backbone/%s.b" % name],
                        stride=2, pad=1))
    for i in range(config.blocks_per_stage):
        x = _res_block(x, params["backbone/s16.block%d.w" % i], params["backbone/s16.block%d.b" % i])
    f16 = x
    x = relu(conv2d(x, params["backbone/down5.w"], params["backbone/down5.b"], stride=2, pad=1))
    for i in range(config.blocks_per_stage):
        x = _res_block(x, params["backbone/s32.block%d.w" % i], params["backbone/s32.block%d.b" % i])
    return f16, x


def init_fusion_params(config: BackboneConfig, rng: np.random.Generator) -> dict[str, Grid]:
    s16, s32, fc = config.stage16_channels, config.stage32_channels, config.fused_channels
    up = np.zeros((s32, s32, 2, 2))
    for c in range(s32):
        up[c, c] = 1.0  # nearest-neighbour start, learnable afterwards
    return {
        "fusion/up.w": Grid(up, requires_grad=True),
        "fusion/p16.w": fan_in_uniform(rng, (fc, s16, 1, 1), s16),
        "fusion/p16.b": zeros_param((fc,)),
        "fusion/p32.w": fan_in_uniform(rng, (fc, s32, 1, 1), s32),
        "fusion/p32.b": zeros_param((fc,)),
    }


def fuse_hierarchy(f16: Grid, f32map: Grid, config: BackboneConfig,
                   params: dict[str, Grid]) -> FusedFeature:
    """conv1x1(f16) + conv1x1(upsample2x(f32map)), element-wise."""
    if f16.data.ndim != 4 or f32map.data.ndim != 4:
        raise FusionShapeError("fuse_hierarchy() expects 4-d grids")
    if (f16.shape[2], f16.shape[3]) != (2 * f32map.shape[2], 2 * f32map.shape[3]):
        raise FusionShapeError(
            "stride-16 map %r is not exactly twice the stride-32 map %r"
            % (f16.shape[2:], f32map.shape[2:]))
    up = transposed_conv2d(f32map, params["fusion/up.w"], stride=2)
    p16 = conv2d(f16, params["fusion/p16.w"], params["fusion/p16.b"])
    p32 = conv2d(up, params["fusion/p32.w"], params["fusion/p32.b"])
    return FusedFeature(grid=add(p16, p32))
