"""How an image becomes the fused feature map the proposal head reads.

Walks the shape contract: pad to a multiple of 32, run the two-stride
backbone, project both maps to a common width and add them. Ends by
provoking the shape error that guards the fusion.

Run: python3 demos/feature_pyramid_shapes.py
"""

import numpy as np

from slicedet.errors import FusionShapeError
from slicedet.features import (BackboneConfig, backbone_forward, feature_shape_for,
                               fuse_hierarchy, init_backbone_params, init_fusion_params,
                               pad_to_multiple)
from slicedet.grid import Grid

config = BackboneConfig(stage16_channels=12, stage32_channels=16, fused_channels=12,
                        blocks_per_stage=1)
rng = np.random.default_rng(4)
params = init_backbone_params(config, rng)
params.update(init_fusion_params(config, rng))

image = rng.uniform(0.1, 0.9, size=(100, 130))
padded = pad_to_multiple(image, 32)
print("input %s  padded %s  feature grid %s"
      % (image.shape, padded.shape, feature_shape_for(image.shape)))

batch = Grid(padded[None, None])
f16, f32 = backbone_forward(batch, config, params)
fused = fuse_hierarchy(f16, f32, config, params)
print("stride 16 map %s" % (f16.shape,))
print("stride 32 map %s" % (f32.shape,))
print("fused map     %s  (one column of cells per 16 px of width)" % (fused.grid.shape,))

# the stride-32 map must be exactly half the stride-16 map in each axis;
# anything else means the two views describe different images
try:
    fuse_hierarchy(f16, Grid(np.zeros((1, config.stage32_channels, 2, 3))), config, params)
except FusionShapeError as exc:
    print("mismatched fusion rejected: %s" % exc)
