"""Full detector: parameter groups, two-stage training, and detection.

Stage one trains the backbone, the fusion block and the proposal head
while the box-refinement head is frozen (learning rate 0). Stage two
freezes everything except the refinement head and trains it on jittered
ground-truth line boxes. Frozen groups are skipped by the optimizer, so
their bytes never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SceneSample, apply_scale_rule, resize_image, scale_boxes
from .errors import ConfigError, IngestionError, UsageError
from .features import (BackboneConfig, FusedFeature, backbone_forward, feature_shape_for,
                       fuse_hierarchy, init_backbone_params, init_fusion_params, pad_to_multiple)
from .grid import Grid, Tape, add, backward, recording, scale
from .modelio import load_params, save_model, serialize_params
from .optim import ParamGroup, SgdOptimizer
from .proposals import (AnchorConfig, LabelAssignment, RpnConfig, assign_labels,
                        decode_proposals, derive_space_boxes, init_rpn_params, rpn_forward,
                        rpn_loss, sample_minibatch, slice_words)
from .textlines import (RegressionConfig, TextLine, connect_proposals, decode_xw, encode_xw,
                        init_regression_params, line_regression_loss, pooled_line_vector,
                        regression_forward)

GROUPS = {
    "backbone": "backbone/",
    "fusion": "fusion/",
    "rpn_heads": "rpn/",
    "regression_head": "regress/",
}


@dataclass(frozen=True)
class PipelineConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    rpn: RpnConfig = field(default_factory=RpnConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    score_threshold: float = 0.7
    connect_max_gap: float = 50.0
    connect_min_overlap: float = 0.7
    scale_limits: tuple[int, int] = (600, 1000)
    seed: int = 7
    batch_size: int = 128
    momentum: float = 0.9
    stage1_lr: float = 0.02
    stage2_lr: float = 0.001
    stage1_epochs: int = 12
    stage2_epochs: int = 80
    reg_lambda: float = 1.0
    jitter_expand: float = 0.15
    jitter_shrink: float = 0.08


@dataclass
class TextDetector:
    config: PipelineConfig
    params: dict[str, Grid]

    def group_params(self, group: str) -> dict[str, Grid]:
        prefix = GROUPS[group]
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def param_groups(self, lrs: dict[str, float]) -> list[ParamGroup]:
        unknown = set(lrs) - set(GROUPS)
        if unknown:
            raise ConfigError("unknown parameter groups: %r" % sorted(unknown))
        return [ParamGroup(name, self.group_params(name), lr) for name, lr in sorted(lrs.items())]

    def group_bytes(self, group: str) -> bytes:
        return serialize_params(self.group_params(group))


def build_detector(config: PipelineConfig | None = None, seed: int | None = None) -> TextDetector:
    config = config or PipelineConfig()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, Grid] = {}
    params.update(init_backbone_params(config.backbone, rng))
    params.update(init_fusion_params(config.backbone, rng))
    params.update(init_rpn_params(config.backbone.fused_channels, len(config.anchors.heights),
                                  config.rpn, rng))
    params.update(init_regression_params(config.backbone.fused_channels, config.regression, rng))
    for name, p in params.items():
        p.name = name
    return TextDetector(config=config, params=params)


def save_detector(detector: TextDetector, path) -> None:
    save_model(path, detector.params)


def load_detector(path, config: PipelineConfig | None = None) -> TextDetector:
    """Rebuild a detector from a model file; shapes must match the config."""
    detector = build_detector(config or PipelineConfig())
    loaded = load_params(path)
    if set(loaded) != set(detector.params):
        missing = sorted(set(detector.params) - set(loaded))
        extra = sorted(set(loaded) - set(detector.params))
        raise IngestionError("model file does not match the configuration "
                             "(missing %r, unexpected %r)" % (missing[:3], extra[:3]))
    for name, vals in loaded.items():
        want = detector.params[name].data.shape
        if vals.shape != want:
            raise IngestionError("parameter %s has shape %r, expected %r"
                                 % (name, vals.shape, want))
        detector.params[name].data = np.ascontiguousarray(vals)
        detector.params[name].zero_grad()
    return detector


def forward_fused(detector: TextDetector, pixels: np.ndarray) -> FusedFeature:
    """Scale-rule-independent forward: pad, run backbone, fuse."""
    padded = pad_to_multiple(pixels)
    image = Grid(padded[None, None])
    f16, f32map = backbone_forward(image, detector.config.backbone, detector.params)
    return fuse_hierarchy(f16, f32map, detector.config.backbone, detector.params)


# ---------------------------------------------------------------------------
# training


def _prepare_sample(sample: SceneSample, config: PipelineConfig):
    """Resize by the scale rule and compute anchors' label assignment."""
    pixels = sample.pixels
    factor, new_extent = apply_scale_rule(pixels.shape, config.scale_limits)
    if factor < 1.0:
        pixels = resize_image(pixels, new_extent)
    boxes = scale_boxes(sample.words, factor)
    extent = feature_shape_for(pixels.shape)
    slices = slice_words(boxes)
    spaces = derive_space_boxes(boxes)
    assignment = assign_labels(extent, slices, spaces, config.anchors)
    return pixels, boxes, assignment


def _epoch_order(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.permutation(n)


def train_stage1(detector: TextDetector, samples: list[SceneSample],
                 progress=None) -> list[float]:
    """Train backbone + fusion + proposal head; refinement head frozen."""
    if not samples:
        raise ConfigError("training corpus is empty")
    cfg = detector.config
    groups = detector.param_groups({
        "backbone": cfg.stage1_lr,
        "fusion": cfg.stage1_lr,
        "rpn_heads": cfg.stage1_lr,
        "regression_head": 0.0,
    })
    opt = SgdOptimizer(groups, momentum=cfg.momentum)
    prepared = [_prepare_sample(s, cfg) for s in samples]
    order_rng = np.random.default_rng([cfg.seed, 101])
    losses: list[float] = []
    for epoch in range(cfg.stage1_epochs):
        total = 0.0
        for idx in _epoch_order(order_rng, len(prepared)):
            pixels, _, assignment = prepared[idx]
            sample_idx = sample_minibatch(assignment, cfg.batch_size,
                                          seed=[cfg.seed, 11, epoch, int(idx)])
            tape = Tape()
            with recording(tape):
                fused = forward_fused(detector, pixels)
                out = rpn_forward(fused, detector.params, cfg.rpn)
                loss = rpn_loss(out, assignment, sample_idx, cfg.reg_lambda)
            backward(loss, tape)
            opt.step()
            opt.zero_grad()
            total += loss.item()
        losses.append(total / len(prepared))
        if progress is not None:
            progress(len(losses) - 1, losses[-1])
    return losses


def _jitter_box(rng: np.random.Generator, box, cfg: PipelineConfig):
    """A plausible assembled-line box for a ground-truth word.

    Assembly produces the word's 16 px cell cover, occasionally one cell
    wider (a sliver cell fired) or narrower (an edge cell missed), so the
    training boxes are built the same way: grid-snapped with per-edge noise.
    """
    left = int(np.floor(box[0] / 16.0))
    right = int(np.ceil(box[2] / 16.0))
    for side in (0, 1):
        if right - left <= 1:
            break
        u = rng.random()
        delta = 1 if u < cfg.jitter_expand else (-1 if u > 1.0 - cfg.jitter_shrink else 0)
        if side == 0:
            left = max(0, left - delta)
        else:
            right += delta
    return (16.0 * left, box[1], 16.0 * right, box[3])


def _calibrate_norm(detector: TextDetector, cached, cfg: PipelineConfig) -> None:
    """Fit the refinement head's input standardization constants.

    The pooled feature vector has a large mean component and per-dimension
    scales spanning several orders of magnitude; plain SGD cannot cope with
    that conditioning. Upstream groups are frozen during stage two, so the
    statistics can be measured once, on jittered boxes drawn the same way
    the training loop draws them, and stored as non-learned parameters.
    """
    rng = np.random.default_rng([cfg.seed, 33])
    rows = []
    for fused, boxes in cached:
        for box in boxes:
            for _ in range(3):
                prop = _jitter_box(rng, box, cfg)
                rows.append(pooled_line_vector(fused, prop, cfg.regression).data[0])
    if not rows:
        raise ConfigError("no ground-truth boxes to calibrate the refinement head on")
    mat = np.asarray(rows)
    detector.params["regress/norm.mu"].data[...] = mat.mean(axis=0)[None]
    detector.params["regress/norm.nu"].data[...] = 1.0 / (mat.std(axis=0)[None] + 1e-6)


def train_stage2(detector: TextDetector, samples: list[SceneSample],
                 progress=None, epoch_offset: int = 0) -> list[float]:
    """Train only the refinement head on jittered ground-truth line boxes."""
    if not samples:
        raise ConfigError("training corpus is empty")
    cfg = detector.config
    groups = detector.param_groups({
        "backbone": 0.0,
        "fusion": 0.0,
        "rpn_heads": 0.0,
        "regression_head": cfg.stage2_lr,
    })
    opt = SgdOptimizer(groups, momentum=cfg.momentum)

    cached = []  # frozen upstream => fused features are constants per image
    for s in samples:
        pixels, boxes, _ = _prepare_sample(s, cfg)
        fused = forward_fused(detector, pixels)
        cached.append((FusedFeature(grid=Grid(fused.grid.data)), boxes))

    _calibrate_norm(detector, cached, cfg)
    order_rng = np.random.default_rng([cfg.seed, 202])
    losses: list[float] = []
    for epoch in range(cfg.stage2_epochs):
        total = 0.0
        count = 0
        for idx in _epoch_order(order_rng, len(cached)):
            fused, boxes = cached[idx]
            if not boxes:
                continue
            jrng = np.random.default_rng([cfg.seed, 22, epoch, int(idx)])
            tape = Tape()
            with recording(tape):
                loss = None
                for box in boxes:
                    prop = _jitter_box(jrng, box, cfg)
                    target = encode_xw(prop, box)
                    pred = regression_forward(fused, prop, detector.params, cfg.regression)
                    term = line_regression_loss(pred, target)
                    loss = term if loss is None else add(loss, term)
                loss = scale(loss, 1.0 / len(boxes))
            backward(loss, tape)
            opt.step()
            opt.zero_grad()
            total += loss.item()
            count += 1
        losses.append(total / max(count, 1))
        if progress is not None:
            progress(epoch_offset + epoch, losses[-1])
    return losses


def two_stage_train(samples: list[SceneSample], config: PipelineConfig | None = None,
                    progress=None) -> tuple[TextDetector, list[float], list[float]]:
    """Stage one then stage two on the same corpus; returns per-epoch losses."""
    config = config or PipelineConfig()
    if not samples:
        raise ConfigError("training corpus is empty")
    detector = build_detector(config)
    losses1 = train_stage1(detector, samples, progress=progress)
    losses2 = train_stage2(detector, samples, progress=progress,
                           epoch_offset=len(losses1))
    return detector, losses1, losses2


# ---------------------------------------------------------------------------
# detection


@dataclass
class DetectionResult:
    detections: list[tuple[tuple[float, float, float, float], float]]
    proposal_boxes: list[tuple[tuple[float, float, float, float], float]]
    lines: list[TextLine]
    scale_factor: float


def detect(detector: TextDetector, pixels: np.ndarray,
           score_threshold: float | None = None,
           apply_regression: bool = True) -> DetectionResult:
    """Detect word boxes on a [H, W] gray image, in original coordinates.

    The image is shrunk by the scale rule, proposals are decoded and
    connected into lines, each line box is refined in x/width (unless
    apply_regression is off), clipped, and mapped back to input pixels.
    """
    if pixels.ndim != 2:
        raise UsageError("detect() expects a 2-d gray image, got %r" % (pixels.shape,))
    cfg = detector.config
    threshold = cfg.score_threshold if score_threshold is None else score_threshold
    factor, new_extent = apply_scale_rule(pixels.shape, cfg.scale_limits)
    work = resize_image(pixels, new_extent) if factor < 1.0 else pixels

    fused = forward_fused(detector, work)
    out = rpn_forward(fused, detector.params, cfg.rpn)
    proposals = decode_proposals(out, cfg.anchors, threshold)
    lines = connect_proposals(proposals, cfg.connect_max_gap, cfg.connect_min_overlap)

    h, w = pixels.shape
    inv = 1.0 / factor
    detections = []
    for line in lines:
        box = line.bbox
        if apply_regression:
            t = regression_forward(fused, box, detector.params, cfg.regression)
            # a sane head predicts |t| well under 1; the clip only guards
            # decode_xw's exp against a degenerate or untrained model file
            tx, tw = np.clip(t.data, -4.0, 4.0)
            box = decode_xw(box, (tx, tw))
        # clip in input coordinates: the resize rounds the working extent,
        # so clipping there could still spill past the original image
        box = (max(0.0, box[0] * inv), max(0.0, box[1] * inv),
               min(float(w), box[2] * inv), min(float(h), box[3] * inv))
        if box[2] - box[0] <= 1.0 or box[3] - box[1] <= 1.0:
            continue
        detections.append((box, line.score))
    props_out = [(tuple(v * inv for v in p.box), p.score) for p in proposals]
    return DetectionResult(detections=detections, proposal_boxes=props_out,
                           lines=lines, scale_factor=factor)
