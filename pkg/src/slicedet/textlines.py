"""Assembling vertical proposals into text lines and refining x/w.

Proposals connect when their horizontal centers are close and their
vertical extents agree; connected components become text lines. A small
pooled head then predicts a normalized (t_x, t_w) correction for each
line box. The vertical extent is never touched by the refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationError, ConfigError, DegenerateRegionError, UsageError
from .features import FusedFeature, STRIDE_16
from .grid import Grid, fan_in_uniform, linear, mul, reduce_sum, region_max_pool, relu, reshape
from .grid import smooth_l1, sub, zeros_param
from .proposals import Box, VerticalProposal, vertical_iou

DEFAULT_MAX_GAP = 50.0
DEFAULT_MIN_V_OVERLAP = 0.7


@dataclass
class TextLine:
    members: list[VerticalProposal]

    @property
    def score(self) -> float:
        return float(np.mean([p.score for p in self.members]))

    @property
    def bbox(self) -> Box:
        return line_bbox(self.members)


def line_bbox(proposals) -> Box:
    """Tight union of the member proposal boxes."""
    if not proposals:
        raise UsageError("line_bbox() of an empty member list is undefined")
    boxes = np.array([p.box for p in proposals])
    return (float(boxes[:, 0].min()), float(boxes[:, 1].min()),
            float(boxes[:, 2].max()), float(boxes[:, 3].max()))


def proposals_connect(a: VerticalProposal, b: VerticalProposal,
                      max_gap_px: float = DEFAULT_MAX_GAP,
                      min_v_overlap: float = DEFAULT_MIN_V_OVERLAP) -> bool:
    """Edge predicate: close horizontal centers and agreeing vertical extents."""
    if abs(a.x_center - b.x_center) > max_gap_px:
        return False
    return vertical_iou(a.box, b.box) >= min_v_overlap


def connect_proposals(proposals: list[VerticalProposal],
                      max_gap_px: float = DEFAULT_MAX_GAP,
                      min_v_overlap: float = DEFAULT_MIN_V_OVERLAP) -> list[TextLine]:
    """Group proposals into text lines by connected components.

    Adjacency is scanned over proposals sorted by x-center so only nearby
    candidates are tested; singleton components are valid lines.
    """
    n = len(proposals)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (proposals[i].x_center, proposals[i].y_center, i))
    xs = [proposals[i].x_center for i in order]

    adj: list[list[int]] = [[] for _ in range(n)]
    for oi in range(n):
        i = order[oi]
        for oj in range(oi + 1, n):
            if xs[oj] - xs[oi] > max_gap_px:
                break
            j = order[oj]
            if proposals_connect(proposals[i], proposals[j], max_gap_px, min_v_overlap):
                adj[i].append(j)
                adj[j].append(i)

    seen = [False] * n
    lines: list[TextLine] = []
    for start in order:
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nxt in adj[cur]:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(nxt)
        comp.sort(key=lambda i: (proposals[i].col, proposals[i].y_center))
        lines.append(TextLine([proposals[i] for i in comp]))
    return lines


# ---------------------------------------------------------------------------
# x/w encoding


def encode_xw(proposal_box: Box, gt_box: Box) -> tuple[float, float]:
    """Normalized x-center shift and log width ratio of gt vs proposal."""
    pw = proposal_box[2] - proposal_box[0]
    gw = gt_box[2] - gt_box[0]
    if pw <= 0.0:
        raise AnnotationError("proposal box has non-positive width %g" % pw)
    if gw <= 0.0:
        raise AnnotationError("ground-truth box has non-positive width %g" % gw)
    pcx = (proposal_box[0] + proposal_box[2]) / 2.0
    gcx = (gt_box[0] + gt_box[2]) / 2.0
    return ((gcx - pcx) / pw, float(np.log(gw / pw)))


def decode_xw(proposal_box: Box, t: tuple[float, float]) -> Box:
    """Apply (t_x, t_w); the vertical extent is copied through unchanged."""
    pw = proposal_box[2] - proposal_box[0]
    if pw <= 0.0:
        raise AnnotationError("proposal box has non-positive width %g" % pw)
    pcx = (proposal_box[0] + proposal_box[2]) / 2.0
    cx = pcx + float(t[0]) * pw
    w = pw * float(np.exp(t[1]))
    return (cx - w / 2.0, proposal_box[1], cx + w / 2.0, proposal_box[3])


# ---------------------------------------------------------------------------
# refinement head


@dataclass(frozen=True)
class RegressionConfig:
    pool_bins: int = 4
    hidden: int = 64

    def __post_init__(self):
        if self.pool_bins < 1 or self.hidden < 1:
            raise ConfigError("pool_bins and hidden must be >= 1")


def init_regression_params(fused_channels: int, config: RegressionConfig,
                           rng: np.random.Generator) -> dict[str, Grid]:
    fin = fused_channels * config.pool_bins * config.pool_bins
    return {
        # norm.mu / norm.nu standardize the pooled vector; they are constants
        # calibrated from the training corpus, never touched by the optimizer
        "regress/norm.mu": Grid(np.zeros((1, fin)), name="regress/norm.mu"),
        "regress/norm.nu": Grid(np.ones((1, fin)), name="regress/norm.nu"),
        "regress/fc1.w": fan_in_uniform(rng, (fin, config.hidden), fin),
        "regress/fc1.b": zeros_param((config.hidden,)),
        "regress/fc2.w": fan_in_uniform(rng, (config.hidden, 2), config.hidden),
        "regress/fc2.b": zeros_param((2,)),
    }


def project_to_cells(box: Box, extent: tuple[int, int]) -> tuple[int, int, int, int]:
    """Map a pixel box onto whole stride-16 cells, clipped to the extent."""
    h, w = extent
    x0 = box[0] / STRIDE_16
    y0 = box[1] / STRIDE_16
    x1 = box[2] / STRIDE_16
    y1 = box[3] / STRIDE_16
    if min(x1, w) - max(x0, 0.0) <= 0.0 or min(y1, h) - max(y0, 0.0) <= 0.0:
        raise DegenerateRegionError("box %r projects to zero area on a %r map" % (box, extent))
    cx0 = int(np.clip(np.floor(x0), 0, w - 1))
    cy0 = int(np.clip(np.floor(y0), 0, h - 1))
    cx1 = int(np.clip(np.ceil(x1), cx0 + 1, w))
    cy1 = int(np.clip(np.ceil(y1), cy0 + 1, h))
    return cx0, cy0, cx1, cy1


def pooled_line_vector(fused: FusedFeature, line_box: Box,
                       config: RegressionConfig) -> Grid:
    """Max-pool the fused map over the line's cells into a flat (1, F) row."""
    grid = fused.grid
    extent = (grid.shape[2], grid.shape[3])
    cx0, cy0, cx1, cy1 = project_to_cells(line_box, extent)
    pooled = region_max_pool(grid, (cx0, cy0, cx1, cy1), bins=config.pool_bins)
    return reshape(pooled, (1, grid.shape[1] * config.pool_bins * config.pool_bins))


def regression_forward(fused: FusedFeature, line_box: Box, params: dict[str, Grid],
                       config: RegressionConfig) -> Grid:
    """Pool the fused feature over the line region and predict (t_x, t_w).

    The head has exactly two outputs and no classification logits.
    """
    flat = pooled_line_vector(fused, line_box, config)
    z = mul(sub(flat, params["regress/norm.mu"]), params["regress/norm.nu"])
    hid = relu(linear(z, params["regress/fc1.w"], params["regress/fc1.b"]))
    out = linear(hid, params["regress/fc2.w"], params["regress/fc2.b"])
    return reshape(out, (2,))


def line_regression_loss(t, v) -> Grid:
    """smooth_l1(t_x - v_x) + smooth_l1(t_w - v_w).

    t may be a taped Grid of shape (2,) (training) or a plain pair; v is a
    plain (v_x, v_w) pair.
    """
    target = np.asarray(v, dtype=np.float64).reshape(2)
    if isinstance(t, Grid):
        if t.shape != (2,):
            raise ConfigError("line_regression_loss() expects a (2,) grid, got %r" % (t.shape,))
        return reduce_sum(smooth_l1(sub(t, Grid(target))))
    pred = np.asarray(t, dtype=np.float64).reshape(2)
    return float(smooth_l1(pred[0] - target[0]) + smooth_l1(pred[1] - target[1]))
