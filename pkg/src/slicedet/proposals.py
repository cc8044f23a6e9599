"""Fixed-width vertical proposals: anchors, labels, RPN head, decoding.

Every column of the stride-16 feature map carries K anchors of fixed 16 px
width and varying height. Ground-truth words are sliced into the same 16 px
cells; inter-word gaps become explicit space boxes whose anchors are
sampled as a dedicated kind of negative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationError, ConfigError, UsageError
from .features import FusedFeature
from .grid import Grid, birnn_width, conv2d, fan_in_uniform, relu, smooth_l1, softmax_cross_entropy
from .grid import add, reduce_sum, scale, sub, take, zeros_param

SLICE_WIDTH = 16
DEFAULT_HEIGHTS = (11, 16, 23, 33, 47, 67, 96, 137, 196, 280)

Box = tuple[float, float, float, float]  # x0, y0, x1, y1


@dataclass(frozen=True)
class AnchorConfig:
    heights: tuple[int, ...] = DEFAULT_HEIGHTS
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    space_neg_iou: float = 0.5
    slice_width: int = SLICE_WIDTH

    def __post_init__(self):
        if self.slice_width != SLICE_WIDTH:
            raise ConfigError("slice width is fixed at 16 px, got %d" % self.slice_width)
        if not self.heights or any(h <= 0 for h in self.heights):
            raise ConfigError("anchor heights must be positive")
        if list(self.heights) != sorted(set(self.heights)):
            raise ConfigError("anchor heights must be strictly increasing")
        if not 0.0 < self.neg_iou < self.pos_iou <= 1.0:
            raise ConfigError("need 0 < neg_iou < pos_iou <= 1")


@dataclass(frozen=True)
class Anchor:
    row: int
    col: int
    height_index: int
    height: float

    @property
    def x_center(self) -> float:
        return SLICE_WIDTH * self.col + SLICE_WIDTH / 2.0

    @property
    def y_center(self) -> float:
        return SLICE_WIDTH * self.row + SLICE_WIDTH / 2.0

    @property
    def box(self) -> Box:
        half = self.height / 2.0
        return (SLICE_WIDTH * self.col, self.y_center - half,
                SLICE_WIDTH * (self.col + 1), self.y_center + half)


def generate_anchors(extent: tuple[int, int], config: AnchorConfig) -> list[Anchor]:
    """All anchors of a (rows, cols) stride-16 map, ordered (row, col, k)."""
    rows, cols = int(extent[0]), int(extent[1])
    if rows < 1 or cols < 1:
        raise ConfigError("feature extent %r is empty" % (extent,))
    return [Anchor(r, c, k, float(h))
            for r in range(rows) for c in range(cols)
            for k, h in enumerate(config.heights)]


def anchor_box_array(extent: tuple[int, int], config: AnchorConfig) -> np.ndarray:
    """[A, 4] anchor boxes in (row, col, k) order; vectorized twin of the list."""
    rows, cols = int(extent[0]), int(extent[1])
    hs = np.asarray(config.heights, dtype=np.float64)
    k = hs.shape[0]
    r = np.repeat(np.arange(rows), cols * k)
    c = np.tile(np.repeat(np.arange(cols), k), rows)
    h = np.tile(hs, rows * cols)
    cy = SLICE_WIDTH * r + SLICE_WIDTH / 2.0
    return np.stack([SLICE_WIDTH * c, cy - h / 2.0, SLICE_WIDTH * (c + 1), cy + h / 2.0], axis=1)


# ---------------------------------------------------------------------------
# ground-truth geometry


def _as_box(word) -> Box:
    if hasattr(word, "box"):
        return tuple(float(v) for v in word.box)
    return tuple(float(v) for v in word)


class SliceStatus(str, enum.Enum):
    POSITIVE = "positive"
    IGNORE = "ignore"


@dataclass(frozen=True)
class GtSlice:
    cell: int
    y0: float
    y1: float
    status: SliceStatus
    word_index: int = 0

    @property
    def box(self) -> Box:
        return (SLICE_WIDTH * self.cell, self.y0, SLICE_WIDTH * (self.cell + 1), self.y1)

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def y_center(self) -> float:
        return (self.y0 + self.y1) / 2.0


def slice_ground_truth(word, word_index: int = 0) -> list[GtSlice]:
    """Cut a word box into 16 px cells.

    A cell overlapping the word by >= 8 px is a positive slice, a smaller
    overlap is an ignore slice. A word whose every cell overlap is below
    8 px still yields exactly one positive at its maximal-overlap cell.
    """
    x0, y0, x1, y1 = _as_box(word)
    if not (x0 < x1 and y0 < y1):
        raise AnnotationError("degenerate word box %r" % ((x0, y0, x1, y1),))
    first = int(np.floor(x0 / SLICE_WIDTH))
    last = int(np.ceil(x1 / SLICE_WIDTH))  # exclusive
    cells = np.arange(first, last)
    overlap = np.minimum(x1, SLICE_WIDTH * (cells + 1)) - np.maximum(x0, SLICE_WIDTH * cells)
    status = [SliceStatus.POSITIVE if o >= 8.0 else SliceStatus.IGNORE for o in overlap]
    if SliceStatus.POSITIVE not in status:
        status[int(np.argmax(overlap))] = SliceStatus.POSITIVE
    return [GtSlice(int(c), y0, y1, s, word_index) for c, s in zip(cells, status)]


def slice_words(words) -> list[GtSlice]:
    out: list[GtSlice] = []
    for i, word in enumerate(words):
        out.extend(slice_ground_truth(word, word_index=i))
    return out


@dataclass(frozen=True)
class SpaceBox:
    x0: float
    y0: float
    x1: float
    y1: float
    left_word: int
    right_word: int

    @property
    def box(self) -> Box:
        return (self.x0, self.y0, self.x1, self.y1)


def vertical_iou(a: Box, b: Box) -> float:
    """1-d IoU of the two boxes' y extents."""
    inter = min(a[3], b[3]) - max(a[1], b[1])
    if inter <= 0.0:
        return 0.0
    union = (a[3] - a[1]) + (b[3] - b[1]) - inter
    return inter / union


def derive_space_boxes(words) -> list[SpaceBox]:
    """Gap boxes between word pairs that share a baseline.

    A pair qualifies when its vertical 1-d IoU is >= 0.5 and the horizontal
    gap is positive but smaller than twice the pair's mean height.
    """
    boxes = [_as_box(w) for w in words]
    out: list[SpaceBox] = []
    for i in range(len(boxes)):
        for j in range(len(boxes)):
            if i == j:
                continue
            a, b = boxes[i], boxes[j]
            if a[2] >= b[0]:
                continue  # not left-of, or horizontally overlapping
            gap = b[0] - a[2]
            mean_h = ((a[3] - a[1]) + (b[3] - b[1])) / 2.0
            if gap >= 2.0 * mean_h:
                continue
            if vertical_iou(a, b) < 0.5:
                continue
            y0, y1 = max(a[1], b[1]), min(a[3], b[3])
            if y1 <= y0:
                continue
            out.append(SpaceBox(a[2], y0, b[0], y1, i, j))
    return out


def iou(a: Box, b: Box) -> float:
    """Intersection over union with half-open pixel conventions."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [A, 4] vs [B, 4] boxes."""
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


# ---------------------------------------------------------------------------
# label assignment


class Label(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    SPACE_NEGATIVE = 2
    IGNORE = 3


@dataclass
class LabelAssignment:
    """Per-anchor labels plus (dy, dh) targets for the positives.

    targets rows are NaN wherever the anchor is not positive;
    matched_slice is -1 there.
    """
    labels: np.ndarray          # [A] int8 of Label values
    matched_slice: np.ndarray   # [A] int32, index into the slice list
    targets: np.ndarray         # [A, 2] float64 (dy, dh)

    def indices(self, label: Label) -> np.ndarray:
        return np.flatnonzero(self.labels == int(label))


def assign_labels(extent: tuple[int, int], slices: list[GtSlice],
                  space_boxes: list[SpaceBox], config: AnchorConfig) -> LabelAssignment:
    """Label every anchor of a feature map against sliced ground truth.

    positive:        IoU >= pos_iou with a positive slice, or argmax anchor
                     for a slice (so every slice keeps at least one positive)
    space_negative:  not positive, IoU > space_neg_iou with a space box
    negative:        max IoU with every slice (ignores included) < neg_iou
    ignore:          everything else
    """
    boxes = anchor_box_array(extent, config)
    a = boxes.shape[0]
    labels = np.full(a, int(Label.IGNORE), dtype=np.int8)
    matched = np.full(a, -1, dtype=np.int32)
    targets = np.full((a, 2), np.nan)

    pos_slices = [s for s in slices if s.status is SliceStatus.POSITIVE]
    pos_index = np.array([i for i, s in enumerate(slices) if s.status is SliceStatus.POSITIVE],
                         dtype=np.int32)
    all_boxes = np.array([s.box for s in slices], dtype=np.float64).reshape(-1, 4)
    pos_boxes = np.array([s.box for s in pos_slices], dtype=np.float64).reshape(-1, 4)

    iou_all = iou_matrix(boxes, all_boxes)
    max_all = iou_all.max(axis=1) if slices else np.zeros(a)

    is_pos = np.zeros(a, dtype=bool)
    if pos_slices:
        iou_pos = iou_matrix(boxes, pos_boxes)
        best_slice = iou_pos.argmax(axis=1)
        best_iou = iou_pos[np.arange(a), best_slice]
        is_pos = best_iou >= config.pos_iou
        # argmax fallback: the best anchor of every slice is positive
        for j in range(len(pos_slices)):
            col = iou_pos[:, j]
            top = int(col.argmax())
            if col[top] > 0.0:
                is_pos[top] = True
                if col[top] > best_iou[top]:
                    best_iou[top] = col[top]
                    best_slice[top] = j
        pos_ids = np.flatnonzero(is_pos)
        labels[pos_ids] = int(Label.POSITIVE)
        matched[pos_ids] = pos_index[best_slice[pos_ids]]
        for idx in pos_ids:
            s = pos_slices[best_slice[idx]]
            cy_a = (boxes[idx, 1] + boxes[idx, 3]) / 2.0
            h_a = boxes[idx, 3] - boxes[idx, 1]
            targets[idx, 0] = (s.y_center - cy_a) / h_a
            targets[idx, 1] = np.log(s.height / h_a)

    if space_boxes:
        sp = np.array([s.box for s in space_boxes], dtype=np.float64)
        sp_iou = iou_matrix(boxes, sp).max(axis=1)
        is_space = (~is_pos) & (sp_iou > config.space_neg_iou)
        labels[is_space] = int(Label.SPACE_NEGATIVE)
    else:
        is_space = np.zeros(a, dtype=bool)

    is_neg = (~is_pos) & (~is_space) & (max_all < config.neg_iou)
    labels[is_neg] = int(Label.NEGATIVE)
    return LabelAssignment(labels, matched, targets)


SPACE_SHARE = 0.10  # share of the negative quota reserved for space negatives


def sample_minibatch(assignment: LabelAssignment, batch_size: int = 128,
                     seed: int = 0) -> np.ndarray:
    """Sorted anchor indices of a training minibatch.

    At most half the batch is positives; the rest are negatives with about
    10% of the negative quota drawn from space negatives (all of them when
    fewer are available). Ignore anchors are never sampled.
    """
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    rng = np.random.default_rng(seed)
    pos = assignment.indices(Label.POSITIVE)
    neg = assignment.indices(Label.NEGATIVE)
    spc = assignment.indices(Label.SPACE_NEGATIVE)

    max_pos = batch_size // 2
    if pos.size > max_pos:
        pos = np.sort(rng.choice(pos, size=max_pos, replace=False))
    quota = batch_size - pos.size
    want_space = int(round(SPACE_SHARE * quota))
    n_space = min(want_space, spc.size)
    n_plain = min(quota - n_space, neg.size)
    # backfill with extra space negatives when plain ones run short
    n_space = min(quota - n_plain, spc.size)
    take_s = np.sort(rng.choice(spc, size=n_space, replace=False)) if n_space else np.empty(0, np.int64)
    take_n = np.sort(rng.choice(neg, size=n_plain, replace=False)) if n_plain else np.empty(0, np.int64)
    out = np.sort(np.concatenate([pos.astype(np.int64), take_s, take_n]))
    if out.size == 0:
        raise UsageError("no sampleable anchors: everything is labelled ignore")
    return out


# ---------------------------------------------------------------------------
# RPN head


@dataclass(frozen=True)
class RpnConfig:
    mid_channels: int = 64
    hidden_size: int = 32

    def __post_init__(self):
        if self.mid_channels < 1 or self.hidden_size < 1:
            raise ConfigError("rpn channel counts must be >= 1")


@dataclass
class RpnOutput:
    scores: Grid  # [N, 2K, H, W]
    regs: Grid    # [N, 2K, H, W]

    @property
    def extent(self) -> tuple[int, int]:
        return self.scores.shape[2], self.scores.shape[3]

    @property
    def num_heights(self) -> int:
        return self.scores.shape[1] // 2


def init_rpn_params(fused_channels: int, num_heights: int, config: RpnConfig,
                    rng: np.random.Generator) -> dict[str, Grid]:
    mid, hid = config.mid_channels, config.hidden_size
    rnn_out = 2 * hid
    return {
        "rpn/conv.w": fan_in_uniform(rng, (mid, fused_channels, 3, 3), fused_channels * 9),
        "rpn/conv.b": zeros_param((mid,)),
        "rpn/rnn.wx_f": fan_in_uniform(rng, (mid, hid), mid),
        "rpn/rnn.wh_f": fan_in_uniform(rng, (hid, hid), hid),
        "rpn/rnn.b_f": zeros_param((hid,)),
        "rpn/rnn.wx_b": fan_in_uniform(rng, (mid, hid), mid),
        "rpn/rnn.wh_b": fan_in_uniform(rng, (hid, hid), hid),
        "rpn/rnn.b_b": zeros_param((hid,)),
        "rpn/score.w": fan_in_uniform(rng, (2 * num_heights, rnn_out, 1, 1), rnn_out),
        "rpn/score.b": zeros_param((2 * num_heights,)),
        "rpn/reg.w": fan_in_uniform(rng, (2 * num_heights, rnn_out, 1, 1), rnn_out),
        "rpn/reg.b": zeros_param((2 * num_heights,)),
    }


def rpn_forward(fused: FusedFeature, params: dict[str, Grid], config: RpnConfig) -> RpnOutput:
    """conv3x3 -> bidirectional RNN over width -> two 1x1 heads.

    Score channels hold (non-text, text) logits per anchor height k at
    (2k, 2k+1); regression channels hold (dy, dh) at the same positions.
    """
    x = relu(conv2d(fused.grid, params["rpn/conv.w"], params["rpn/conv.b"], stride=1, pad=1))
    x = birnn_width(x, params["rpn/rnn.wx_f"], params["rpn/rnn.wh_f"], params["rpn/rnn.b_f"],
                    params["rpn/rnn.wx_b"], params["rpn/rnn.wh_b"], params["rpn/rnn.b_b"])
    scores = conv2d(x, params["rpn/score.w"], params["rpn/score.b"])
    regs = conv2d(x, params["rpn/reg.w"], params["rpn/reg.b"])
    return RpnOutput(scores=scores, regs=regs)


def _anchor_positions(indices: np.ndarray, extent: tuple[int, int], k: int):
    """Split flat anchor indices (row*W + col)*K + k into (row, col, height)."""
    hgt = indices % k
    cell = indices // k
    col = cell % extent[1]
    row = cell // extent[1]
    return row, col, hgt


def _map_flat_index(channel, row, col, extent):
    h, w = extent
    return (channel * h + row) * w + col


def rpn_loss(output: RpnOutput, assignment: LabelAssignment, sample: np.ndarray,
             reg_lambda: float = 1.0) -> Grid:
    """Mean cross-entropy over the sample + lambda * mean smooth-L1 over positives."""
    if sample.size == 0:
        raise UsageError("rpn_loss() with an empty minibatch is undefined")
    extent, k = output.extent, output.num_heights
    labels = assignment.labels[sample]
    row, col, hgt = _anchor_positions(sample, extent, k)
    idx = np.stack([_map_flat_index(2 * hgt, row, col, extent),
                    _map_flat_index(2 * hgt + 1, row, col, extent)], axis=1)
    logits = take(output.scores, idx)
    cls_target = (labels == int(Label.POSITIVE)).astype(np.int64)
    loss = softmax_cross_entropy(logits, cls_target)

    pos = sample[assignment.labels[sample] == int(Label.POSITIVE)]
    if pos.size:
        prow, pcol, phgt = _anchor_positions(pos, extent, k)
        pidx = np.stack([_map_flat_index(2 * phgt, prow, pcol, extent),
                         _map_flat_index(2 * phgt + 1, prow, pcol, extent)], axis=1)
        pred = take(output.regs, pidx)
        target = Grid(assignment.targets[pos])
        reg = scale(reduce_sum(smooth_l1(sub(pred, target))), 1.0 / pos.size)
        loss = add(loss, scale(reg, reg_lambda))
    return loss


@dataclass(frozen=True)
class VerticalProposal:
    """One decoded 16 px wide proposal at a feature cell."""
    col: int
    y_center: float
    height: float
    score: float

    @property
    def x_center(self) -> float:
        return SLICE_WIDTH * self.col + SLICE_WIDTH / 2.0

    @property
    def box(self) -> Box:
        half = self.height / 2.0
        return (SLICE_WIDTH * self.col, self.y_center - half,
                SLICE_WIDTH * (self.col + 1), self.y_center + half)


def decode_proposals(output: RpnOutput, config: AnchorConfig,
                     score_threshold: float = 0.7) -> list[VerticalProposal]:
    """Per feature cell keep the best-height anchor if its text score passes.

    The (dy, dh) regression of the winning anchor moves the y-center and
    rescales the height; the width and x-center stay on the 16 px grid.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ConfigError("score_threshold must lie in [0, 1]")
    k = output.num_heights
    if k != len(config.heights):
        raise ConfigError("output has %d anchor heights, config %d" % (k, len(config.heights)))
    scores = output.scores.data[0]  # [2K, H, W]
    regs = output.regs.data[0]
    h, w = scores.shape[1], scores.shape[2]
    logit0 = scores[0::2]  # [K, H, W] non-text
    logit1 = scores[1::2]
    m = np.maximum(logit0, logit1)
    e0 = np.exp(logit0 - m)
    e1 = np.exp(logit1 - m)
    prob = e1 / (e0 + e1)

    best = prob.argmax(axis=0)  # [H, W]
    rows, cols = np.nonzero(prob.max(axis=0) >= score_threshold)
    heights = np.asarray(config.heights, dtype=np.float64)
    out: list[VerticalProposal] = []
    for r, c in zip(rows, cols):
        kk = int(best[r, c])
        h_a = heights[kk]
        cy_a = SLICE_WIDTH * r + SLICE_WIDTH / 2.0
        dy = regs[2 * kk, r, c]
        dh = regs[2 * kk + 1, r, c]
        out.append(VerticalProposal(col=int(c),
                                    y_center=float(cy_a + dy * h_a),
                                    height=float(h_a * np.exp(dh)),
                                    score=float(prob[kk, r, c])))
    return out
