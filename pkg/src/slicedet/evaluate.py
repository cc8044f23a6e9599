"""Greedy detection-to-ground-truth matching and micro-averaged P/R/F."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .proposals import Box, iou


@dataclass
class ImageMatches:
    image: str
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)  # (det, gt, iou)
    num_gt: int = 0


@dataclass
class EvalReport:
    precision: float
    recall: float
    f_measure: float
    per_image: list[ImageMatches]

    @property
    def mean_matched_iou(self) -> float:
        ious = [m[2] for im in self.per_image for m in im.matches]
        return float(np.mean(ious)) if ious else 0.0


def match_detections(detections, ground_truth, iou_threshold: float = 0.5,
                     image: str = "") -> ImageMatches:
    """Greedy one-to-one matching by descending detection score.

    detections: iterable of (box, score); ground_truth: iterable of boxes.
    Each detection takes the unmatched ground-truth box of highest IoU,
    provided that IoU reaches the threshold. Ties break on the lower index,
    so the result is deterministic.
    """
    dets = [(tuple(float(v) for v in b), float(s)) for b, s in detections]
    gts = [tuple(float(v) for v in b) for b in ground_truth]
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    taken = [False] * len(gts)
    matches: list[tuple[int, int, float]] = []
    for di in order:
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dets[di][0], g)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            matches.append((di, best_j, best_iou))
    matches.sort(key=lambda m: m[0])
    tp = len(matches)
    return ImageMatches(image=image, tp=tp, fp=len(dets) - tp, fn=len(gts) - tp,
                        matches=matches, num_gt=len(gts))


def compute_prf(per_image: list[ImageMatches]) -> EvalReport:
    """Micro-averaged precision/recall/F over per-image match results.

    Zero detections and zero ground truth count as a vacuous perfect score.
    """
    tp = sum(im.tp for im in per_image)
    fp = sum(im.fp for im in per_image)
    fn = sum(im.fn for im in per_image)
    if tp + fp + fn == 0:
        return EvalReport(1.0, 1.0, 1.0, list(per_image))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(precision, recall, f, list(per_image))


@dataclass
class AblationDelta:
    d_precision: float
    d_recall: float
    d_f_measure: float
    d_mean_matched_iou: float


def ablation_compare(base: EvalReport, variant: EvalReport) -> AblationDelta:
    """variant minus base; both reports must cover the same ground truth."""
    key_a = [(im.image, im.num_gt) for im in base.per_image]
    key_b = [(im.image, im.num_gt) for im in variant.per_image]
    if sorted(key_a) != sorted(key_b):
        raise UsageError("ablation_compare() reports cover different ground-truth sets")
    return AblationDelta(
        d_precision=variant.precision - base.precision,
        d_recall=variant.recall - base.recall,
        d_f_measure=variant.f_measure - base.f_measure,
        d_mean_matched_iou=variant.mean_matched_iou - base.mean_matched_iou,
    )
