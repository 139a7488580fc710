"""IoU and panoptic (PQ/SQ/RQ) metrics over BEV label grids."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import InvalidValueError, ShapeError

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _binary(mask, name):
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise InvalidValueError(f"{name} must contain only 0 and 1")
    return mask.astype(bool)


def iou(pred, gt):
    pred = _binary(pred, "pred")
    gt = _binary(gt, "gt")
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def connected_components(mask):
    """4-connected instance ids in raster-scan discovery order; background 0."""
    labels, _ = ndimage.label(_binary(mask, "mask"), structure=FOUR_CONNECTED)
    return labels.astype(np.int64)


@dataclass
class PanopticCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_terms: tuple = ()

    def __add__(self, other):
        return PanopticCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                              self.iou_terms + other.iou_terms)

    def scores(self):
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        rq = self.tp / denom if denom > 0 else 0.0
        sq = math.fsum(self.iou_terms) / self.tp if self.tp else 0.0
        return sq * rq, sq, rq


def panoptic_counts(pred_instances, gt_instances):
    pred = np.asarray(pred_instances, dtype=np.int64)
    gt = np.asarray(gt_instances, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    if pred_ids.size == 0 or gt_ids.size == 0:
        return PanopticCounts(0, int(pred_ids.size), int(gt_ids.size))
    # contingency table over dense re-indexed ids; slot 0 is background
    p_idx = np.searchsorted(pred_ids, pred) + 1
    p_idx[pred <= 0] = 0
    g_idx = np.searchsorted(gt_ids, gt) + 1
    g_idx[gt <= 0] = 0
    n_p, n_g = pred_ids.size + 1, gt_ids.size + 1
    table = np.bincount((p_idx * n_g + g_idx).ravel(), minlength=n_p * n_g).reshape(n_p, n_g)
    inter = table[1:, 1:]
    p_area = table[1:].sum(axis=1)
    g_area = table[:, 1:].sum(axis=0)
    union = p_area[:, None] + g_area[None, :] - inter
    ious = inter / union
    # IoU > 0.5 makes every match unique on both sides
    pi, gi = np.nonzero(ious > 0.5)
    tp = pi.size
    terms = tuple(float(ious[a, b]) for a, b in zip(pi, gi))
    return PanopticCounts(tp, int(pred_ids.size - tp), int(gt_ids.size - tp), terms)


def panoptic_quality(pred_instances, gt_instances):
    """Return ``(PQ, SQ, RQ)`` with IoU > 0.5 matching."""
    return panoptic_counts(pred_instances, gt_instances).scores()


class SegmentationScorer:
    """Dataset-level accumulator: intersections/unions per class and panoptic counts."""

    def __init__(self, num_classes=2, instance_class=1):
        self.num_classes = num_classes
        self.instance_class = instance_class
        self.inter = np.zeros(num_classes, dtype=np.int64)
        self.union = np.zeros(num_classes, dtype=np.int64)
        self.panoptic = PanopticCounts()

    def update(self, pred_labels, gt_labels, gt_instances=None):
        pred_labels = np.asarray(pred_labels)
        gt_labels = np.asarray(gt_labels)
        for c in range(self.num_classes):
            p, g = pred_labels == c, gt_labels == c
            self.inter[c] += np.count_nonzero(p & g)
            self.union[c] += np.count_nonzero(p | g)
        if gt_instances is None:
            gt_instances = connected_components(gt_labels == self.instance_class)
        pred_inst = connected_components(pred_labels == self.instance_class)
        self.panoptic = self.panoptic + panoptic_counts(pred_inst, gt_instances)

    def class_iou(self):
        return np.where(self.union > 0, self.inter / np.maximum(self.union, 1), 1.0)

    def report(self):
        pq, sq, rq = self.panoptic.scores()
        out = {f"iou_{c}": float(v) for c, v in enumerate(self.class_iou())}
        out.update(pq=pq, sq=sq, rq=rq)
        return out
