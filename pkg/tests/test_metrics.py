import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from geobev.exceptions import InvalidValueError, ShapeError
from geobev.metrics import SegmentationScorer, connected_components, iou, panoptic_quality


def flood_fill_components(mask):
    """Raster-scan BFS labelling with 4-neighbours."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros(mask.shape, dtype=np.int64)
    nxt = 0
    H, W = mask.shape
    for r in range(H):
        for c in range(W):
            if mask[r, c] and not out[r, c]:
                nxt += 1
                out[r, c] = nxt
                todo = deque([(r, c)])
                while todo:
                    y, x = todo.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        a, b = y + dy, x + dx
                        if 0 <= a < H and 0 <= b < W and mask[a, b] and not out[a, b]:
                            out[a, b] = nxt
                            todo.append((a, b))
    return out


def brute_force_pq(pred, gt):
    """All-pairs IoU matching by cell enumeration."""
    pred_ids = sorted(set(pred.ravel().tolist()) - {0})
    gt_ids = sorted(set(gt.ravel().tolist()) - {0})
    matched_p, matched_g, ious = set(), set(), []
    for p in pred_ids:
        for g in gt_ids:
            inter = int(np.sum((pred == p) & (gt == g)))
            union = int(np.sum((pred == p) | (gt == g)))
            v = inter / union
            if v > 0.5:
                matched_p.add(p)
                matched_g.add(g)
                ious.append(v)
    tp = len(ious)
    fp = len(pred_ids) - len(matched_p)
    fn = len(gt_ids) - len(matched_g)
    denom = tp + 0.5 * fp + 0.5 * fn
    rq = tp / denom if denom else 0.0
    sq = math.fsum(ious) / tp if tp else 0.0
    return sq * rq, sq, rq


def test_iou_examples():
    a = np.array([[1, 1], [0, 0]])
    assert iou(a, a) == 1.0
    assert iou(a, 1 - a) == 0.0
    gt = np.ones((2, 2), dtype=int)
    assert iou(a, gt) == 0.5
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(InvalidValueError):
        iou(np.array([[2, 0]]), np.array([[1, 0]]))
    with pytest.raises(ShapeError):
        iou(np.zeros((2, 2)), np.zeros((2, 3)))


@given(arrays(np.int64, (5, 6), elements=st.integers(0, 1)), arrays(np.int64, (5, 6), elements=st.integers(0, 1)))
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)


def test_components_examples():
    assert not connected_components(np.zeros((3, 3))).any()
    m = np.array([[1, 1, 0, 1],
                  [1, 0, 0, 1]])
    assert connected_components(m).tolist() == [[1, 1, 0, 2], [1, 0, 0, 2]]
    diag = np.array([[1, 0], [0, 1]])
    assert connected_components(diag).tolist() == [[1, 0], [0, 2]]


@given(arrays(np.int64, st.tuples(st.integers(1, 10), st.integers(1, 10)), elements=st.integers(0, 1)))
def test_components_match_flood_fill(mask):
    assert np.array_equal(connected_components(mask), flood_fill_components(mask))


def test_pq_examples():
    g = np.zeros((4, 5), dtype=int)
    g[1:3, 1:4] = 1
    assert panoptic_quality(g, g) == (1.0, 1.0, 1.0)
    assert panoptic_quality(np.zeros_like(g), g) == (0.0, 0.0, 0.0)
    # 5 cells of gt, prediction covers 3 of them: IoU 3/5 = 0.6
    gt = np.zeros((1, 5), dtype=int)
    gt[0, :] = 1
    pred = np.zeros((1, 5), dtype=int)
    pred[0, :3] = 7
    pq, sq, rq = panoptic_quality(pred, gt)
    assert rq == 1.0 and sq == 0.6 and pq == 0.6
    with pytest.raises(ShapeError):
        panoptic_quality(np.zeros((2, 2)), np.zeros((3, 2)))


def random_instances(r, shape, k):
    grid = np.zeros(shape, dtype=np.int64)
    for i in range(1, k + 1):
        y0, x0 = r.integers(0, shape[0]), r.integers(0, shape[1])
        y1, x1 = y0 + r.integers(1, 5), x0 + r.integers(1, 5)
        grid[y0:y1, x0:x1] = i
    return grid


@given(st.integers(0, 2**31))
def test_pq_matches_brute_force_and_relabelling(seed):
    r = np.random.default_rng(seed)
    shape = (int(r.integers(1, 9)), int(r.integers(1, 9)))
    gt = random_instances(r, shape, int(r.integers(0, 5)))
    pred = random_instances(r, shape, int(r.integers(0, 5)))
    if r.uniform() < 0.5:
        pred = np.where(r.uniform(size=shape) < 0.8, gt, pred)
    out = panoptic_quality(pred, gt)
    assert out == brute_force_pq(pred, gt)
    pq, sq, rq = out
    assert pq == sq * rq and all(0.0 <= v <= 1.0 for v in out)
    perm = r.permutation(10) + 1
    relabel = np.where(pred > 0, perm[pred % 10], 0)
    assert panoptic_quality(relabel, gt) == out


def test_scorer_accumulates_dataset_level():
    s = SegmentationScorer(2)
    a = np.array([[1, 1, 0, 0]])
    b = np.array([[1, 0, 0, 0]])
    s.update(a, b)
    s.update(b, b)
    rep = s.report()
    assert rep["iou_1"] == 2 / 3  # intersections 1 + 1, unions 2 + 1
    assert rep["iou_0"] == (2 + 3) / (3 + 3)
    assert rep["pq"] == rep["sq"] * rep["rq"]
