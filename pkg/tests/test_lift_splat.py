import numpy as np
import pytest
from hypothesis import given, strategies as st

from geobev.camera import BevGridSpec, FrustumCloud, build_frustum, default_rig
from geobev.exceptions import ShapeError
from geobev.lift_splat import LiftSplat, lift, splat, splat_backward, splat_matrix
from geobev.tensor import finite_diff_grad, relative_error, softmax_channel

GRID = BevGridSpec(8.0, 8.0, 1.0)


def _cloud(points):
    """Hand-placed frustum: ``points`` is ``[D, h, w, 3]``."""
    points = np.asarray(points, dtype=float)
    h, w = points.shape[1:3]
    return FrustumCloud(points=points, pixels=np.zeros((h, w, 2)), depths=np.arange(1.0, points.shape[0] + 1))


def _random_scene(r, grid=GRID):
    rig = default_rig(int(r.integers(1, 4)), (16, 24), fov_deg=float(r.uniform(40, 120)),
                      height=float(r.uniform(0.5, 2.0)))
    depths = np.sort(r.uniform(0.5, 9.0, size=int(r.integers(1, 5))))
    depths = np.unique(depths)
    clouds = [build_frustum(c, 4, 6, depths, stride=4) for c in rig]
    C = int(r.integers(1, 4))
    feats = [r.normal(size=(C, 4, 6)) for _ in rig]
    logits = [r.normal(size=(depths.size, 4, 6)) * 3 for _ in rig]
    return clouds, feats, logits


def test_lift_examples(rng):
    f = rng.normal(size=(3, 2, 2))
    assert np.array_equal(lift(f, np.zeros((1, 2, 2)))[0], f.transpose(1, 2, 0))
    L = lift(f, np.zeros((4, 2, 2)))
    assert np.allclose(L, f.transpose(1, 2, 0)[None] / 4, rtol=0, atol=1e-16)
    with pytest.raises(ShapeError):
        lift(f, np.zeros((4, 3, 2)))


@given(st.integers(0, 2**31))
def test_lift_rows_sum_to_features(seed):
    r = np.random.default_rng(seed)
    f = r.normal(size=(3, 4, 5)) * 10
    L = lift(f, r.normal(size=(6, 4, 5)) * 5)
    assert np.abs(L.sum(axis=0) - f.transpose(1, 2, 0)).max() <= 1e-12 * max(1.0, np.abs(f).max())


def test_splat_empty_and_single_point():
    far = _cloud(np.full((1, 1, 2, 3), 100.0))
    out = splat(np.ones((1, 1, 2, 2)), far, GRID)
    assert out.shape == (2, 8, 8) and not out.any()
    pts = np.array([[[[0.2, -1.7, 0.0], [99.0, 0.0, 0.0]]]])
    out = splat(np.array([[[[2.0, -3.0], [5.0, 5.0]]]]), _cloud(pts), GRID)
    expect = np.zeros((2, 8, 8))
    expect[:, 4, 2] = [2.0, -3.0]
    assert np.array_equal(out, expect)


def test_splat_shape_errors():
    c = _cloud(np.zeros((2, 1, 1, 3)))
    with pytest.raises(ShapeError):
        splat(np.ones((3, 1, 1, 2)), c, GRID)
    with pytest.raises(ShapeError):
        splat([np.ones((2, 1, 1, 2))] * 2, [c], GRID)


def _reference_splat(lifted, clouds, grid):
    """Per-point accumulation loop in camera, y, x, d order."""
    H, W = grid.shape
    C = lifted[0].shape[-1]
    out = np.zeros((C, H, W))
    for L, cloud in zip(lifted, clouds):
        D, h, w = L.shape[:3]
        for y in range(h):
            for x in range(w):
                for d in range(D):
                    p = cloud.points[d, y, x]
                    row = int(np.floor((p[0] + grid.extent_x / 2) / grid.resolution))
                    col = int(np.floor((p[1] + grid.extent_y / 2) / grid.resolution))
                    if 0 <= row < H and 0 <= col < W:
                        out[:, row, col] += L[d, y, x]
    return out


@given(st.integers(0, 2**31))
def test_splat_matches_point_loop_and_conserves_mass(seed):
    r = np.random.default_rng(seed)
    clouds, feats, logits = _random_scene(r)
    lifted = [lift(f, d) for f, d in zip(feats, logits)]
    out = splat(lifted, clouds, GRID)
    ref = _reference_splat(lifted, clouds, GRID)
    assert np.allclose(out, ref, rtol=0, atol=1e-12)
    in_range = sum(
        L[np.all(np.abs(c.points[..., :2]) < 4.0, axis=-1)].sum() for L, c in zip(lifted, clouds))
    assert abs(out.sum() - in_range) <= 1e-9


@given(st.integers(0, 2**31))
def test_splat_is_additive_over_disjoint_point_sets(seed):
    r = np.random.default_rng(seed)
    clouds, feats, logits = _random_scene(r)
    lifted = [lift(f, d) for f, d in zip(feats, logits)]
    keep = r.uniform(size=lifted[0].shape[:3]) < 0.5
    a = [L * keep[..., None] for L in lifted[:1]] + [L for L in lifted[1:]]
    b = [L * ~keep[..., None] for L in lifted[:1]] + [np.zeros_like(L) for L in lifted[1:]]
    total = splat(lifted, clouds, GRID)
    parts = splat(a, clouds, GRID) + splat(b, clouds, GRID)
    assert np.allclose(total, parts, rtol=0, atol=1e-12)


def test_splat_bit_identical_across_rebuilds(rng):
    clouds, feats, logits = _random_scene(rng)
    lifted = [lift(f, d) for f, d in zip(feats, logits)]
    a = splat(lifted, clouds, GRID)
    b = splat(lifted, clouds, GRID, matrix=splat_matrix(clouds, GRID))
    assert np.array_equal(a, b)


def test_splat_backward_zero_and_single_point(rng):
    clouds, feats, logits = _random_scene(rng)
    gf, gl = splat_backward(np.zeros((feats[0].shape[0],) + GRID.shape), clouds, GRID, feats, logits)
    assert all(not g.any() for g in gf) and all(not g.any() for g in gl)
    pts = np.full((2, 1, 2, 3), 50.0)
    pts[1, 0, 0] = [0.5, 0.5, 0.0]  # only (d=1, y=0, x=0) lands in the grid
    c = _cloud(pts)
    f = rng.normal(size=(3, 1, 2))
    lg = rng.normal(size=(2, 1, 2))
    g = rng.normal(size=(3,) + GRID.shape)
    gf, _ = splat_backward(g, c, GRID, f, lg)
    prob = softmax_channel(lg)[1, 0, 0]
    assert np.allclose(gf[:, 0, 0], prob * g[:, 4, 4], rtol=1e-14, atol=0)
    assert not gf[:, 0, 1].any()


def test_splat_backward_finite_differences(rng):
    clouds = [build_frustum(c, 4, 4, [1.0, 2.5, 3.5], stride=4) for c in default_rig(2, (16, 16), 90.0)]
    f = rng.normal(size=(2, 4, 4))
    lg = rng.normal(size=(3, 4, 4))
    g = rng.normal(size=(2,) + GRID.shape)
    gf, gl = splat_backward(g, clouds[:1], GRID, f, lg)
    nf = finite_diff_grad(lambda t: (splat(lift(t, lg), clouds[:1], GRID) * g).sum(), f)
    nl = finite_diff_grad(lambda t: (splat(lift(f, t), clouds[:1], GRID) * g).sum(), lg)
    assert relative_error(gf, nf) <= 1e-5 and relative_error(gl, nl) <= 1e-5


def test_batched_lift_splat_matches_per_camera(rng):
    rig = default_rig(3, (16, 24), 80.0)
    clouds = [build_frustum(c, 4, 6, [1.0, 2.0, 4.0, 7.0], stride=4) for c in rig]
    ls = LiftSplat(clouds, GRID)
    feats = rng.normal(size=(2, 3, 5, 4, 6))
    logits = rng.normal(size=(2, 3, 4, 4, 6))
    bev, prob = ls.forward(feats, logits)
    for b in range(2):
        ref = splat([lift(feats[b, n], logits[b, n]) for n in range(3)], clouds, GRID)
        assert np.allclose(bev[b], ref, rtol=0, atol=1e-12)
    g = rng.normal(size=bev.shape)
    gf, gl = ls.backward(g, feats, prob)
    rf, rl = splat_backward(g[1], clouds, GRID, list(feats[1]), list(logits[1]))
    assert np.allclose(gf[1], np.stack(rf), rtol=0, atol=1e-12)
    assert np.allclose(gl[1], np.stack(rl), rtol=0, atol=1e-12)
    assert np.array_equal(ls.visibility(), np.diff(splat_matrix(clouds, GRID).indptr).reshape(GRID.shape) > 0)
