import numpy as np
import pytest
from hypothesis import given, strategies as st

from geobev import camera as cam
from geobev.exceptions import ConfigError, FormatError, GeometryError


def test_unproject_examples():
    assert np.array_equal(cam.unproject_pixel(0, 0, 2.0, np.eye(3)), [0, 0, 2])
    K = cam.intrinsics_matrix(2.0, 2.0, 0.0, 0.0)
    assert np.allclose(cam.unproject_pixel(1, 1, 4.0, K), [2, 2, 4], rtol=0, atol=1e-15)
    K = cam.intrinsics_matrix(300.0, 280.0, 79.5, 47.5)
    assert np.allclose(cam.unproject_pixel(79.5, 47.5, 7.0, K), [0, 0, 7], rtol=0, atol=1e-12)
    with pytest.raises(GeometryError):
        cam.unproject_pixel(1, 1, 0.0, K)


def test_cam_to_ego_examples():
    p = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(cam.cam_to_ego(p, np.eye(3), np.zeros(3)), p)
    assert np.array_equal(cam.cam_to_ego([0, 0, 2], np.eye(3), [1, 0, 0]), [1, 0, 2])
    out = cam.cam_to_ego([1, 0, 0], cam.rot_z(np.pi / 2), np.zeros(3))
    assert np.allclose(out, [0, 1, 0], rtol=0, atol=1e-12)


def test_camera_validation():
    with pytest.raises(GeometryError):
        cam.Camera(np.diag([1.0, -1.0, 1.0]), np.eye(3), np.zeros(3))
    with pytest.raises(GeometryError):
        cam.Camera(np.eye(3), np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        cam.Camera(np.eye(3), 1.01 * np.eye(3), np.zeros(3))


def test_grid_spec():
    assert cam.BevGridSpec().shape == (200, 200)
    with pytest.raises(ConfigError):
        cam.BevGridSpec(10.0, 10.0, 0.3)


def test_build_frustum_counts_and_depths():
    c = cam.Camera(np.eye(3), np.eye(3), np.zeros(3))
    cloud = cam.build_frustum(c, 2, 2, [1.0, 2.0, 3.0], stride=1)
    assert cloud.points.shape == (3, 2, 2, 3) and cloud.num_points == 12
    cloud = cam.build_frustum(c, 2, 3, [1.0, 2.0], stride=1)
    assert set(np.unique(cloud.points[..., 2])) == {1.0, 2.0}
    with pytest.raises(ConfigError):
        cam.build_frustum(c, 2, 2, [])
    with pytest.raises(ConfigError):
        cam.build_frustum(c, 2, 2, [2.0, 1.0])


def test_default_rig_points_beyond_min_depth():
    depths = np.linspace(1.0, 40.0, 16)
    for c in cam.default_rig():
        cloud = cam.build_frustum(c, 12, 20, depths)
        dist = np.linalg.norm(cloud.points - c.translation, axis=-1)
        assert dist.min() >= depths[0] - 1e-12


def test_ego_to_bev_index_examples():
    g = cam.BevGridSpec()
    assert cam.ego_to_bev_index([0.0, 0.0, 3.0], g) == (100, 100)
    assert cam.ego_to_bev_index([-50.0, -50.0, 0.0], g) == (0, 0)
    assert cam.ego_to_bev_index([50.0, 50.0, 0.0], g) is None
    assert cam.ego_to_bev_index([24.9, -10.2, 0.0], g) == (149, 79)


@given(st.floats(-60, 60), st.floats(-60, 60))
def test_flat_indices_agree_with_scalar(x, y):
    g = cam.BevGridSpec()
    idx = cam.ego_to_bev_index([x, y, 0.0], g)
    flat = cam.bev_flat_indices(np.array([[x, y, 0.0]]), g)[0]
    assert flat == (-1 if idx is None else idx[0] * 200 + idx[1])


@given(st.integers(-40, 40), st.integers(-98, 18), st.floats(-49.0, 49.0))
def test_bev_index_translation_consistent(k, cell, y):
    g = cam.BevGridSpec()
    x = cell * g.resolution + 0.125  # inside a cell, shifts by k*0.5 are exact in binary
    base = cam.ego_to_bev_index([x, y, 0.0], g)
    moved = cam.ego_to_bev_index([x + k * g.resolution, y, 0.0], g)
    if base is not None and moved is not None:
        assert moved[0] - base[0] == k and moved[1] == base[1]


@given(st.floats(0, 159), st.floats(0, 95), st.floats(0.1, 80), st.floats(-np.pi, np.pi))
def test_project_unproject_round_trip(u, v, depth, yaw):
    K = cam.intrinsics_matrix(114.3, 114.3, 79.5, 47.5)
    p = cam.unproject_pixel(u, v, depth, K)
    assert abs(p[2] - depth) <= 1e-12 * depth
    uu, vv = cam.project_point(p, K)
    assert abs(uu - u) <= 1e-9 and abs(vv - v) <= 1e-9
    R = cam.rot_z(yaw) @ cam.CAM_TO_EGO_FORWARD
    q = cam.cam_to_ego(p, R, [0.5, -1.0, 1.5])
    assert np.allclose(cam.ego_to_cam(q, R, [0.5, -1.0, 1.5]), p, rtol=0, atol=1e-9)


@given(st.floats(-np.pi, np.pi), st.integers(0, 2**31))
def test_rigid_transform_preserves_distances(yaw, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, 3)) * 10
    R = cam.rot_z(yaw) @ cam.CAM_TO_EGO_FORWARD
    t = r.normal(size=3)
    d0 = np.linalg.norm(a - b)
    d1 = np.linalg.norm(cam.cam_to_ego(a, R, t) - cam.cam_to_ego(b, R, t))
    assert abs(d0 - d1) <= 1e-9


def test_forward_camera_looks_along_ego_x():
    c = cam.default_rig(1)[0]
    p = cam.cam_to_ego(cam.unproject_pixel(79.5, 47.5, 10.0, c.intrinsics), c.rotation, c.translation)
    assert np.allclose(p, [10.0, 0.0, 1.5], rtol=0, atol=1e-12)
    # image right is ego -y (right-hand side of the vehicle)
    p = cam.cam_to_ego(cam.unproject_pixel(150.0, 47.5, 10.0, c.intrinsics), c.rotation, c.translation)
    assert p[1] < 0


def test_rig_file_round_trip(tmp_path):
    rig = cam.default_rig(4)
    path = tmp_path / "rig.txt"
    cam.write_rig(path, rig)
    text = "# four cameras\n" + path.read_text()
    back = cam.parse_rig(text)
    assert [c.key() for c in back] == [c.key() for c in rig]
    assert [c.name for c in back] == [c.name for c in rig]


@pytest.mark.parametrize("text", [
    "camera a\nK 1 0 0 0 1 0 0 0 1\nR 1 0 0 0 1 0 0 0 1\n",
    "camera a\nK 1 0 0 0 1 0 0 0\nR 1 0 0 0 1 0 0 0 1\nt 0 0 0\n",
    "K 1 0 0 0 1 0 0 0 1\n",
    "camera a\nK 1 0 0 0 1 0 0 0 1\nR 2 0 0 0 1 0 0 0 1\nt 0 0 0\n",
])
def test_rig_parse_errors(text):
    with pytest.raises(FormatError):
        cam.parse_rig(text)
