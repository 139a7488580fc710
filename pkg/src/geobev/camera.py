"""Pinhole camera rig, frustum construction and BEV grid indexing.

Frames: camera x right, y down, z along the optical axis; ego x forward,
y left, z up. ``Camera.rotation`` maps camera-frame vectors into the ego frame.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, GeometryError

# camera (x right, y down, z forward) -> ego (x forward, y left, z up)
CAM_TO_EGO_FORWARD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def intrinsics_matrix(fx, fy, cx, cy):
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


@dataclass
class Camera:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    name: str = "cam"

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self):
        K, R = self.intrinsics, self.rotation
        if np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] != 1.0:
            raise GeometryError(f"camera {self.name}: K must be upper-triangular, "
                                "positive focal lengths, K[2][2] == 1")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise GeometryError(f"camera {self.name}: rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError(f"camera {self.name}: rotation determinant != 1")

    @property
    def center(self):
        return self.translation

    def key(self):
        return (self.intrinsics.tobytes(), self.rotation.tobytes(), self.translation.tobytes())


@dataclass(frozen=True)
class BevGridSpec:
    """Ego-centred metric raster; rows index ego x, columns index ego y."""

    extent_x: float = 100.0
    extent_y: float = 100.0
    resolution: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0 or self.extent_x <= 0 or self.extent_y <= 0:
            raise ConfigError("grid extents and resolution must be positive")
        for name, ext in (("extent_x", self.extent_x), ("extent_y", self.extent_y)):
            n = ext / self.resolution
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise ConfigError(f"{name}={ext} is not a multiple of resolution {self.resolution}")

    @property
    def shape(self):
        return (round(self.extent_x / self.resolution), round(self.extent_y / self.resolution))

    def cell_centers(self):
        """Ego (x, y) of every cell centre as two ``[H, W]`` arrays."""
        H, W = self.shape
        xs = -self.extent_x / 2 + (np.arange(H) + 0.5) * self.resolution
        ys = -self.extent_y / 2 + (np.arange(W) + 0.5) * self.resolution
        return np.meshgrid(xs, ys, indexing="ij")


@dataclass
class FrustumCloud:
    """Ego-frame points of one camera, one per (depth bin, feature row, feature col)."""

    points: np.ndarray  # [D, h, w, 3]
    pixels: np.ndarray  # [h, w, 2] image (u, v) of each feature cell centre
    depths: np.ndarray  # [D]
    camera: Camera = field(repr=False, default=None)

    @property
    def num_points(self):
        return self.points.shape[0] * self.points.shape[1] * self.points.shape[2]


def unproject_pixel(u, v, depth, K):
    if depth <= 0:
        raise GeometryError(f"depth must be positive, got {depth}")
    ray = np.linalg.solve(np.asarray(K, dtype=np.float64), np.array([u, v, 1.0]))
    return depth * ray


def project_point(p, K):
    """Camera-frame point to pixel (u, v)."""
    q = np.asarray(K, dtype=np.float64) @ np.asarray(p, dtype=np.float64)
    return q[0] / q[2], q[1] / q[2]


def cam_to_ego(p, R, t):
    return np.asarray(R, dtype=np.float64) @ np.asarray(p, dtype=np.float64) + np.asarray(t)


def ego_to_cam(p, R, t):
    return np.asarray(R).T @ (np.asarray(p, dtype=np.float64) - np.asarray(t))


def feature_pixel_centers(feat_h, feat_w, stride):
    """Image pixel coordinates of feature-cell centres; pixel centres sit on integers."""
    us = np.arange(feat_w) * stride + (stride - 1) / 2.0
    vs = np.arange(feat_h) * stride + (stride - 1) / 2.0
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu, vv], axis=-1)


def build_frustum(camera, feat_h, feat_w, depth_bins, stride=8):
    depth_bins = np.asarray(depth_bins, dtype=np.float64)
    if depth_bins.size == 0:
        raise ConfigError("depth_bins must not be empty")
    if np.any(depth_bins <= 0) or np.any(np.diff(depth_bins) <= 0):
        raise ConfigError("depth_bins must be positive and strictly increasing")
    pix = feature_pixel_centers(feat_h, feat_w, stride)
    homog = np.concatenate([pix, np.ones((feat_h, feat_w, 1))], axis=-1)
    rays = homog @ np.linalg.inv(camera.intrinsics).T  # [h, w, 3], z == 1
    cam_pts = depth_bins[:, None, None, None] * rays[None]
    ego = cam_pts @ camera.rotation.T + camera.translation
    return FrustumCloud(points=ego, pixels=pix, depths=depth_bins, camera=camera)


def ego_to_bev_index(p, grid):
    row = int(np.floor((p[0] + grid.extent_x / 2) / grid.resolution))
    col = int(np.floor((p[1] + grid.extent_y / 2) / grid.resolution))
    H, W = grid.shape
    if 0 <= row < H and 0 <= col < W:
        return row, col
    return None


def bev_flat_indices(points, grid):
    """Vectorised :func:`ego_to_bev_index`: flat cell index per point, -1 if outside."""
    points = np.asarray(points, dtype=np.float64)
    rows = np.floor((points[..., 0] + grid.extent_x / 2) / grid.resolution)
    cols = np.floor((points[..., 1] + grid.extent_y / 2) / grid.resolution)
    H, W = grid.shape
    inside = (rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
    flat = np.where(inside, rows * W + cols, -1)
    return flat.astype(np.int64)


# -- rigs ----------------------------------------------------------------


def default_rig(num_cameras=6, image_size=(96, 160), fov_deg=70.0, height=1.5):
    """Ring of identical cameras at equal yaw spacing, looking horizontally."""
    img_h, img_w = image_size
    f = (img_w / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    K = intrinsics_matrix(f, f, (img_w - 1) / 2.0, (img_h - 1) / 2.0)
    rig = []
    for i in range(num_cameras):
        yaw = 2 * np.pi * i / num_cameras
        R = rot_z(yaw) @ CAM_TO_EGO_FORWARD
        rig.append(Camera(K, R, [0.0, 0.0, height], name=f"cam{i}"))
    return rig


def format_rig(rig):
    lines = []
    for cam in rig:
        lines.append(f"camera {cam.name}")
        lines.append("K " + " ".join(repr(float(v)) for v in cam.intrinsics.ravel()))
        lines.append("R " + " ".join(repr(float(v)) for v in cam.rotation.ravel()))
        lines.append("t " + " ".join(repr(float(v)) for v in cam.translation))
    return "\n".join(lines) + "\n"


def write_rig(path, rig):
    Path(path).write_text(format_rig(rig))


def parse_rig(text, source="<rig>"):
    cams = []
    cur = None

    def finish():
        if cur is None:
            return
        missing = {"K", "R", "t"} - cur.keys()
        if missing:
            raise FormatError(f"{source}: camera {cur['name']} missing {sorted(missing)}")
        try:
            cams.append(Camera(cur["K"], cur["R"], cur["t"], name=cur["name"]))
        except GeometryError as exc:
            raise FormatError(f"{source}: {exc}") from exc

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "camera":
            finish()
            if len(rest) != 1:
                raise FormatError(f"{source}:{lineno}: expected 'camera <name>'")
            cur = {"name": rest[0]}
            continue
        if cur is None:
            raise FormatError(f"{source}:{lineno}: '{key}' before any camera block")
        want = {"K": 9, "R": 9, "t": 3}.get(key)
        if want is None:
            raise FormatError(f"{source}:{lineno}: unknown rig key '{key}'")
        try:
            vals = [float(v) for v in rest]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        if len(vals) != want:
            raise FormatError(f"{source}:{lineno}: '{key}' needs {want} values, got {len(vals)}")
        cur[key] = vals
    finish()
    if not cams:
        raise FormatError(f"{source}: no cameras defined")
    return cams


def read_rig(path):
    path = Path(path)
    return parse_rig(path.read_text(), source=str(path))
