"""Deterministic multi-camera driving scenes with BEV ground truth.

Vehicles are flat-shaded boxes on the ground plane moving at constant
velocity around a static ego vehicle. Images come from the pinhole rig with
a painter's-algorithm rasteriser; labels are rasterised from the footprints.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import default_rig, read_rig, write_rig
from .exceptions import FormatError, GenerationError
from .tensor import DTYPE, load_tensor, save_tensor

SKY = np.array([0.55, 0.70, 0.90])
GROUND = np.array([0.35, 0.35, 0.35])
LIGHT = np.array([0.3, 0.5, 0.81])
NEAR = 0.1


@dataclass
class Vehicle:
    x: float
    y: float
    heading: float
    speed: float
    length: float = 4.5
    width: float = 2.0
    height: float = 1.6
    color: tuple = (0.85, 0.2, 0.15)

    def pose(self, t, dt):
        return (self.x + self.speed * np.cos(self.heading) * t * dt,
                self.y + self.speed * np.sin(self.heading) * t * dt,
                self.heading)

    def footprint(self, t, dt):
        """Ground-plane corners ``[4, 2]`` in counter-clockwise order."""
        x, y, th = self.pose(t, dt)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = np.cos(th), np.sin(th)
        return local @ np.array([[c, s], [-s, c]]) + np.array([x, y])


@dataclass
class Scene:
    vehicles: list
    rig: list
    num_frames: int
    dt: float = 0.5
    seed: int = 0
    noise_std: float = 0.0
    frame_dropout: float = 0.0
    image_size: tuple = (96, 160)
    sensor_seed: int = field(default=0, repr=False)


@dataclass
class SceneConfig:
    num_frames: int = 10
    dt: float = 0.5
    vehicles_min: int = 2
    vehicles_max: int = 6
    speed_max: float = 8.0
    spawn_r_min: float = 4.0
    spawn_r_max: float = 30.0
    distractors: int = 0
    distractor_r_min: float = 30.0
    distractor_r_max: float = 45.0
    distractor_speed: float = 10.0
    noise_std: float = 0.0
    frame_dropout: float = 0.0
    num_cameras: int = 6
    fov_deg: float = 70.0
    camera_height: float = 1.5
    image_height: int = 96
    image_width: int = 160
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    vehicle_height: float = 1.6
    max_attempts: int = 1000


def _boundary_samples(corners, per_edge=4):
    pts = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        for s in np.linspace(0.0, 1.0, per_edge, endpoint=False):
            pts.append(a + s * (b - a))
    return np.array(pts)


def _fits(vehicle, cfg, r_min, r_max, others):
    radius = 0.5 * np.hypot(vehicle.length, vehicle.width)
    for t in range(cfg.num_frames):
        r = np.hypot(*_boundary_samples(vehicle.footprint(t, cfg.dt)).T)
        if r.min() < r_min or r.max() > r_max:
            return False
        x, y, _ = vehicle.pose(t, cfg.dt)
        for o in others:
            ox, oy, _ = o.pose(t, cfg.dt)
            o_rad = 0.5 * np.hypot(o.length, o.width)
            if np.hypot(x - ox, y - oy) < radius + o_rad + 0.5:
                return False
    return True


def _spawn(rng, cfg, r_min, r_max, speed_lo, speed_hi, others):
    for _ in range(cfg.max_attempts):
        r = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2))
        ang = rng.uniform(-np.pi, np.pi)
        v = Vehicle(
            x=r * np.cos(ang), y=r * np.sin(ang), heading=rng.uniform(-np.pi, np.pi),
            speed=rng.uniform(speed_lo, speed_hi) if speed_hi > 0 else 0.0,
            length=cfg.vehicle_length, width=cfg.vehicle_width, height=cfg.vehicle_height,
            color=tuple(np.clip(np.array([0.85, 0.2, 0.15]) + rng.uniform(-0.1, 0.1, 3), 0, 1)),
        )
        if _fits(v, cfg, r_min, r_max, others):
            return v
    raise GenerationError(
        f"could not place a vehicle in annulus [{r_min}, {r_max}] m after {cfg.max_attempts} attempts"
    )


def generate_scene(seed, cfg=None, rig=None):
    cfg = SceneConfig() if cfg is None else cfg
    if cfg.vehicles_min < 0 or cfg.vehicles_max < cfg.vehicles_min:
        raise GenerationError("need 0 <= vehicles_min <= vehicles_max")
    if cfg.spawn_r_min < 0 or cfg.spawn_r_max <= cfg.spawn_r_min:
        raise GenerationError("spawn annulus must satisfy 0 <= r_min < r_max")
    if cfg.num_frames < 1:
        raise GenerationError("num_frames must be >= 1")
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    count = int(rng.integers(cfg.vehicles_min, cfg.vehicles_max + 1))
    vehicles = []
    for i in range(count):
        if cfg.speed_max <= 0 or (i == 0 and count >= 2):
            lo, hi = 0.0, 0.0
        elif i == 1:
            lo, hi = cfg.speed_max / 2, cfg.speed_max
        else:
            lo, hi = 0.0, cfg.speed_max
        vehicles.append(_spawn(rng, cfg, cfg.spawn_r_min, cfg.spawn_r_max, lo, hi, vehicles))
    for _ in range(cfg.distractors):
        vehicles.append(_spawn(rng, cfg, cfg.distractor_r_min, cfg.distractor_r_max,
                               cfg.distractor_speed / 2, cfg.distractor_speed, vehicles))
    if rig is None:
        rig = default_rig(cfg.num_cameras, (cfg.image_height, cfg.image_width), cfg.fov_deg,
                          cfg.camera_height)
    return Scene(vehicles=vehicles, rig=rig, num_frames=cfg.num_frames, dt=cfg.dt,
                 seed=int(seed), noise_std=cfg.noise_std, frame_dropout=cfg.frame_dropout,
                 image_size=(cfg.image_height, cfg.image_width),
                 sensor_seed=int(rng.integers(2 ** 31)))


# -- rendering -----------------------------------------------------------


def _box_faces(vehicle, t, dt):
    """Four sides and the top of the box as ``(corners [4, 3], outward normal)``."""
    fp = vehicle.footprint(t, dt)
    lo = np.column_stack([fp, np.zeros(4)])
    hi = np.column_stack([fp, np.full(4, vehicle.height)])
    faces = []
    center = np.append(fp.mean(axis=0), vehicle.height / 2)
    for i in range(4):
        j = (i + 1) % 4
        quad = np.array([lo[i], lo[j], hi[j], hi[i]])
        n = np.append(quad[:2, :2].mean(axis=0) - center[:2], 0.0)
        faces.append((quad, n / np.linalg.norm(n)))
    faces.append((hi, np.array([0.0, 0.0, 1.0])))
    return faces


def _clip_near(poly):
    out = []
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        a_in, b_in = a[2] >= NEAR, b[2] >= NEAR
        if a_in:
            out.append(a)
        if a_in != b_in:
            s = (NEAR - a[2]) / (b[2] - a[2])
            out.append(a + s * (b - a))
    return np.array(out)


def _fill_convex(img, uv, color):
    h, w = img.shape[1:]
    u0 = max(int(np.floor(uv[:, 0].min())), 0)
    u1 = min(int(np.ceil(uv[:, 0].max())), w - 1)
    v0 = max(int(np.floor(uv[:, 1].min())), 0)
    v1 = min(int(np.ceil(uv[:, 1].max())), h - 1)
    if u0 > u1 or v0 > v1:
        return
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    inside_pos = np.ones(uu.shape, dtype=bool)
    inside_neg = np.ones(uu.shape, dtype=bool)
    for i in range(len(uv)):
        a, b = uv[i], uv[(i + 1) % len(uv)]
        cross = (b[0] - a[0]) * (vv - a[1]) - (b[1] - a[1]) * (uu - a[0])
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    inside = inside_pos | inside_neg
    for c in range(3):
        img[c, v0:v1 + 1, u0:u1 + 1][inside] = color[c]


def render_camera_view(scene, timestep, camera):
    """Noise-free ``[3, img_h, img_w]`` image of the scene from one camera."""
    h, w = scene.image_size
    K, R, t = camera.intrinsics, camera.rotation, camera.translation
    vv, uu = np.mgrid[0:h, 0:w]
    rays = np.stack([uu, vv, np.ones_like(uu)], axis=-1) @ np.linalg.inv(K).T @ R.T
    ground = rays[..., 2] < 0
    img = np.where(ground[None], GROUND[:, None, None], SKY[:, None, None]).astype(DTYPE)

    faces = []
    for veh in scene.vehicles:
        for quad, normal in _box_faces(veh, timestep, scene.dt):
            dist = np.linalg.norm(quad.mean(axis=0) - t)
            shade = 0.55 + 0.45 * abs(float(normal @ LIGHT))
            faces.append((dist, quad, np.asarray(veh.color) * shade))
    # painter's algorithm: far faces first; stable sort keeps ties deterministic
    faces.sort(key=lambda f: -f[0])
    for _, quad, color in faces:
        cam = (quad - t) @ R
        if np.all(cam[:, 2] < NEAR):
            continue
        cam = _clip_near(cam)
        if len(cam) < 3:
            continue
        proj = cam @ K.T
        uv = proj[:, :2] / proj[:, 2:3]
        _fill_convex(img, uv, color)
    return img


def sensor_frames(scene, timestep):
    """All cameras at one timestep with the scene's sensor noise and dropout applied."""
    frames = []
    for ci, cam in enumerate(scene.rig):
        img = render_camera_view(scene, timestep, cam)
        rng = np.random.default_rng([scene.sensor_seed, timestep, ci])
        if scene.frame_dropout > 0 and rng.uniform() < scene.frame_dropout:
            img = np.zeros_like(img)
        elif scene.noise_std > 0:
            img = img + rng.normal(0.0, scene.noise_std, img.shape)
        frames.append(img)
    return np.stack(frames)


# -- ground truth --------------------------------------------------------


def _inside_footprint(vehicle, t, dt, cx, cy):
    x, y, th = vehicle.pose(t, dt)
    dx, dy = cx - x, cy - y
    c, s = np.cos(th), np.sin(th)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= vehicle.length / 2) & (np.abs(ly) <= vehicle.width / 2)


def rasterize_bev_instances(scene, timestep, grid):
    cx, cy = grid.cell_centers()
    inst = np.zeros(grid.shape, dtype=np.int64)
    for i, veh in enumerate(scene.vehicles):
        inst[_inside_footprint(veh, timestep, scene.dt, cx, cy)] = i + 1
    return inst


def rasterize_bev_gt(scene, timestep, grid):
    """Class ids per cell: 1 where the cell centre lies in a vehicle footprint."""
    return (rasterize_bev_instances(scene, timestep, grid) > 0).astype(np.int64)


# -- dataset export / load -------------------------------------------------


@dataclass
class Sample:
    """One temporal window: ``images`` is ``[T, N, 3, img_h, img_w]``, oldest first."""

    images: np.ndarray
    rig: list
    label: np.ndarray
    instances: np.ndarray = None
    sample_id: str = ""

    @property
    def window(self):
        return self.images.shape[0]


def sample_id(scene_index, t):
    return f"scene_{scene_index:04d}_t{t:03d}"


def parse_sample_id(sid):
    scene, t = sid.rsplit("_t", 1)
    return scene, int(t)


def export_dataset(scenes, out_dir, grid, window):
    """Write scenes plus a manifest of every sliding window of length ``window``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rig = scenes[0].rig if scenes else None
        ids = []
        for si, scene in enumerate(scenes):
            if rig is not None and [c.key() for c in scene.rig] != [c.key() for c in rig]:
                raise GenerationError("all exported scenes must share one camera rig")
            sdir = out / f"scene_{si:04d}"
            sdir.mkdir(exist_ok=True)
            for t in range(scene.num_frames):
                for ci, img in enumerate(sensor_frames(scene, t)):
                    save_tensor(sdir / f"img_{t}_{ci}.gtns", img)
                save_tensor(sdir / f"label_{t}.gtns", rasterize_bev_gt(scene, t, grid))
                save_tensor(sdir / f"inst_{t}.gtns", rasterize_bev_instances(scene, t, grid))
            ids.extend(sample_id(si, t) for t in range(window - 1, scene.num_frames))
        if rig is not None:
            write_rig(out / "rig.txt", rig)
        header = f"# geobev manifest\n# window = {window}\n"
        (out / "manifest.txt").write_text(header + "".join(i + "\n" for i in ids))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    return ids


class Dataset:
    """Lazy reader for an exported dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / "manifest.txt"
        if not manifest.is_file():
            raise FileNotFoundError(f"{manifest}: manifest not found")
        self.window = None
        self.ids = []
        for line in manifest.read_text().splitlines():
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                if key.strip() == "window":
                    self.window = int(val)
                continue
            if line:
                self.ids.append(line)
        self.rig = read_rig(self.root / "rig.txt") if self.ids else []
        self._cache = {}

    def __len__(self):
        return len(self.ids)

    def scenes(self):
        return sorted({parse_sample_id(i)[0] for i in self.ids})

    def _load(self, name):
        if name not in self._cache:
            self._cache[name] = load_tensor(self.root / name)
        return self._cache[name]

    def sample(self, sid, window):
        scene, t_end = parse_sample_id(sid)
        if t_end - window + 1 < 0:
            raise FormatError(f"sample {sid} has fewer than {window} frames of history")
        frames = []
        for t in range(t_end - window + 1, t_end + 1):
            frames.append(np.stack([self._load(f"{scene}/img_{t}_{c}.gtns")
                                    for c in range(len(self.rig))]))
        label = self._load(f"{scene}/label_{t_end}.gtns").astype(np.int64)
        inst = self._load(f"{scene}/inst_{t_end}.gtns").astype(np.int64)
        return Sample(images=np.stack(frames), rig=self.rig, label=label, instances=inst,
                      sample_id=sid)

    def samples(self, window, ids=None):
        return [self.sample(i, window) for i in (self.ids if ids is None else ids)]
