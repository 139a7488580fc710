"""Camera-visibility weighting of BEV features.

A cell is *valid* when at least one frustum point of any camera falls into it;
valid cells keep weight 1 and every other cell is scaled by ``epsilon``.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import bev_flat_indices
from .exceptions import InvalidValueError, ShapeError
from .tensor import DTYPE, mul


@dataclass
class GeoMask:
    weights: np.ndarray  # [H, W]
    epsilon: float = 0.1

    @property
    def valid(self):
        return self.weights == 1.0


def check_epsilon(epsilon, allow_closed=False):
    lo_ok = epsilon >= 0 if allow_closed else epsilon > 0
    hi_ok = epsilon <= 1 if allow_closed else epsilon < 1
    if not (lo_ok and hi_ok):
        raise InvalidValueError(f"epsilon must lie in (0, 1), got {epsilon}")


def visibility(clouds, grid):
    H, W = grid.shape
    hit = np.zeros(H * W, dtype=bool)
    for cloud in clouds:
        idx = bev_flat_indices(cloud.points, grid).ravel()
        hit[idx[idx >= 0]] = True
    return hit.reshape(H, W)


def build_geo_mask(clouds, grid, epsilon=0.1, _allow_closed=False):
    """``_allow_closed`` admits epsilon in {0, 1}; used only by tests and ablations."""
    check_epsilon(epsilon, allow_closed=_allow_closed)
    weights = np.where(visibility(list(clouds), grid), 1.0, float(epsilon)).astype(DTYPE)
    return GeoMask(weights=weights, epsilon=float(epsilon))


def apply_geo_mask(features, mask):
    weights = mask.weights if isinstance(mask, GeoMask) else np.asarray(mask, dtype=DTYPE)
    if features.ndim != 3 or features.shape[1:] != weights.shape:
        raise ShapeError(f"mask {weights.shape} does not match features {features.shape}")
    return mul(features, weights)


def apply_geo_mask_backward(grad_out, mask):
    # the mask is fixed geometry, so only the feature cotangent is returned
    return apply_geo_mask(grad_out, mask)


def mask_to_pgm(mask):
    """Binary PGM (P5) bytes: 255 for valid cells, round(255 * epsilon) elsewhere."""
    weights = mask.weights if isinstance(mask, GeoMask) else np.asarray(mask)
    pix = np.clip(np.round(weights * 255.0), 0, 255).astype(np.uint8)
    H, W = pix.shape
    return f"P5\n{W} {H}\n255\n".encode("ascii") + pix.tobytes()


def write_pgm(path, mask):
    Path(path).write_bytes(mask_to_pgm(mask))


def read_pgm(path):
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidValueError(f"{path}: not a binary PGM")
    W, H = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=H * W).reshape(H, W)
