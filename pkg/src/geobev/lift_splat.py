"""Depth-weighted lifting of camera features and sum-pooled splatting to BEV."""

import numpy as np
import scipy.sparse as sp

from .camera import bev_flat_indices
from .exceptions import ShapeError
from .tensor import DTYPE, softmax_channel, softmax_channel_backward


def lift(features, depth_logits):
    """Outer product of the per-pixel depth distribution with the features.

    Returns ``[D, h, w, C]`` with ``out[d, y, x, c] = p[d, y, x] * f[c, y, x]``.
    """
    features = np.asarray(features, dtype=DTYPE)
    depth_logits = np.asarray(depth_logits, dtype=DTYPE)
    if features.ndim != 3 or depth_logits.ndim != 3 or features.shape[1:] != depth_logits.shape[1:]:
        raise ShapeError(
            f"features {features.shape} and depth logits {depth_logits.shape} disagree on h, w"
        )
    prob = softmax_channel(depth_logits)
    return prob[..., None] * features.transpose(1, 2, 0)[None]


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def splat_matrix(clouds, grid):
    """Sparse ``[H*W, P]`` scatter matrix; columns ordered camera, y, x, d."""
    clouds = _as_list(clouds)
    cells = []
    for cloud in clouds:
        idx = bev_flat_indices(cloud.points, grid)  # [D, h, w]
        cells.append(idx.transpose(1, 2, 0).reshape(-1))
    cells = np.concatenate(cells)
    cols = np.nonzero(cells >= 0)[0]
    H, W = grid.shape
    return sp.csr_matrix(
        (np.ones(cols.size, dtype=DTYPE), (cells[cols], cols)), shape=(H * W, cells.size)
    )


def _flatten_lifted(lifted, clouds):
    lifted = _as_list(lifted)
    if len(lifted) != len(clouds):
        raise ShapeError(f"{len(lifted)} lifted tensors for {len(clouds)} frustum clouds")
    for L, cloud in zip(lifted, clouds):
        if L.shape[:3] != cloud.points.shape[:3]:
            raise ShapeError(f"lifted {L.shape} misaligned with cloud {cloud.points.shape[:3]}")
    C = lifted[0].shape[-1]
    return np.concatenate([L.transpose(1, 2, 0, 3).reshape(-1, C) for L in lifted])


def splat(lifted, clouds, grid, matrix=None):
    """Sum every in-range lifted feature into its BEV cell; returns ``[C, H, W]``."""
    clouds = _as_list(clouds)
    flat = _flatten_lifted(lifted, clouds)
    S = splat_matrix(clouds, grid) if matrix is None else matrix
    H, W = grid.shape
    return np.ascontiguousarray((S @ flat).T).reshape(flat.shape[1], H, W)


def splat_backward(grad_bev, clouds, grid, features, depth_logits, matrix=None):
    """Gradients of ``splat(lift(features, depth_logits))`` for one or more cameras.

    ``features`` and ``depth_logits`` are a single tensor or a list matching
    ``clouds``; the return mirrors that form.
    """
    single = not isinstance(clouds, (list, tuple))
    clouds = _as_list(clouds)
    features = _as_list(features)
    depth_logits = _as_list(depth_logits)
    S = splat_matrix(clouds, grid) if matrix is None else matrix
    C = features[0].shape[0]
    if grad_bev.shape != (C,) + tuple(grid.shape):
        raise ShapeError(f"grad_bev {grad_bev.shape} != {(C,) + tuple(grid.shape)}")
    g_flat = S.T @ grad_bev.reshape(C, -1).T  # [P, C]
    grads_f, grads_l = [], []
    offset = 0
    for f, logits, cloud in zip(features, depth_logits, clouds):
        D, h, w = logits.shape
        n = D * h * w
        G = g_flat[offset:offset + n].reshape(h, w, D, C).transpose(2, 0, 1, 3)
        offset += n
        prob = softmax_channel(logits)
        grads_f.append(np.einsum("dyx,dyxc->cyx", prob, G))
        grad_prob = np.einsum("cyx,dyxc->dyx", f, G)
        grads_l.append(softmax_channel_backward(prob, grad_prob))
    if single:
        return grads_f[0], grads_l[0]
    return grads_f, grads_l


class LiftSplat:
    """Cached lift-splat projection for a fixed rig, feature size and grid.

    Works on stacks of frames: features ``[B, N, C, h, w]`` and depth logits
    ``[B, N, D, h, w]`` for ``B`` timesteps of ``N`` cameras give ``[B, C, H, W]``.
    """

    def __init__(self, clouds, grid):
        self.clouds = list(clouds)
        self.grid = grid
        self.matrix = splat_matrix(self.clouds, grid)
        self.matrix_t = self.matrix.T.tocsr()

    def forward(self, features, depth_logits):
        B, N, C, h, w = features.shape
        D = depth_logits.shape[2]
        prob = softmax_channel(depth_logits.reshape(B * N, D, h, w).transpose(1, 0, 2, 3))
        prob = prob.transpose(1, 0, 2, 3).reshape(B, N, D, h, w)
        # [N, h, w, D] points x [B, C] columns
        lifted = prob[:, :, None] * features[:, :, :, None]  # [B, N, C, D, h, w]
        flat = lifted.transpose(1, 4, 5, 3, 0, 2).reshape(N * h * w * D, B * C)
        H, W = self.grid.shape
        out = self.matrix @ flat
        return np.ascontiguousarray(out.reshape(H, W, B, C).transpose(2, 3, 0, 1)), prob

    def backward(self, grad_bev, features, prob):
        B, N, C, h, w = features.shape
        D = prob.shape[2]
        H, W = self.grid.shape
        g = self.matrix_t @ grad_bev.transpose(2, 3, 0, 1).reshape(H * W, B * C)
        G = g.reshape(N, h, w, D, B, C).transpose(4, 0, 5, 3, 1, 2)  # [B, N, C, D, h, w]
        grad_feat = np.einsum("bndyx,bncdyx->bncyx", prob, G)
        grad_prob = np.einsum("bncyx,bncdyx->bndyx", features, G)
        grad_logits = prob * (grad_prob - (prob * grad_prob).sum(axis=2, keepdims=True))
        return grad_feat, grad_logits

    def visibility(self):
        """Boolean ``[H, W]``: cells receiving at least one frustum point."""
        hits = np.diff(self.matrix.indptr).reshape(self.grid.shape)
        return hits > 0
