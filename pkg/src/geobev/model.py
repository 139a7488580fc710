"""End-to-end BEV segmentation network: encoder, lift-splat, temporal module, head.

Parameters live in an ordered ``dict`` of name -> float64 array. Names are
prefixed by the block that owns them (``encoder.``, ``gru.``/``temporal.``,
``head.``).
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .camera import build_frustum
from .conv_gru import (
    ConvGruParams,
    convgru_backward_through_time,
    convgru_forward,
    init_kernel,
    temporal_conv3d_backward,
    temporal_conv3d_baseline,
)
from .exceptions import InvalidValueError, ShapeError
from .geo_mask import apply_geo_mask, apply_geo_mask_backward, build_geo_mask
from .lift_splat import LiftSplat
from .tensor import DTYPE, conv2d, conv2d_backward, patch_conv, patch_conv_backward


@dataclass(frozen=True)
class Architecture:
    temporal_module: str = "geo-convgru"
    temporal_field: int = 5
    num_classes: int = 2
    encoder_channels: int = 16
    feature_channels: int = 16
    hidden_channels: int = 16
    head_channels: int = 16
    depth_bins: int = 16
    gru_units: int = 2
    kernel_size: int = 3
    feature_stride: int = 8

    @classmethod
    def from_params(cls, params):
        names = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in params.items() if k in names})

    @property
    def head_in_channels(self):
        return self.feature_channels if self.temporal_module == "static" else self.hidden_channels


def init_model_params(arch, rng):
    """Fresh parameters; every kernel uniform in +-sqrt(1 / fan_in)."""
    s1 = arch.feature_stride // 2
    p = OrderedDict()
    p["encoder.conv1"] = init_kernel(rng, (arch.encoder_channels, 3, s1, s1))
    p["encoder.conv2"] = init_kernel(rng, (arch.feature_channels, arch.encoder_channels, 2, 2))
    p["encoder.depth"] = init_kernel(rng, (arch.depth_bins, arch.feature_channels, 1, 1))
    p["encoder.depth_ray"] = init_kernel(rng, (arch.depth_bins, 2))
    k = arch.kernel_size
    if arch.temporal_module in ("convgru", "geo-convgru"):
        gru = ConvGruParams.init(arch.feature_channels, arch.hidden_channels, arch.gru_units, k, rng)
        p.update(gru.named())
    elif arch.temporal_module == "conv3d":
        p["temporal.conv3d"] = init_kernel(
            rng, (arch.hidden_channels, arch.feature_channels, arch.temporal_field, k, k))
    p["head.conv1"] = init_kernel(rng, (arch.head_channels, arch.head_in_channels, k, k))
    p["head.conv2"] = init_kernel(rng, (arch.num_classes, arch.head_channels, 1, 1))
    p["head.bias"] = np.zeros(arch.num_classes, dtype=DTYPE)
    return p


def gru_params(params):
    units = {}
    for name, arr in params.items():
        if name.startswith("gru."):
            _, u, k = name.split(".")
            units.setdefault(int(u), {})[k] = arr
    return ConvGruParams([units[u] for u in sorted(units)])


# -- encoder ---------------------------------------------------------------


def encode_images(images, params, ray_slope=None, return_cache=False):
    """Encode ``[..., N, 3, img_h, img_w]`` images to features and depth logits.

    Two non-overlapping strided convolutions (total stride ``feature_stride``)
    with tanh, then a 1x1 depth-logit head on the features. Patch convolutions
    cannot tell where in the image a patch sits, so the depth head also gets
    each feature pixel's ray slope ``[N, h, w]`` through ``encoder.depth_ray``
    (logit_d += a_d * slope + b_d).
    """
    images = np.asarray(images, dtype=DTYPE)
    k1, k2, kd = params["encoder.conv1"], params["encoder.conv2"], params["encoder.depth"]
    stride = k1.shape[-1] * k2.shape[-1]
    if images.shape[-3] != 3:
        raise ShapeError(f"images must have 3 channels, got shape {images.shape}")
    if images.shape[-2] % stride or images.shape[-1] % stride:
        raise ShapeError(f"image dims {images.shape[-2:]} not divisible by stride {stride}")
    h1 = np.tanh(patch_conv(images, k1))
    feats = np.tanh(patch_conv(h1, k2))
    depth = np.einsum("dc,...cyx->...dyx", kd[:, :, 0, 0], feats)
    if ray_slope is not None:
        wr = params["encoder.depth_ray"]
        depth = depth + (wr[:, 0, None, None] * ray_slope[..., None, :, :]
                         + wr[:, 1, None, None])
    if return_cache:
        return feats, depth, (images, h1, feats, ray_slope)
    return feats, depth


def encode_image(image, params, ray_slope=None):
    return encode_images(image, params, ray_slope)


def encode_images_backward(cache, grad_feats, grad_depth, params):
    images, h1, feats, ray_slope = cache
    kd = params["encoder.depth"][:, :, 0, 0]
    D, C = kd.shape
    P = feats.shape[-2] * feats.shape[-1]
    g_kd = np.einsum("bdp,bcp->dc", grad_depth.reshape(-1, D, P), feats.reshape(-1, C, P))
    gf = grad_feats + np.einsum("dc,...dyx->...cyx", kd, grad_depth)
    ga2 = gf * (1.0 - feats * feats)
    gh1, g_k2 = patch_conv_backward(h1, params["encoder.conv2"], ga2)
    ga1 = gh1 * (1.0 - h1 * h1)
    gimg, g_k1 = patch_conv_backward(images, params["encoder.conv1"], ga1)
    grads = {"encoder.conv1": g_k1, "encoder.conv2": g_k2,
             "encoder.depth": g_kd[:, :, None, None]}
    if ray_slope is not None:
        slope = np.broadcast_to(ray_slope[..., None, :, :], grad_depth.shape)
        axes = tuple(i for i in range(grad_depth.ndim) if i != grad_depth.ndim - 3)
        grads["encoder.depth_ray"] = np.stack(
            [(grad_depth * slope).sum(axis=axes), grad_depth.sum(axis=axes)], axis=1)
    return gimg, grads


# -- head ------------------------------------------------------------------


def head_forward(x, params):
    a1 = np.tanh(conv2d(x, params["head.conv1"]))
    logits = conv2d(a1, params["head.conv2"]) + params["head.bias"][:, None, None]
    return logits, (x, a1)


def head_backward(cache, grad_logits, params):
    x, a1 = cache
    ga1, g_k2 = conv2d_backward(a1, params["head.conv2"], grad_logits)
    gz1 = ga1 * (1.0 - a1 * a1)
    gx, g_k1 = conv2d_backward(x, params["head.conv1"], gz1)
    return gx, {"head.conv1": g_k1, "head.conv2": g_k2, "head.bias": grad_logits.sum(axis=(1, 2))}


# -- loss ------------------------------------------------------------------


def cross_entropy_loss(logits, labels):
    """Mean per-cell softmax cross-entropy; returns ``(loss, grad_logits)``."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    K = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise InvalidValueError(f"label ids must lie in [0, {K})")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0))
    logp = shifted - logz
    n = labels.size
    picked = np.take_along_axis(logp, labels[None], axis=0)[0]
    loss = -picked.sum() / n
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[None], np.take_along_axis(grad, labels[None], 0) - 1.0, 0)
    return float(loss), grad / n


# -- full model ------------------------------------------------------------


class Geometry:
    """Frustum clouds, splat operator and visibility mask for one rig."""

    def __init__(self, rig, grid, depth_values, image_size, feature_stride, epsilon):
        self.clouds = self.frustums(rig, depth_values, image_size, feature_stride)
        self.ray_slope = np.stack([ray_slope(c) for c in self.clouds])
        self.grid = grid
        self.lift_splat = LiftSplat(self.clouds, grid)
        self.mask = build_geo_mask(self.clouds, grid, epsilon, _allow_closed=True)

    @staticmethod
    def frustums(rig, depth_values, image_size, feature_stride):
        fh, fw = image_size[0] // feature_stride, image_size[1] // feature_stride
        return [build_frustum(cam, fh, fw, depth_values, feature_stride) for cam in rig]


def ray_slope(cloud):
    """Downward slope of each feature pixel's ray in the ego frame, ``[h, w]``."""
    d = cloud.points[-1] - cloud.points[0]
    return -d[..., 2] / np.hypot(d[..., 0], d[..., 1])


def model_forward(params, arch, geometry, images, return_cache=False):
    """Logits ``[num_classes, H, W]`` for one window ``[T, N, 3, img_h, img_w]``."""
    images = np.asarray(images, dtype=DTYPE)
    if images.ndim != 5:
        raise ShapeError(f"images must be [T, N, 3, h, w], got {images.shape}")
    mod = arch.temporal_module
    if mod == "static":
        images = images[-1:]
    elif images.shape[0] != arch.temporal_field:
        raise ShapeError(f"window has {images.shape[0]} frames, model expects {arch.temporal_field}")
    feats, depth, enc_cache = encode_images(images, params, geometry.ray_slope,
                                            return_cache=True)
    bev, prob = geometry.lift_splat.forward(feats, depth)  # [T, C, H, W]
    t_cache = None
    if mod == "static":
        x = bev[-1]
    elif mod == "conv3d":
        x = temporal_conv3d_baseline(bev, params["temporal.conv3d"])
    else:
        x, t_cache = convgru_forward(bev, gru_params(params), return_cache=True)
        if mod == "geo-convgru":
            x = apply_geo_mask(x, geometry.mask)
    logits, h_cache = head_forward(x, params)
    if return_cache:
        return logits, (enc_cache, feats, prob, bev, t_cache, h_cache)
    return logits


def model_backward(params, arch, geometry, cache, grad_logits):
    enc_cache, feats, prob, bev, t_cache, h_cache = cache
    grads = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
    gx, hg = head_backward(h_cache, grad_logits, params)
    grads.update(hg)
    mod = arch.temporal_module
    if mod == "static":
        g_bev = gx[None]
    elif mod == "conv3d":
        g_bev, gk = temporal_conv3d_backward(bev, params["temporal.conv3d"], gx)
        grads["temporal.conv3d"] = gk
    else:
        if mod == "geo-convgru":
            gx = apply_geo_mask_backward(gx, geometry.mask)
        gp = gru_params(params)
        g_bev, g_gru = convgru_backward_through_time(bev, gp, gx, caches=t_cache)
        grads.update(g_gru.named())
    g_feat, g_depth = geometry.lift_splat.backward(g_bev, feats, prob)
    _, eg = encode_images_backward(enc_cache, g_feat, g_depth, params)
    grads.update(eg)
    return grads


def model_loss_and_grad(params, arch, geometry, images, labels):
    logits, cache = model_forward(params, arch, geometry, images, return_cache=True)
    loss, g = cross_entropy_loss(logits, labels)
    return loss, model_backward(params, arch, geometry, cache, g)


# -- optimiser -------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, 0)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of ``params``; returns ``state``."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state

