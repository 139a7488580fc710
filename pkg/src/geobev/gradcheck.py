"""Finite-difference verification of every hand-written backward pass."""

import time
from collections import OrderedDict

import numpy as np

from . import conv_gru, model, tensor
from .camera import BevGridSpec, build_frustum, default_rig
from .lift_splat import lift, splat, splat_backward, splat_matrix

TOLERANCE = 1e-5
STEP = 1e-5


def _check(f, x, analytic, step=STEP):
    return tensor.relative_error(analytic, tensor.finite_diff_grad(f, x, step))


def _param_closure(store, key, fn):
    arr = store[key]

    def f(v):
        saved = arr.copy()
        arr[...] = v
        try:
            return fn()
        finally:
            arr[...] = saved
    return f


def check_conv2d(rng):
    x = rng.normal(size=(3, 5, 4))
    k = rng.normal(size=(2, 3, 3, 3))
    g = rng.normal(size=(2, 5, 4))
    gi, gk = tensor.conv2d_backward(x, k, g)
    return max(_check(lambda t: (tensor.conv2d(t, k) * g).sum(), x, gi),
               _check(lambda t: (tensor.conv2d(x, t) * g).sum(), k, gk))


def check_convgru_cell(rng):
    p = conv_gru.ConvGruParams.init(2, 3, 1, 3, rng).units[0]
    x = rng.normal(size=(2, 4, 4))
    h = rng.normal(size=(3, 4, 4)) * 0.5
    g = rng.normal(size=(3, 4, 4))
    _, cache = conv_gru.convgru_cell(x, h, p, return_cache=True)
    dx, dh, grads = conv_gru.convgru_cell_backward(cache, g, p)
    err = max(_check(lambda t: (conv_gru.convgru_cell(t, h, p) * g).sum(), x, dx),
              _check(lambda t: (conv_gru.convgru_cell(x, t, p) * g).sum(), h, dh))
    for name in conv_gru.KERNEL_NAMES:
        f = _param_closure(p, name, lambda: (conv_gru.convgru_cell(x, h, p) * g).sum())
        err = max(err, _check(f, p[name].copy(), grads[name]))
    return err


def check_bptt(rng, T=3):
    params = conv_gru.ConvGruParams.init(2, 2, 2, 3, rng)
    win = rng.normal(size=(T, 2, 4, 4))
    g = rng.normal(size=(2, 4, 4))
    gw, gp = conv_gru.convgru_backward_through_time(win, params, g)
    err = _check(lambda t: (conv_gru.convgru_forward(t, params) * g).sum(), win, gw)
    for u, unit in enumerate(params.units):
        for name in conv_gru.KERNEL_NAMES:
            f = _param_closure(unit, name, lambda: (conv_gru.convgru_forward(win, params) * g).sum())
            err = max(err, _check(f, unit[name].copy(), gp.units[u][name]))
    return err


def check_conv3d(rng, T=3):
    win = rng.normal(size=(T, 2, 4, 5))
    k = rng.normal(size=(3, 2, T, 3, 3))
    g = rng.normal(size=(3, 4, 5))
    gw, gk = conv_gru.temporal_conv3d_backward(win, k, g)
    return max(_check(lambda t: (conv_gru.temporal_conv3d_baseline(t, k) * g).sum(), win, gw),
               _check(lambda t: (conv_gru.temporal_conv3d_baseline(win, t) * g).sum(), k, gk))


def _micro_rig(img_size=(16, 24)):
    return default_rig(2, img_size, fov_deg=90.0)


def check_lift_splat(rng):
    grid = BevGridSpec(8.0, 8.0, 1.0)
    rig = _micro_rig()
    clouds = [build_frustum(c, 4, 4, [1.0, 2.5, 3.5], stride=4) for c in rig]
    S = splat_matrix(clouds, grid)
    feats = [rng.normal(size=(2, 4, 4)) for _ in rig]
    logits = [rng.normal(size=(3, 4, 4)) for _ in rig]
    g = rng.normal(size=(2,) + grid.shape)

    def total(fs, ls):
        return (splat([lift(f, d) for f, d in zip(fs, ls)], clouds, grid, matrix=S) * g).sum()

    gf, gl = splat_backward(g, clouds, grid, feats, logits, matrix=S)
    err = 0.0
    for i in range(len(rig)):
        def f_feat(t, i=i):
            return total(feats[:i] + [t] + feats[i + 1:], logits)

        def f_log(t, i=i):
            return total(feats, logits[:i] + [t] + logits[i + 1:])
        err = max(err, _check(f_feat, feats[i], gf[i]), _check(f_log, logits[i], gl[i]))
    return err


def check_encoder(rng):
    arch = model.Architecture(encoder_channels=3, feature_channels=3, depth_bins=4,
                              feature_stride=4)
    params = model.init_model_params(arch, rng)
    imgs = rng.normal(size=(2, 3, 8, 12))
    gf = rng.normal(size=(2, 3, 2, 3))
    gd = rng.normal(size=(2, 4, 2, 3))
    slope = rng.normal(size=(2, 3))

    def objective():
        f, d = model.encode_images(imgs, params, slope)
        return (f * gf).sum() + (d * gd).sum()

    _, _, cache = model.encode_images(imgs, params, slope, return_cache=True)
    gimg, grads = model.encode_images_backward(cache, gf, gd, params)
    err = _check(lambda t: _param_closure({"x": imgs}, "x", objective)(t), imgs.copy(), gimg)
    for name, g in grads.items():
        err = max(err, _check(_param_closure(params, name, objective), params[name].copy(), g))
    return err


def check_loss(rng):
    logits = rng.normal(size=(3, 4, 5))
    labels = rng.integers(0, 3, size=(4, 5))
    _, g = model.cross_entropy_loss(logits, labels)
    return _check(lambda t: model.cross_entropy_loss(t, labels)[0], logits, g)


def micro_model(rng, temporal_module="geo-convgru", weight_scale=3.0):
    """Grid 16x16, T = 2, two cameras, three channels everywhere.

    Weights are drawn at ``weight_scale`` times the training init: at the
    training scale several ConvGRU gradients sit near 1e-8, where central
    differences are dominated by round-off.
    """
    arch = model.Architecture(temporal_module=temporal_module, temporal_field=2,
                              encoder_channels=3, feature_channels=3, hidden_channels=3,
                              head_channels=3, depth_bins=4, gru_units=2, kernel_size=3,
                              feature_stride=4)
    grid = BevGridSpec(16.0, 16.0, 1.0)
    rig = _micro_rig()
    geom = model.Geometry(rig, grid, np.linspace(1.0, 9.0, 4), (16, 24), 4, 0.1)
    params = model.init_model_params(arch, rng)
    for p in params.values():
        p *= weight_scale
    params["head.bias"] = rng.normal(size=arch.num_classes) * 0.1
    images = rng.uniform(0.0, 1.0, size=(2, len(rig), 3, 16, 24))
    labels = rng.integers(0, 2, size=grid.shape)
    return arch, geom, params, images, labels


def check_end_to_end(rng, modules=("static", "conv3d", "convgru", "geo-convgru")):
    return max(_check_model(rng, m) for m in modules)


def _check_model(rng, temporal_module):
    arch, geom, params, images, labels = micro_model(rng, temporal_module)

    def loss():
        return model.cross_entropy_loss(model.model_forward(params, arch, geom, images), labels)[0]

    _, grads = model.model_loss_and_grad(params, arch, geom, images, labels)
    err = 0.0
    for name, g in grads.items():
        if not np.any(g):
            return float("inf")  # dead parameter
        err = max(err, _check(_param_closure(params, name, loss), params[name].copy(), g))
    return err


COMPONENTS = OrderedDict([
    ("conv2d", check_conv2d),
    ("convgru_cell", check_convgru_cell),
    ("bptt", check_bptt),
    ("conv3d", check_conv3d),
    ("lift-splat", check_lift_splat),
    ("encoder", check_encoder),
    ("loss", check_loss),
    ("end-to-end", check_end_to_end),
])


def run_gradcheck(seed=0, tolerance=TOLERANCE, components=None):
    """Returns a list of ``(component, worst relative error, seconds, passed)``."""
    results = []
    for name, fn in COMPONENTS.items():
        if components is not None and name not in components:
            continue
        t0 = time.perf_counter()
        err = fn(np.random.default_rng(seed))
        results.append((name, err, time.perf_counter() - t0, bool(err <= tolerance)))
    return results
