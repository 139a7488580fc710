"""Convolutional GRU over a BEV temporal window, plus a 3D-conv temporal baseline.

Per timestep and unit::

    z = sigmoid(W_z * f + U_z * h)
    r = sigmoid(W_r * f + U_r * h)
    n = tanh(W * f + U * (r . h))
    h' = (1 - z) . h + z . n

where ``*`` is a bias-free same-padded 2D convolution. Units are stacked in
depth: unit ``u`` consumes the per-timestep hidden states of unit ``u - 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidValueError, ShapeError, StateError
from .tensor import DTYPE, conv2d, conv2d_backward, sigmoid, tanh_map

KERNEL_NAMES = ("wz", "uz", "wr", "ur", "w", "u")


def init_kernel(rng, shape):
    """Uniform in +-sqrt(1 / fan_in), fan_in = C_in * prod(spatial)."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


@dataclass
class ConvGruParams:
    units: list = field(default_factory=list)

    @classmethod
    def init(cls, in_channels, hidden_channels, num_units=2, kernel_size=3, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        units = []
        c_in = in_channels
        for _ in range(num_units):
            unit = {}
            for name in KERNEL_NAMES:
                src = c_in if name.startswith("w") else hidden_channels
                unit[name] = init_kernel(rng, (hidden_channels, src, kernel_size, kernel_size))
            units.append(unit)
            c_in = hidden_channels
        return cls(units)

    @property
    def num_units(self):
        return len(self.units)

    @property
    def hidden_channels(self):
        return self.units[0]["uz"].shape[0]

    @property
    def kernel_size(self):
        return self.units[0]["uz"].shape[-1]

    def named(self, prefix="gru"):
        for i, unit in enumerate(self.units):
            for name in KERNEL_NAMES:
                yield f"{prefix}.{i}.{name}", unit[name]

    def zeros_like(self):
        return ConvGruParams([{k: np.zeros_like(v) for k, v in u.items()} for u in self.units])


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    rh: np.ndarray
    n: np.ndarray


def _stack_w(unit):
    return np.concatenate([unit["wz"], unit["wr"], unit["w"]])


def _stack_u(unit):
    return np.concatenate([unit["uz"], unit["ur"]])


def convgru_cell(x, h_prev, unit, return_cache=False):
    ch = unit["uz"].shape[0]
    if h_prev.shape != (ch,) + x.shape[1:]:
        raise ShapeError(f"hidden state {h_prev.shape} inconsistent with input {x.shape}")
    if unit["wz"].shape[1] != x.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, unit expects {unit['wz'].shape[1]}")
    ax = conv2d(x, _stack_w(unit))
    ah = conv2d(h_prev, _stack_u(unit))
    z = sigmoid(ax[:ch] + ah[:ch])
    r = sigmoid(ax[ch:2 * ch] + ah[ch:])
    rh = r * h_prev
    n = tanh_map(ax[2 * ch:] + conv2d(rh, unit["u"]))
    h = (1.0 - z) * h_prev + z * n
    if return_cache:
        return h, CellCache(x, h_prev, z, r, rh, n)
    return h


def convgru_cell_backward(cache, grad_h, unit, grads=None):
    """Backward of one cell; kernel gradients are accumulated into ``grads``.

    Returns ``(grad_x, grad_h_prev, grads)``.
    """
    if cache is None:
        raise StateError("convgru_cell_backward called without a forward cache")
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in unit.items()}
    c = cache
    dz = grad_h * (c.n - c.h_prev)
    dn = grad_h * c.z
    dh = grad_h * (1.0 - c.z)
    dan = dn * (1.0 - c.n * c.n)
    d_rh, gu = conv2d_backward(c.rh, unit["u"], dan)
    dh += d_rh * c.r
    dar = d_rh * c.h_prev * c.r * (1.0 - c.r)
    daz = dz * c.z * (1.0 - c.z)
    dx, gw = conv2d_backward(c.x, _stack_w(unit), np.concatenate([daz, dar, dan]))
    dh_u, gu_stack = conv2d_backward(c.h_prev, _stack_u(unit), np.concatenate([daz, dar]))
    dh += dh_u
    ch = dz.shape[0]
    grads["wz"] += gw[:ch]
    grads["wr"] += gw[ch:2 * ch]
    grads["w"] += gw[2 * ch:]
    grads["uz"] += gu_stack[:ch]
    grads["ur"] += gu_stack[ch:]
    grads["u"] += gu
    return dx, dh, grads


def _window_array(window):
    frames = [np.asarray(f, dtype=DTYPE) for f in window]
    if not frames:
        raise InvalidValueError("temporal window is empty")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ShapeError("all frames in a temporal window must share one shape")
    return frames


def convgru_forward(window, params, return_cache=False):
    """Run the stacked recurrence; returns the last unit's final hidden state."""
    seq = _window_array(window)
    H, W = seq[0].shape[1:]
    caches = []
    for unit in params.units:
        ch = unit["uz"].shape[0]
        h = np.zeros((ch, H, W), dtype=DTYPE)
        out, unit_caches = [], []
        for x in seq:
            h, cache = convgru_cell(x, h, unit, return_cache=True)
            out.append(h)
            unit_caches.append(cache)
        caches.append(unit_caches)
        seq = out
    if return_cache:
        return seq[-1], caches
    return seq[-1]


def convgru_backward_through_time(window, params, grad_out, caches=None):
    """Returns ``(grad_window [T, C, H, W], grad_params)``."""
    if caches is None:
        _, caches = convgru_forward(window, params, return_cache=True)
    T = len(caches[0])
    grads = params.zeros_like()
    upstream = [None] * T
    upstream[-1] = np.asarray(grad_out, dtype=DTYPE)
    for u in reversed(range(params.num_units)):
        unit = params.units[u]
        dh_next = np.zeros_like(caches[u][0].h_prev)
        below = [None] * T
        for t in reversed(range(T)):
            g = dh_next if upstream[t] is None else upstream[t] + dh_next
            below[t], dh_next, _ = convgru_cell_backward(caches[u][t], g, unit, grads.units[u])
        upstream = below
    return np.stack(upstream), grads


# -- 3D convolution baseline ----------------------------------------------


def _conv3d_operands(window, kernel):
    frames = _window_array(window)
    T = len(frames)
    kernel = np.asarray(kernel, dtype=DTYPE)
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d kernel must be [C_out, C_in, T, k, k], got {kernel.shape}")
    if kernel.shape[2] != T:
        raise ShapeError(f"kernel temporal extent {kernel.shape[2]} != window length {T}")
    C, H, W = frames[0].shape
    if kernel.shape[1] != C:
        raise ShapeError(f"kernel expects {kernel.shape[1]} channels, frames have {C}")
    x = np.stack(frames, axis=1).reshape(C * T, H, W)  # channel-major, then time
    k2 = kernel.reshape(kernel.shape[0], C * T, kernel.shape[3], kernel.shape[4])
    return x, k2


def temporal_conv3d_baseline(window, kernel):
    """Spatially same-padded, temporally valid 3D convolution collapsing T frames to one."""
    x, k2 = _conv3d_operands(window, kernel)
    return conv2d(x, k2)


def temporal_conv3d_backward(window, kernel, grad_out):
    """Returns ``(grad_window [T, C, H, W], grad_kernel)``."""
    x, k2 = _conv3d_operands(window, kernel)
    gx, gk = conv2d_backward(x, k2, grad_out)
    C, T = kernel.shape[1], kernel.shape[2]
    gwin = gx.reshape(C, T, *gx.shape[1:]).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(gwin), gk.reshape(kernel.shape)
