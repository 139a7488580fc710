"""Dense float64 tensor kernel.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.
Every differentiable operation used by the model has a hand-written backward
here; there is no autodiff tape.
"""

import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError

DTYPE = np.float64

GTNS_MAGIC = b"GTNS\x00"
GTNS_VERSION = 1


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


def tensor_full(shape, value):
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: all dims must be >= 1")
    return np.full(shape, float(value), dtype=DTYPE)


# -- elementwise ---------------------------------------------------------


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_map(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def _broadcast_operand(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape == b.shape:
        return a, b
    # [H,W] or [1,H,W] operand over [C,H,W]
    if b.ndim == a.ndim - 1 and b.shape == a.shape[1:]:
        return a, b[None]
    if b.ndim == a.ndim and b.shape[0] == 1 and b.shape[1:] == a.shape[1:]:
        return a, b
    raise ShapeError(f"cannot broadcast {b.shape} onto {a.shape}")


def add(a, b):
    a, b = _broadcast_operand(a, b)
    return a + b


def sub(a, b):
    a, b = _broadcast_operand(a, b)
    return a - b


def mul(a, b):
    a, b = _broadcast_operand(a, b)
    return a * b


def softmax_channel(x):
    """Softmax over axis 0 of a ``[D, h, w]`` tensor."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def softmax_channel_backward(prob, grad_prob):
    return prob * (grad_prob - (prob * grad_prob).sum(axis=0, keepdims=True))


# -- convolution ---------------------------------------------------------


def _check_conv(x, kernel):
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d kernel must be [Cout,Cin,k,k], got {kernel.shape}")
    if kernel.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {kernel.shape[2]}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[0]}, kernel expects {kernel.shape[1]}"
        )


def _im2col(x, k):
    c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = np.empty((c, k, k, h, w), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            cols[:, a, b] = xp[:, a:a + h, b:b + w]
    return cols.reshape(c * k * k, h * w)


def _col2im(cols, shape, k):
    c, h, w = shape
    p = (k - 1) // 2
    cols = cols.reshape(c, k, k, h, w)
    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            xp[:, a:a + h, b:b + w] += cols[:, a, b]
    return xp[:, p:p + h, p:p + w]


def conv2d(x, kernel):
    """Zero-padded "same" cross-correlation without bias.

    ``x`` is ``[C_in, H, W]`` and ``kernel`` is ``[C_out, C_in, k, k]`` with odd
    ``k``; the output is ``[C_out, H, W]``.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    _check_conv(x, kernel)
    cout, _, k, _ = kernel.shape
    cols = _im2col(x, k)
    out = kernel.reshape(cout, -1) @ cols
    return out.reshape(cout, x.shape[1], x.shape[2])


def conv2d_backward(x, kernel, grad_out):
    """Return ``(grad_input, grad_kernel)`` for :func:`conv2d`."""
    x = np.asarray(x, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    _check_conv(x, kernel)
    cout, _, k, _ = kernel.shape
    if grad_out.shape != (cout,) + x.shape[1:]:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output "
            f"{(cout,) + x.shape[1:]}"
        )
    g = np.asarray(grad_out, dtype=DTYPE).reshape(cout, -1)
    cols = _im2col(x, k)
    grad_kernel = (g @ cols.T).reshape(kernel.shape)
    grad_input = _col2im(kernel.reshape(cout, -1).T @ g, x.shape, k)
    return grad_input, grad_kernel


def _patch_cols(x, s):
    *lead, c, h, w = x.shape
    cols = x.reshape(*lead, c, h // s, s, w // s, s)
    n = len(lead)
    order = list(range(n)) + [n, n + 2, n + 4, n + 1, n + 3]
    return cols.transpose(order).reshape(*lead, c * s * s, (h // s) * (w // s))


def patch_conv(x, kernel):
    """Non-overlapping strided convolution (kernel size == stride).

    ``x`` is ``[..., C_in, H, W]``; leading dims are treated as a batch.
    """
    x = np.asarray(x, dtype=DTYPE)
    *lead, c, h, w = x.shape
    cout, cin, s, s2 = kernel.shape
    if cin != c or s != s2:
        raise ShapeError(f"patch_conv kernel {kernel.shape} incompatible with input {x.shape}")
    if h % s or w % s:
        raise ShapeError(f"input spatial dims {(h, w)} not divisible by stride {s}")
    out = kernel.reshape(cout, -1) @ _patch_cols(x, s)
    return out.reshape(*lead, cout, h // s, w // s)


def patch_conv_backward(x, kernel, grad_out):
    *lead, c, h, w = x.shape
    cout, _, s, _ = kernel.shape
    cols = _patch_cols(x, s)
    g = grad_out.reshape(*lead, cout, -1)
    kflat = kernel.reshape(cout, -1)
    gk = np.einsum("bop,bkp->ok", g.reshape(-1, *g.shape[-2:]), cols.reshape(-1, *cols.shape[-2:]))
    gcols = kflat.T @ g  # [..., c*s*s, P]
    n = len(lead)
    gx = gcols.reshape(*lead, c, s, s, h // s, w // s)
    order = list(range(n)) + [n, n + 3, n + 1, n + 4, n + 2]
    gx = gx.transpose(order).reshape(*lead, c, h, w)
    return gx, gk.reshape(kernel.shape)


# -- verification oracle -------------------------------------------------


def finite_diff_grad(f, x, step=1e-5, indices=None):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``indices`` optionally restricts evaluation to a subset of flat positions;
    the remaining entries of the result are left at zero.
    """
    x = np.array(x, dtype=DTYPE, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """Max abs deviation scaled by the larger of the two max magnitudes."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


# -- GTNS file format ----------------------------------------------------


def save_tensor(path, x):
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim > 255:
        raise ShapeError("GTNS supports at most 255 dims")
    header = GTNS_MAGIC + struct.pack("<IB", GTNS_VERSION, x.ndim)
    header += struct.pack(f"<{x.ndim}I", *x.shape)
    Path(path).write_bytes(header + x.tobytes())


def load_tensor(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:5] != GTNS_MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a GTNS tensor")
    if len(buf) < 10:
        raise FormatError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<IB", buf, 5)
    if version != GTNS_VERSION:
        raise FormatError(f"{path}: unsupported GTNS version {version}")
    off = 10
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != 8 * n:
        raise FormatError(f"{path}: expected {n} values, found {(len(buf) - off) // 8}")
    return np.frombuffer(buf, dtype="<f8", offset=off, count=n).astype(DTYPE).reshape(dims)
