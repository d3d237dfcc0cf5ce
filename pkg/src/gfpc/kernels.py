"""Single-image 2-D convolution with two interchangeable backends.

A compiled extension (gfpc._convcore, built from Cython) carries the hot
loops; a pure-numpy fallback takes over when the extension is missing. The
active backend is picked once at import time, honoring the GFPC_BACKEND
environment variable ("compiled", "numpy", or "auto").

Forward passes are bit-identical across backends and also match the naive
quadruple-loop reference, because every implementation accumulates the
partial products of one output element in the same (in-channel, kernel-row,
kernel-col) order and the extension is compiled with FMA contraction off.
Backward passes are deterministic within a backend but may differ across
backends in the last bits, since the fallback reduces via BLAS.

Convolution here is cross-correlation (no kernel flip) over a single CHW
image with symmetric zero padding and a uniform stride.
"""

import os

import numpy as np

from .errors import ContractError, DimensionError

try:
    from . import _convcore
except ImportError:
    _convcore = None

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _pick_backend(requested):
    if requested == "auto":
        return "compiled" if _convcore is not None else "numpy"
    if requested == "compiled":
        if _convcore is None:
            raise ContractError(
                "GFPC_BACKEND=compiled but the gfpc._convcore extension "
                "is not importable"
            )
        return "compiled"
    if requested == "numpy":
        return "numpy"
    raise ContractError(f"unknown backend {requested!r}")


BACKEND = _pick_backend(os.environ.get("GFPC_BACKEND", "auto"))


def set_backend(name):
    """Switch the active backend ("compiled" or "numpy"). Returns the
    previous name so callers can restore it."""
    global BACKEND
    previous = BACKEND
    BACKEND = _pick_backend(name)
    return previous


def compiled_available():
    return _convcore is not None


def _check_conv_args(x, w, stride, padding):
    if x.ndim != 3:
        raise DimensionError(f"input must be CHW, got shape {x.shape}")
    if w.ndim != 4:
        raise DimensionError(f"weights must be OIHW, got shape {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise DimensionError(
            f"input has {x.shape[0]} channels but weights expect {w.shape[1]}"
        )
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"padding must be >= 0, got {padding}")
    if x.dtype != w.dtype:
        raise ContractError(
            f"mixed dtypes: input {x.dtype}, weights {w.dtype}"
        )
    if x.dtype not in _SUPPORTED_DTYPES:
        raise ContractError(f"unsupported dtype {x.dtype}")
    hp = x.shape[1] + 2 * padding
    wp = x.shape[2] + 2 * padding
    if w.shape[2] > hp or w.shape[3] > wp:
        raise DimensionError(
            f"kernel {w.shape[2]}x{w.shape[3]} larger than padded input "
            f"{hp}x{wp}"
        )
    ho = (hp - w.shape[2]) // stride + 1
    wo = (wp - w.shape[3]) // stride + 1
    return ho, wo


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d(x, w, stride=1, padding=0):
    """Correlate CHW input x with OIHW weights w. Returns [cout, ho, wo]."""
    ho, wo = _check_conv_args(x, w, stride, padding)
    xpad = _pad(x, padding)
    w = np.ascontiguousarray(w)
    out = np.empty((w.shape[0], ho, wo), dtype=x.dtype)
    if BACKEND == "compiled":
        _convcore.conv2d_forward(xpad, w, stride, out)
    else:
        _np_forward(xpad, w, stride, out)
    return out


def conv2d_backward(x, w, gout, stride=1, padding=0, need_gx=True):
    """Gradients of conv2d. Returns (gx, gw); gx is None if need_gx is False.

    gout must have the shape conv2d would produce for (x, w, stride,
    padding), and the same dtype as x.
    """
    ho, wo = _check_conv_args(x, w, stride, padding)
    if gout.shape != (w.shape[0], ho, wo):
        raise DimensionError(
            f"upstream gradient shape {gout.shape} does not match output "
            f"shape {(w.shape[0], ho, wo)}"
        )
    if gout.dtype != x.dtype:
        raise ContractError(
            f"mixed dtypes: input {x.dtype}, upstream gradient {gout.dtype}"
        )
    xpad = _pad(x, padding)
    w = np.ascontiguousarray(w)
    gout = np.ascontiguousarray(gout)
    gxpad = np.zeros_like(xpad)
    gw = np.empty_like(w)
    if BACKEND == "compiled":
        _convcore.conv2d_backward(xpad, w, gout, stride, gxpad, gw, need_gx)
    else:
        _np_backward(xpad, w, gout, stride, gxpad, gw, need_gx)
    if not need_gx:
        return None, gw
    if padding:
        h, wdt = x.shape[1], x.shape[2]
        gx = np.ascontiguousarray(
            gxpad[:, padding:padding + h, padding:padding + wdt]
        )
    else:
        gx = gxpad
    return gx, gw


def _np_forward(xpad, w, stride, out):
    cout, cin, kh, kw = w.shape
    ho, wo = out.shape[1], out.shape[2]
    out[:] = 0
    # One fused multiply-add per kernel tap, taps visited in (ci, i, j)
    # order: elementwise adds round the same way as the compiled scalar
    # loop, so the result is bit-identical.
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                sl = xpad[ci,
                          i:i + stride * (ho - 1) + 1:stride,
                          j:j + stride * (wo - 1) + 1:stride]
                out += sl[None, :, :] * w[:, ci, i, j, None, None]


def _np_backward(xpad, w, gout, stride, gxpad, gw, need_gx):
    cout, cin, kh, kw = w.shape
    ho, wo = gout.shape[1], gout.shape[2]
    for ci in range(cin):
        for i in range(kh):
            for j in range(kw):
                re = i + stride * (ho - 1) + 1
                ce = j + stride * (wo - 1) + 1
                win = xpad[ci, i:re:stride, j:ce:stride]
                gw[:, ci, i, j] = np.tensordot(
                    gout, win, axes=([1, 2], [0, 1])
                )
                if need_gx:
                    gxpad[ci, i:re:stride, j:ce:stride] += np.tensordot(
                        w[:, ci, i, j], gout, axes=(0, 0)
                    )


def reference_conv2d(x, w, stride=1, padding=0):
    """Quadruple-loop scalar reference. Slow; for tests and benchmarks."""
    ho, wo = _check_conv_args(x, w, stride, padding)
    xpad = _pad(x, padding)
    cout, cin, kh, kw = w.shape
    out = np.empty((cout, ho, wo), dtype=x.dtype)
    acc_t = x.dtype.type
    for co in range(cout):
        for y in range(ho):
            for x0 in range(wo):
                acc = acc_t(0)
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            acc = acc_t(
                                acc
                                + xpad[ci, stride * y + i, stride * x0 + j]
                                * w[co, ci, i, j]
                            )
                out[co, y, x0] = acc
    return out
