"""Vectorised numpy implementations of the hot kernels.

These are the reference path. Every function here has a loop-level twin in
``_numba`` with an identical signature; the two are checked against each
other in the test-suite.

Image layout is channel-last throughout: ``(N, H, W, C)`` for batches and
``(H, W, C)`` for single images. Convolution weights are ``(kh, kw, C, O)``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, kh, kw):
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (N, H, W, C, kh, kw)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


def conv2d_forward(x, w, b):
    """Stride-1 'same' convolution. x: (N,H,W,C), w: (kh,kw,C,O), b: (O,)."""
    n, h, wd, _ = x.shape
    kh, kw, c, o = w.shape
    cols = _im2col(x, kh, kw)
    out = cols @ w.reshape(kh * kw * c, o) + b
    return out.reshape(n, h, wd, o)


def conv2d_backward(x, w, dout):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias."""
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ph, pw = kh // 2, kw // 2
    cols = _im2col(x, kh, kw)
    d2 = dout.reshape(n * h * wd, o)
    dw = (cols.T @ d2).reshape(kh, kw, c, o)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(kh * kw * c, o).T).reshape(n, h, wd, kh, kw, c)
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, c))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph:ph + h, pw:pw + wd, :], dw, db


def maxpool2_forward(x):
    """2x2/stride-2 max pool; trailing odd row/column is dropped.

    Returns the pooled map and the winning offset (0..3, row-major inside the
    window, lowest offset on ties).
    """
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blk = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blk = blk.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = blk.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(blk, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout, idx, h, w):
    n, ho, wo, c = dout.shape
    onehot = (np.arange(4) == idx[..., None]) * dout[..., None]  # (N,ho,wo,C,4)
    blk = onehot.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros((n, h, w, c))
    dx[:, :2 * ho, :2 * wo, :] = blk.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def _axis_coords(n_in, n_out):
    # half-pixel centres, clamped to the valid sample range
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(img, out_h, out_w):
    """Resize an (H, W, C) float image with bilinear interpolation."""
    h, w, _ = img.shape
    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def rotate_zoom(img, angle_rad, zoom):
    """Rotate about the centre, then zoom about the centre; zero fill.

    Output pixel p samples the input at ``c + R(-angle) (p - c) / zoom``.
    """
    h, w, ch = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_a, sin_a = np.cos(angle_rad), np.sin(angle_rad)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = (yy - cy) / zoom
    dx = (xx - cx) / zoom
    sx = cx + cos_a * dx + sin_a * dy
    sy = cy - sin_a * dx + cos_a * dy
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    out = np.zeros_like(img, dtype=np.float64)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            yi = y0 + oy
            xi = x0 + ox
            ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            vals = np.zeros((h, w, ch))
            vals[ok] = img[yi[ok], xi[ok]]
            out += wy * wx * vals
    return out


def rmsprop_update(param, grad, acc, lr, rho, eps):
    """In-place RMSprop step on ``param`` and its square-gradient average ``acc``."""
    acc *= rho
    acc += (1.0 - rho) * grad * grad
    param -= lr * grad / (np.sqrt(acc) + eps)
