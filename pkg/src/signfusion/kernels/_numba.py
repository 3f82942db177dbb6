"""Loop-level numba twins of :mod:`signfusion.kernels._numpy`."""
import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b):
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.empty((n, h, wd, o))
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for q in range(o):
                    out[s, i, j, q] = b[q]
                for di in range(kh):
                    y = i + di - ph
                    if y < 0 or y >= h:
                        continue
                    for dj in range(kw):
                        xx = j + dj - pw
                        if xx < 0 or xx >= wd:
                            continue
                        for ci in range(c):
                            v = x[s, y, xx, ci]
                            if v == 0.0:
                                continue
                            for q in range(o):
                                out[s, i, j, q] += v * w[di, dj, ci, q]
    return out


@njit(cache=True)
def conv2d_backward(x, w, dout):
    n, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ph, pw = kh // 2, kw // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(o)
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for q in range(o):
                    db[q] += dout[s, i, j, q]
                for di in range(kh):
                    y = i + di - ph
                    if y < 0 or y >= h:
                        continue
                    for dj in range(kw):
                        xx = j + dj - pw
                        if xx < 0 or xx >= wd:
                            continue
                        for ci in range(c):
                            v = x[s, y, xx, ci]
                            acc = 0.0
                            for q in range(o):
                                g = dout[s, i, j, q]
                                dw[di, dj, ci, q] += v * g
                                acc += w[di, dj, ci, q] * g
                            dx[s, y, xx, ci] += acc
    return dx, dw, db


@njit(cache=True)
def maxpool2_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, ho, wo, c))
    idx = np.empty((n, ho, wo, c), dtype=np.int8)
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for q in range(c):
                    best = x[s, 2 * i, 2 * j, q]
                    arg = 0
                    for k in range(1, 4):
                        v = x[s, 2 * i + k // 2, 2 * j + k % 2, q]
                        if v > best:
                            best = v
                            arg = k
                    out[s, i, j, q] = best
                    idx[s, i, j, q] = arg
    return out, idx


@njit(cache=True)
def maxpool2_backward(dout, idx, h, w):
    n, ho, wo, c = dout.shape
    dx = np.zeros((n, h, w, c))
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for q in range(c):
                    k = idx[s, i, j, q]
                    dx[s, 2 * i + k // 2, 2 * j + k % 2, q] = dout[s, i, j, q]
    return dx


@njit(cache=True)
def _coord(i, n_in, n_out):
    src = (i + 0.5) * (n_in / n_out) - 0.5
    if src < 0.0:
        src = 0.0
    elif src > n_in - 1:
        src = n_in - 1.0
    i0 = int(np.floor(src))
    i1 = min(i0 + 1, n_in - 1)
    return i0, i1, src - i0


@njit(cache=True)
def bilinear_resize(img, out_h, out_w):
    h, w, ch = img.shape
    out = np.empty((out_h, out_w, ch))
    for i in range(out_h):
        y0, y1, fy = _coord(i, h, out_h)
        for j in range(out_w):
            x0, x1, fx = _coord(j, w, out_w)
            for q in range(ch):
                top = img[y0, x0, q] * (1.0 - fx) + img[y0, x1, q] * fx
                bot = img[y1, x0, q] * (1.0 - fx) + img[y1, x1, q] * fx
                out[i, j, q] = top * (1.0 - fy) + bot * fy
    return out


@njit(cache=True)
def rotate_zoom(img, angle_rad, zoom):
    h, w, ch = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_a, sin_a = np.cos(angle_rad), np.sin(angle_rad)
    out = np.zeros((h, w, ch))
    for i in range(h):
        dy = (i - cy) / zoom
        for j in range(w):
            dx = (j - cx) / zoom
            sx = cx + cos_a * dx + sin_a * dy
            sy = cy - sin_a * dx + cos_a * dy
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            fx = sx - x0
            fy = sy - y0
            for oy in range(2):
                yi = y0 + oy
                if yi < 0 or yi >= h:
                    continue
                wy = fy if oy else 1.0 - fy
                for ox in range(2):
                    xi = x0 + ox
                    if xi < 0 or xi >= w:
                        continue
                    wx = fx if ox else 1.0 - fx
                    for q in range(ch):
                        out[i, j, q] += wy * wx * img[yi, xi, q]
    return out


@njit(cache=True)
def _rmsprop_flat(p, g, a, lr, rho, eps):
    one_m = 1.0 - rho
    for k in range(p.size):
        gk = g[k]
        ak = rho * a[k] + one_m * gk * gk
        a[k] = ak
        p[k] -= lr * gk / (np.sqrt(ak) + eps)


def rmsprop_update(param, grad, acc, lr, rho, eps):
    _rmsprop_flat(param.reshape(-1), np.ascontiguousarray(grad).reshape(-1), acc.reshape(-1),
                  float(lr), float(rho), float(eps))
