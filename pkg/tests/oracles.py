"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the library's numerical code; each function is written
from the textbook definition with explicit loops.
"""
from __future__ import annotations

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad_begin=(0, 0), pad_end=(0, 0)):
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    xp = np.zeros((n, c, h + pad_begin[0] + pad_end[0], wd + pad_begin[1] + pad_end[1]))
    xp[:, :, pad_begin[0]:pad_begin[0] + h, pad_begin[1]:pad_begin[1] + wd] = x
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(n):
        for o in range(co):
            for y in range(oh):
                for z in range(ow):
                    patch = xp[i, :, y * stride:y * stride + kh, z * stride:z * stride + kw]
                    out[i, o, y, z] = np.sum(patch * w[o]) + (0.0 if b is None else b[o])
    return out


def conv_transpose_zero_insert(x, w, b=None, rate=2, pad=0):
    """Zero-insertion upsampling, full correlation with the flipped kernel, crop."""
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    up = np.zeros((n, ci, (h - 1) * rate + 1, (wd - 1) * rate + 1))
    up[:, :, ::rate, ::rate] = x
    # full correlation with the flipped kernel == full convolution with w
    full = np.zeros((n, co, up.shape[2] + kh - 1, up.shape[3] + kw - 1))
    for i in range(n):
        for o in range(co):
            for c in range(ci):
                for y in range(up.shape[2]):
                    for z in range(up.shape[3]):
                        if up[i, c, y, z] != 0.0:
                            full[i, o, y:y + kh, z:z + kw] += up[i, c, y, z] * w[c, o]
    out = full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]
    if b is not None:
        out = out + np.asarray(b)[None, :, None, None]
    return out


def full_convolution(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    return out


def repeated_zoh(rate, order):
    k = np.ones((rate, rate))
    for _ in range(order):
        k = full_convolution(k, np.ones((rate, rate)))
    return k


def depthwise_loops(x, kernel, bias, pad_begin, pad_end):
    n, c, h, w = x.shape
    kh, kw = kernel.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(n):
        for ch in range(c):
            for y in range(h):
                for z in range(w):
                    acc = 0.0
                    for p in range(kh):
                        for q in range(kw):
                            yy, zz = y + p - pad_begin, z + q - pad_begin
                            if 0 <= yy < h and 0 <= zz < w:
                                acc += kernel[p, q] * x[i, ch, yy, zz]
                    out[i, ch, y, z] = acc + bias[ch]
    return out


def ssim_loops(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for y in range(a.shape[0] - size + 1):
        for x in range(a.shape[1] - size + 1):
            pa = a[y:y + size, x:x + size]
            pb = b[y:y + size, x:x + size]
            ma, mb = np.sum(win * pa), np.sum(win * pb)
            va = np.sum(win * (pa - ma) ** 2)
            vb = np.sum(win * (pb - mb) ** 2)
            cov = np.sum(win * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def dft2_direct(img):
    h, w = img.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for y in range(h):
                for x in range(w):
                    acc += img[y, x] * np.exp(-2j * np.pi * (u * y / h + v * x / w))
            out[u, v] = acc
    return out


def bilinear_half_pixel(img, out_h, out_w):
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


def adam_scalar(x0, grad_fn, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, path = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        path.append(x)
    return path


def numerical_grad(f, arrays, index, step=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        h = step * max(1.0, abs(x[i]))
        orig = x[i]
        x[i] = orig + h
        fp = f(*arrays)
        x[i] = orig - h
        fm = f(*arrays)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
