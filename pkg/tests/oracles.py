"""Independent reference implementations written with explicit loops.

They share no code with the package and are deliberately slow.
"""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    k, c2, kh, kw = w.shape
    assert c == c2
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ci, y * stride + dy, xx * stride + dx] * w[o, ci, dy, dx]
                    out[i, o, y, xx] = acc
    return out


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for q in range(k):
                s += a[i, q] * b[q, j]
            out[i, j] = s
    return out


def bilinear_at(img, x, y):
    """Sample ``img[C,H,W]`` at real (x, y); corners outside the image read zero."""
    c, h, w = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    out = np.zeros(c)
    for yy, xx, wt in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)), (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)):
        if 0 <= yy < h and 0 <= xx < w and wt != 0.0:
            out += wt * img[:, yy, xx]
    return out


def warp_loops(src, flow):
    c, h, w = src.shape
    out = np.zeros((c, h, w))
    inb = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            sx, sy = x + flow[y, x, 0], y + flow[y, x, 1]
            out[:, y, x] = bilinear_at(src, sx, sy)
            inb[y, x] = float(-1e-5 <= sx <= w - 1 + 1e-5 and -1e-5 <= sy <= h - 1 + 1e-5)
    return out, inb


def cycle_validity_loops(flow_fwd, flow_bwd, delta):
    """Per-pixel round trip: A -> B = A + bwd(A) -> A + bwd(A) + fwd(B)."""
    h, w, _ = flow_fwd.shape
    fwd = np.moveaxis(np.asarray(flow_fwd, dtype=np.float64), -1, 0)
    mask = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            bx, by = x + flow_bwd[y, x, 0], y + flow_bwd[y, x, 1]
            inside = -1e-5 <= bx <= w - 1 + 1e-5 and -1e-5 <= by <= h - 1 + 1e-5
            back = bilinear_at(fwd, bx, by)
            err = math.hypot(flow_bwd[y, x, 0] + back[0], flow_bwd[y, x, 1] + back[1])
            mask[y, x] = float(inside and err < delta)
    return mask


def shift_gather(x, f):
    """Temporal shift by index arithmetic: band 0 reads t-1, band 1 reads t+1."""
    t, c = x.shape[:2]
    out = np.zeros_like(x)
    for ti in range(t):
        for ci in range(c):
            src = ti - 1 if ci < f else (ti + 1 if ci < 2 * f else ti)
            if 0 <= src < t:
                out[ti, ci] = x[src, ci]
    return out


def receptive_field_probe(n, t=None):
    """Count frames that influence the middle output after ``n`` shift+mix layers.

    Each layer shifts one channel each way and then mixes all channels per frame,
    so influence spreads one frame per layer in each direction.
    """
    t = t or 2 * n + 7
    # track which input frames reach each (frame, channel)
    reach = [[{ti} for _ in range(3)] for ti in range(t)]
    for _ in range(n):
        shifted = []
        for ti in range(t):
            row = [set(), set(), set(reach[ti][2])]
            if ti > 0:
                row[0] = set(reach[ti - 1][0])
            if ti < t - 1:
                row[1] = set(reach[ti + 1][1])
            shifted.append(row)
        reach = [[set().union(*r) for _ in range(3)] for r in shifted]
    return len(set().union(*reach[t // 2]))
