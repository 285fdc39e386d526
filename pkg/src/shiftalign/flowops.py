"""Flow warping, cycle-consistency validity and flow resampling.

Flows are plain ``[H, W, 2]`` arrays in pixels at their own resolution,
channel 0 = dx (rightward), channel 1 = dy (downward).  A flow stored at frame
``t`` points into another frame, and warping *samples* that other frame:
``out(x, y) = src(x + dx(x, y), y + dy(x, y))``.  Flows never carry gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .numerics import Tensor, as_tensor, make_op
from .numerics.tensor import ShapeError

# slack for sampling points that land on the last row/column up to rounding
_EDGE_TOL = 1e-5


@dataclass(frozen=True)
class ValidityConfig:
    delta: float = 1.0
    soft: bool = False
    soft_scale: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.soft and not self.soft_scale > 0:
            raise ValueError(f"soft_scale must be > 0, got {self.soft_scale}")

    def scaled(self, factor: float) -> "ValidityConfig":
        return ValidityConfig(self.delta * factor, self.soft, self.soft_scale * factor)


def check_flow(flow) -> np.ndarray:
    """Validate a flow field; used when flows enter from files or callers."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeError(f"flow must be [H, W, 2], got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    h, w = flow.shape[:2]
    if np.any(np.abs(flow[..., 0]) > w) or np.any(np.abs(flow[..., 1]) > h):
        raise ValueError(f"flow magnitude exceeds frame extent {w}x{h}")
    return flow


def _taps(flow: np.ndarray):
    """Bilinear corner indices/weights for sampling at ``grid + flow``.

    ``flow`` is ``[B, H, W, 2]``.  Returns flat indices ``[B, 4, H*W]`` into an
    ``H*W`` image, matching weights (zero for out-of-image corners) and the
    in-bounds indicator ``[B, H, W]``.
    """
    b, h, w, _ = flow.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = xs[None] + flow[..., 0].astype(np.float64)
    sy = ys[None] + flow[..., 1].astype(np.float64)
    inb = (sx >= -_EDGE_TOL) & (sx <= w - 1 + _EDGE_TOL) & (sy >= -_EDGE_TOL) & (sy <= h - 1 + _EDGE_TOL)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    ax = sx - x0
    ay = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    idx = np.empty((b, 4, h * w), dtype=np.int64)
    wts = np.empty((b, 4, h * w), dtype=np.float64)
    corners = ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)), (0, 1, (1 - ax) * ay), (1, 1, ax * ay))
    for k, (ox, oy, wk) in enumerate(corners):
        cx = x0 + ox
        cy = y0 + oy
        inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        idx[:, k] = (np.clip(cy, 0, h - 1) * w + np.clip(cx, 0, w - 1)).reshape(b, -1)
        wts[:, k] = np.where(inside, wk, 0.0).reshape(b, -1)
    return idx, wts, inb


def _gather(src: np.ndarray, idx: np.ndarray, wts: np.ndarray) -> np.ndarray:
    # src [B, C, HW]; idx, wts [B, 4, HW]
    b, c, hw = src.shape
    out = np.zeros((b, c, idx.shape[-1]), dtype=np.float64)
    for k in range(4):
        vals = np.take_along_axis(src, np.broadcast_to(idx[:, k][:, None, :], (b, c, idx.shape[-1])), axis=2)
        out += vals * wts[:, k][:, None, :]
    return out


def warp_batch(source, flows) -> Tuple[Tensor, np.ndarray]:
    """Backward-warp every frame of ``source[B, C, H, W]`` by ``flows[B, H, W, 2]``.

    Differentiable with respect to ``source``.  Returns the warped tensor and the
    ``[B, H, W]`` in-bounds indicator (1 where the sampling point lies inside the
    image; out-of-image corners contribute zero).
    """
    src = as_tensor(source)
    flows = np.asarray(flows)
    if src.ndim != 4 or flows.ndim != 4 or flows.shape[-1] != 2:
        raise ShapeError(f"expected source [B,C,H,W] and flows [B,H,W,2], got {src.shape} and {flows.shape}")
    b, c, h, w = src.shape
    if flows.shape[:3] != (b, h, w):
        raise ShapeError(f"flow resolution {flows.shape[:3]} does not match source {(b, h, w)}")
    idx, wts, inb = _taps(flows)
    flat = src.data.reshape(b, c, h * w)
    out = _gather(flat.astype(np.float64), idx, wts).astype(src.dtype).reshape(b, c, h, w)

    def backward(g):
        g = g.reshape(b, c, h * w).astype(np.float64)
        base = (np.arange(b * c, dtype=np.int64) * (h * w)).reshape(b, c, 1, 1)
        full_idx = (base + idx[:, None, :, :]).reshape(-1)
        full_w = (g[:, :, None, :] * wts[:, None, :, :]).reshape(-1)
        gsrc = np.bincount(full_idx, weights=full_w, minlength=b * c * h * w)
        return (gsrc.reshape(src.shape).astype(src.dtype),)

    return make_op(out, (src,), backward), inb.astype(src.dtype)


def warp_bilinear(source, flow) -> Tuple[Tensor, np.ndarray]:
    """Warp ``source[C, H, W]`` by a single ``[H, W, 2]`` flow."""
    src = as_tensor(source)
    flow = np.asarray(flow)
    if src.ndim != 3:
        raise ShapeError(f"source must be [C,H,W], got {src.shape}")
    if flow.shape != src.shape[1:] + (2,):
        raise ShapeError(f"flow shape {flow.shape} does not match source resolution {src.shape[1:]}")
    out, inb = warp_batch(src.reshape(1, *src.shape), flow[None])
    return out.reshape(*src.shape), inb[0]


def sample_flow(flow: np.ndarray, at: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample ``flow`` at the points ``grid + at``; zero outside."""
    h, w, _ = flow.shape
    idx, wts, inb = _taps(at[None])
    src = np.moveaxis(flow, -1, 0).reshape(1, 2, h * w).astype(np.float64)
    vals = _gather(src, idx, wts).reshape(2, h, w)
    return np.moveaxis(vals, 0, -1), inb[0]


def cycle_error(flow_fwd, flow_bwd) -> Tuple[np.ndarray, np.ndarray]:
    """Round-trip error of following ``flow_bwd`` then ``flow_fwd`` from every pixel."""
    flow_fwd = np.asarray(flow_fwd, dtype=np.float64)
    flow_bwd = np.asarray(flow_bwd, dtype=np.float64)
    if flow_fwd.shape != flow_bwd.shape or flow_fwd.ndim != 3 or flow_fwd.shape[-1] != 2:
        raise ShapeError(f"flow shapes differ or are malformed: {flow_fwd.shape} vs {flow_bwd.shape}")
    back, inb = sample_flow(flow_fwd, flow_bwd)
    err = np.sqrt(np.sum((flow_bwd + back) ** 2, axis=-1))
    return err, inb


def cycle_validity(flow_fwd, flow_bwd, cfg: ValidityConfig = ValidityConfig()) -> np.ndarray:
    """Validity of ``flow_bwd``: the round trip must return within ``cfg.delta`` pixels.

    From each pixel A, step along ``flow_bwd`` to B, read ``flow_fwd`` at B and
    step back; A is valid iff B is inside the image and the return point is
    closer than ``delta`` to A.  Soft mode replaces the threshold by
    ``exp(-err**2 / soft_scale**2)``.
    """
    err, inb = cycle_error(flow_fwd, flow_bwd)
    if cfg.soft:
        mask = np.exp(-(err**2) / cfg.soft_scale**2) * inb
    else:
        mask = ((err < cfg.delta) & inb).astype(np.float64)
    return mask.astype(np.float32)


def _resample_axis_coords(n_in: int, n_out: int):
    # pixel-centre alignment; edge samples clamp
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize over the leading two axes of ``image[H, W, ...]``."""
    h, w = image.shape[:2]
    if (h, w) == (new_h, new_w):
        return np.array(image, copy=True)
    y0, y1, fy = _resample_axis_coords(h, new_h)
    x0, x1, fx = _resample_axis_coords(w, new_w)
    extra = (1,) * (image.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def rescale_flow(flow, new_h: int, new_w: int) -> np.ndarray:
    """Resample a flow to ``new_h x new_w`` and rescale its displacements to that grid."""
    flow = np.asarray(flow)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target extent must be >= 1, got {new_h}x{new_w}")
    h, w = flow.shape[:2]
    out = resize_bilinear(flow, new_h, new_w)
    out[..., 0] *= new_w / w
    out[..., 1] *= new_h / h
    return out.astype(flow.dtype if flow.dtype.kind == "f" else np.float64)


def synth_flow(kind: str, h: int, w: int, **params) -> np.ndarray:
    """Analytic displacement field of a rigid motion.

    ``constant``: ``dx, dy``.  ``rotation``: ``theta`` (radians) about ``center``.
    ``zoom``: ``scale`` about ``center``.  ``center`` defaults to the image centre.
    """
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if kind == "constant":
        dx, dy = float(params.get("dx", 0.0)), float(params.get("dy", 0.0))
        flow = np.stack([np.full((h, w), dx), np.full((h, w), dy)], axis=-1)
    elif kind in ("rotation", "zoom"):
        cx, cy = params.get("center", ((w - 1) / 2.0, (h - 1) / 2.0))
        rx, ry = xs - cx, ys - cy
        if kind == "rotation":
            th = float(params["theta"])
            c, s = np.cos(th), np.sin(th)
            nx, ny = c * rx - s * ry, s * rx + c * ry
        else:
            sc = float(params["scale"])
            nx, ny = sc * rx, sc * ry
        flow = np.stack([nx - rx, ny - ry], axis=-1)
    else:
        raise ValueError(f"unknown flow kind {kind!r}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("non-finite flow parameters")
    return flow.astype(np.float32)
