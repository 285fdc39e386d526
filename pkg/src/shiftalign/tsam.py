"""Temporal shift, flow-aligned temporal shift and the gated TSAM convolution.

Features are laid out ``[T, C, H, W]`` (time in the batch axis).  Channels
``[0:f]`` are borrowed from frame ``t-1`` and ``[f:2f]`` from frame ``t+1``;
the remaining channels always pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import numerics as N
from .flowops import warp_batch
from .numerics import Tensor, as_tensor, make_op
from .numerics.nn import Conv2d, Module
from .numerics.tensor import ShapeError

ALIGN_MODES = ("tsam", "tsm")


@dataclass(frozen=True)
class ShiftSpec:
    shift_fraction: Fraction = Fraction(1, 8)

    def channels(self, c: int) -> int:
        """Channels moved per direction for a ``c``-channel feature (floor, at least 1)."""
        f = max(1, int(Fraction(self.shift_fraction) * c))
        if 2 * f > c:
            raise ValueError(f"cannot shift 2*{f} channels out of {c}")
        return f


@dataclass
class FlowLevel:
    """Flows and validity masks for one feature resolution.

    ``to_prev[t]`` samples frame ``t-1`` into frame ``t``'s grid and
    ``to_next[t]`` samples frame ``t+1``; ``valid_*`` are ``[T, H, W]``.
    """

    to_prev: np.ndarray
    to_next: np.ndarray
    valid_prev: np.ndarray
    valid_next: np.ndarray

    @property
    def resolution(self):
        return self.to_prev.shape[1:3]

    def perturbed(self, fn) -> "FlowLevel":
        return FlowLevel(fn(self.to_prev), fn(self.to_next), self.valid_prev, self.valid_next)


@dataclass
class AlignedFeature:
    tensor: Tensor
    f: int

    @property
    def modified(self) -> slice:
        return slice(0, 2 * self.f)


def temporal_shift(x, spec: ShiftSpec = ShiftSpec()) -> Tensor:
    """Plain TSM: zero fill at the temporal boundaries."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected [T,C,H,W], got {x.shape}")
    t = x.shape[0]
    if t == 0:
        raise ValueError("temporal_shift needs at least one frame")
    f = spec.channels(x.shape[1])
    out = x.data.copy()
    out[:, : 2 * f] = 0
    out[1:, :f] = x.data[:-1, :f]
    out[:-1, f : 2 * f] = x.data[1:, f : 2 * f]

    def backward(g):
        gx = g.copy()
        gx[:, : 2 * f] = 0
        gx[:-1, :f] = g[1:, :f]
        gx[1:, f : 2 * f] = g[:-1, f : 2 * f]
        return (gx,)

    return make_op(out, (x,), backward)


def _band_mask(valid: np.ndarray, f: int, dtype) -> np.ndarray:
    v = np.asarray(valid, dtype=dtype)
    return np.ascontiguousarray(np.broadcast_to(v[:, None], (v.shape[0], f) + v.shape[1:]))


def shift_and_align(x, level: FlowLevel, spec: ShiftSpec = ShiftSpec()) -> AlignedFeature:
    """Shift neighbour bands, warp them onto frame ``t`` and fuse by validity.

    ``out[t, 0:f] = v_prev * warp(x[t-1, 0:f]) + (1 - v_prev) * x[t, 0:f]`` and
    likewise for ``[f:2f]`` from ``t+1``.  Missing neighbours at the clip ends
    are zero; callers mark them invalid.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected [T,C,H,W], got {x.shape}")
    t, c, h, w = x.shape
    if tuple(level.resolution) != (h, w) or level.to_prev.shape[0] != t:
        raise ShapeError(f"flow level {level.to_prev.shape[:3]} does not match feature {(t, h, w)}")
    f = spec.channels(c)
    zero = np.zeros((1, f, h, w), dtype=x.dtype)

    prev_src = N.concat([zero, x[: t - 1, :f]], axis=0) if t > 1 else Tensor(zero)
    next_src = N.concat([x[1:, f : 2 * f], zero], axis=0) if t > 1 else Tensor(zero)
    warped_prev, _ = warp_batch(prev_src, level.to_prev)
    warped_next, _ = warp_batch(next_src, level.to_next)

    vp = _band_mask(level.valid_prev, f, x.dtype)
    vn = _band_mask(level.valid_next, f, x.dtype)
    band_prev = warped_prev * vp + x[:, :f] * (1.0 - vp)
    band_next = warped_next * vn + x[:, f : 2 * f] * (1.0 - vn)
    out = N.concat([band_prev, band_next, x[:, 2 * f :]], axis=1)
    return AlignedFeature(out, f)


def tsam_gated_conv(
    x,
    level: Optional[FlowLevel],
    weight,
    bias,
    gate_weight,
    gate_bias,
    spec: ShiftSpec = ShiftSpec(),
    stride: int = 1,
    pad: Optional[int] = None,
    mode: str = "tsam",
) -> Tensor:
    """``conv(shift_and_align(x)) * sigmoid(conv_gate(x))``; the gate sees the unaligned input.

    ``mode="tsm"`` swaps the aligned shift for the plain temporal shift.
    """
    x = as_tensor(x)
    if pad is None:
        pad = weight.shape[-1] // 2
    if mode == "tsam":
        if level is None:
            raise ValueError("tsam mode needs a flow level")
        mixed = shift_and_align(x, level, spec).tensor
    elif mode == "tsm":
        mixed = temporal_shift(x, spec)
    else:
        raise ValueError(f"unknown alignment mode {mode!r}")
    feat = N.conv2d(mixed, weight, bias, stride, pad)
    gate = N.sigmoid(N.conv2d(x, gate_weight, gate_bias, stride, pad))
    return feat * gate


class TSAMGatedConv(Module):
    def __init__(self, cin, cout, k, rng, stride=1, spec: ShiftSpec = ShiftSpec()):
        self.spec = spec
        self.stride = stride
        self.feature = Conv2d(cin, cout, k, rng, stride=stride)
        self.gate = Conv2d(cin, cout, k, rng, stride=stride)
        spec.channels(cin)

    def forward(self, x: Tensor, level: Optional[FlowLevel], mode: str = "tsam") -> Tensor:
        return tsam_gated_conv(
            x,
            level,
            self.feature.weight,
            self.feature.bias,
            self.gate.weight,
            self.gate.bias,
            self.spec,
            self.stride,
            self.feature.pad,
            mode,
        )


def receptive_field(n: int) -> int:
    """Frames seen by one output frame after ``n`` stacked shift modules.

    Each shift widens the window by one frame on either side, so one module
    sees 3 frames and ``n`` modules see ``2n + 1``.
    """
    if n < 0:
        raise ValueError("module count must be >= 0")
    return 2 * n + 1
