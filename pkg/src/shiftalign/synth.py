"""Corruption masks and synthetic clips with analytic flows.

Textures are continuous functions of the plane, so every frame is an exact
sample of the moving canvas and the generating motion gives exact flows.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .flowops import synth_flow
from .imageio import to_uint8, write_pgm, write_ppm
from .numerics import tsr

MASK_KINDS = ("object_like", "curve", "stationary")
TEXTURES = ("checker", "gradient", "noise_blobs")
MOTIONS = ("static", "translation", "rotation", "zoom")
COVERAGE_TOL = 0.02
MAX_MASK_RETRIES = 50


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "object_like"
    coverage_band: Tuple[float, float] = (0.0, 0.1)
    motion_sigma: float = 1.5
    animate_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"mask kind must be one of {MASK_KINDS}, got {self.kind!r}")
        lo, hi = self.coverage_band
        if not (0.0 <= lo < hi <= 0.70 + 1e-12):
            raise ValueError(f"coverage band {self.coverage_band} must lie in [0, 0.7]")
        if not 0.0 <= self.animate_prob <= 1.0:
            raise ValueError("animate_prob must be in [0, 1]")

    @staticmethod
    def decile(i: int, **kw) -> "MaskSpec":
        """Band ``[i/10, (i+1)/10]`` for ``i`` in 0..6."""
        if not 0 <= i <= 6:
            raise ValueError("decile index must be in 0..6")
        return MaskSpec(coverage_band=(i / 10.0, (i + 1) / 10.0), **kw)


def _grid(h, w):
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")


def _blob(rng, h, w, scale):
    ys, xs = _grid(h, w)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    field_ = np.zeros((h, w))
    for _ in range(3):
        oy, ox = rng.normal(0, scale * 0.5, size=2)
        ry, rx = rng.uniform(0.5, 1.0, size=2) * scale
        field_ += np.exp(-(((ys - cy - oy) / ry) ** 2 + ((xs - cx - ox) / rx) ** 2))
    return field_ > 0.6


def _stroke(rng, h, w, scale):
    ys, xs = _grid(h, w)
    width = rng.uniform(3.0, 8.0)
    y, x = rng.uniform(0, h), rng.uniform(0, w)
    angle = rng.uniform(0, 2 * np.pi)
    out = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(2, 6))):
        length = rng.uniform(0.5, 1.0) * scale
        angle += rng.normal(0, 0.8)
        ny, nx = y + length * np.sin(angle), x + length * np.cos(angle)
        # distance to segment
        dy, dx = ny - y, nx - x
        t = np.clip(((ys - y) * dy + (xs - x) * dx) / max(dy * dy + dx * dx, 1e-9), 0, 1)
        d2 = (ys - y - t * dy) ** 2 + (xs - x - t * dx) ** 2
        out |= d2 <= (width / 2.0) ** 2
        y, x = ny, nx
    return out


def _rect(rng, h, w, scale):
    ys, xs = _grid(h, w)
    rh, rw = rng.uniform(0.4, 1.0, size=2) * scale * 2
    y0, x0 = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
    return (ys >= y0) & (ys < y0 + rh) & (xs >= x0) & (xs < x0 + rw)


def _base_shape(kind, rng, h, w, lo, hi):
    target = rng.uniform(max(lo, 0.01), hi)
    shape = np.zeros((h, w), dtype=bool)
    scale = min(h, w) * np.sqrt(max(target, 0.01)) * 0.5
    misses = 0
    while shape.mean() < target:
        if kind == "object_like":
            cand = _blob(rng, h, w, scale)
        elif kind == "curve":
            cand = _stroke(rng, h, w, scale)
        else:
            cand = _blob(rng, h, w, scale) if rng.random() < 0.5 else _rect(rng, h, w, scale)
        merged = shape | cand
        if merged.mean() > hi + COVERAGE_TOL or not cand.any():
            misses += 1
            scale *= 0.8
            if misses > 20:
                return None
            continue
        shape = merged
    return shape


def gen_mask(spec: MaskSpec, t: int, h: int, w: int, seed: int) -> np.ndarray:
    """Binary ``[T, 1, H, W]`` masks, 1 = valid, 0 = corrupted.

    A base shape is grown until its coverage reaches a target drawn from the
    band, then moved by an integer random walk with wrap-around, which keeps
    the per-frame coverage fixed.
    """
    rng = np.random.default_rng(seed)
    lo, hi = spec.coverage_band
    for _ in range(MAX_MASK_RETRIES):
        shape = _base_shape(spec.kind, rng, h, w, lo, hi)
        if shape is None:
            continue
        cov = shape.mean()
        if not (lo - COVERAGE_TOL <= cov <= hi + COVERAGE_TOL):
            continue
        moving = spec.kind != "stationary" or rng.random() < spec.animate_prob
        if moving:
            steps = rng.normal(0.0, spec.motion_sigma, size=(t, 2))
            steps[0] = 0.0
            offsets = np.round(np.cumsum(steps, axis=0)).astype(int)
        else:
            offsets = np.zeros((t, 2), dtype=int)
        frames = np.stack([np.roll(shape, tuple(off), axis=(0, 1)) for off in offsets])
        return (~frames).astype(np.float32)[:, None]
    raise ValueError(f"coverage band {spec.coverage_band} unreachable for {h}x{w} {spec.kind} masks")


# ---------------------------------------------------------------------------
# textures and motion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Motion:
    kind: str = "translation"
    dx: float = 1.0
    dy: float = 0.0
    theta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in MOTIONS:
            raise ValueError(f"motion kind must be one of {MOTIONS}, got {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "translation":
            return f"translation({self.dx!r},{self.dy!r})"
        if self.kind == "rotation":
            return f"rotation({self.theta!r})"
        if self.kind == "zoom":
            return f"zoom({self.scale!r})"
        return "static"

    @staticmethod
    def parse(text: str) -> "Motion":
        text = text.strip()
        if text == "static":
            return Motion("static", 0.0, 0.0)
        name, _, rest = text.partition("(")
        args = [float(v) for v in rest.rstrip(")").split(",") if v.strip()]
        if name == "translation":
            return Motion("translation", *args)
        if name == "rotation":
            return Motion("rotation", theta=args[0])
        if name == "zoom":
            return Motion("zoom", scale=args[0])
        raise ValueError(f"cannot parse motion {text!r}")

    def source_coords(self, xs, ys, t: int, cx: float, cy: float):
        """Canvas coordinates shown at pixel (xs, ys) of frame ``t``."""
        if self.kind == "translation":
            return xs - t * self.dx, ys - t * self.dy
        if self.kind == "rotation":
            a = -t * self.theta
            c, s = np.cos(a), np.sin(a)
            rx, ry = xs - cx, ys - cy
            return c * rx - s * ry + cx, s * rx + c * ry + cy
        if self.kind == "zoom":
            f = self.scale ** (-t)
            return cx + (xs - cx) * f, cy + (ys - cy) * f
        return xs, ys

    def flows(self, h: int, w: int):
        """``(to_prev, to_next)`` single-pair flows; the motion is stationary in time."""
        if self.kind == "translation":
            nxt = synth_flow("constant", h, w, dx=self.dx, dy=self.dy)
            prv = synth_flow("constant", h, w, dx=-self.dx, dy=-self.dy)
        elif self.kind == "rotation":
            nxt = synth_flow("rotation", h, w, theta=self.theta)
            prv = synth_flow("rotation", h, w, theta=-self.theta)
        elif self.kind == "zoom":
            nxt = synth_flow("zoom", h, w, scale=self.scale)
            prv = synth_flow("zoom", h, w, scale=1.0 / self.scale)
        else:
            nxt = prv = synth_flow("constant", h, w)
        return prv, nxt


def _texture_fn(kind: str, rng: np.random.Generator):
    if kind == "checker":
        period = rng.uniform(6.0, 12.0)
        phase = rng.uniform(0, 2 * period, size=2)
        c1, c2 = rng.uniform(-0.9, 0.9, size=(2, 3))

        def fn(x, y):
            s = np.tanh(3.0 * np.sin(np.pi * (x + phase[0]) / period) * np.sin(np.pi * (y + phase[1]) / period))
            return (c1 + c2)[:, None, None] / 2 + (c1 - c2)[:, None, None] / 2 * s

    elif kind == "gradient":
        freq = rng.uniform(0.02, 0.08, size=(3, 2)) * rng.choice([-1, 1], size=(3, 2))
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.4, 0.9, size=3)

        def fn(x, y):
            return np.stack([amp[c] * np.sin(freq[c, 0] * x + freq[c, 1] * y + phase[c]) for c in range(3)])

    elif kind == "noise_blobs":
        n = 40
        centers = rng.uniform(-64, 128, size=(n, 2))
        sig = rng.uniform(3.0, 8.0, size=n)
        colors = rng.uniform(-1.5, 1.5, size=(n, 3))
        base = rng.uniform(-0.3, 0.3, size=3)

        def fn(x, y):
            acc = np.zeros((3,) + np.shape(x)) + base[:, None, None]
            for (cx, cy), s, col in zip(centers, sig, colors):
                g = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
                acc += col[:, None, None] * g
            return np.tanh(acc)

    else:
        raise ValueError(f"texture must be one of {TEXTURES}, got {kind!r}")
    return fn


@dataclass
class SyntheticClip:
    frames: np.ndarray  # [T, 3, H, W] in [-1, 1]
    masks: np.ndarray  # [T, 1, H, W], 1 = valid
    to_prev: np.ndarray  # [T, H, W, 2]; entry 0 unused (zero)
    to_next: np.ndarray  # [T, H, W, 2]; last entry unused (zero)
    motion: Motion
    texture: str
    seed: int
    mask_spec: Optional[MaskSpec] = None
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def shape(self):
        return self.frames.shape


def gen_clip(motion: Motion, texture: str, t: int, h: int, w: int, seed: int, mask_spec: Optional[MaskSpec] = None) -> SyntheticClip:
    rng = np.random.default_rng(seed)
    fn = _texture_fn(texture, rng)
    ys, xs = _grid(h, w)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    frames = np.stack([fn(*motion.source_coords(xs, ys, i, cx, cy)) for i in range(t)]).astype(np.float32)
    prv, nxt = motion.flows(h, w)
    to_prev = np.zeros((t, h, w, 2), dtype=np.float32)
    to_next = np.zeros((t, h, w, 2), dtype=np.float32)
    to_prev[1:] = prv
    to_next[:-1] = nxt
    if mask_spec is None:
        masks = np.ones((t, 1, h, w), dtype=np.float32)
    else:
        masks = gen_mask(mask_spec, t, h, w, int(rng.integers(2**31)))
    return SyntheticClip(frames, masks, to_prev, to_next, motion, texture, seed, mask_spec)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

CLIP_MANIFEST = "manifest.txt"


def save_clip(path, clip: SyntheticClip, export_images: bool = True) -> None:
    os.makedirs(path, exist_ok=True)
    tsr.save(os.path.join(path, "frames.tsr"), clip.frames)
    tsr.save(os.path.join(path, "masks.tsr"), clip.masks)
    tsr.save(os.path.join(path, "flows_to_prev.tsr"), clip.to_prev)
    tsr.save(os.path.join(path, "flows_to_next.tsr"), clip.to_next)
    t, _, h, w = clip.frames.shape
    info = {
        "frames": str(t),
        "height": str(h),
        "width": str(w),
        "motion": clip.motion.describe(),
        "texture": clip.texture,
        "seed": str(clip.seed),
    }
    if clip.mask_spec is not None:
        s = clip.mask_spec
        info.update(
            mask_kind=s.kind,
            coverage_band=f"{s.coverage_band[0]!r},{s.coverage_band[1]!r}",
            motion_sigma=repr(s.motion_sigma),
            animate_prob=repr(s.animate_prob),
        )
    info.update(clip.meta)
    with open(os.path.join(path, CLIP_MANIFEST), "w") as fh:
        fh.write("".join(f"{k}={v}\n" for k, v in info.items()))
    if export_images:
        export_clip_images(path, clip.frames, clip.masks)


def export_clip_images(path, frames: np.ndarray, masks: Optional[np.ndarray] = None) -> None:
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    for i, fr in enumerate(frames):
        write_ppm(os.path.join(path, "frames", f"frame_{i:03d}.ppm"), to_uint8(np.moveaxis(fr, 0, -1)))
    if masks is not None:
        os.makedirs(os.path.join(path, "masks"), exist_ok=True)
        for i, m in enumerate(masks):
            write_pgm(os.path.join(path, "masks", f"mask_{i:03d}.pgm"), to_uint8(m[0], 0.0, 1.0))


def read_manifest(path) -> Dict[str, str]:
    out = {}
    with open(os.path.join(path, CLIP_MANIFEST)) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.rstrip("\n").split("=", 1)
                out[k] = v
    return out


def load_clip(path) -> SyntheticClip:
    info = read_manifest(path)
    spec = None
    if "mask_kind" in info:
        lo, hi = (float(v) for v in info["coverage_band"].split(","))
        spec = MaskSpec(info["mask_kind"], (lo, hi), float(info["motion_sigma"]), float(info["animate_prob"]))
    known = {"frames", "height", "width", "motion", "texture", "seed", "mask_kind", "coverage_band", "motion_sigma", "animate_prob"}
    return SyntheticClip(
        frames=tsr.load(os.path.join(path, "frames.tsr")),
        masks=tsr.load(os.path.join(path, "masks.tsr")),
        to_prev=tsr.load(os.path.join(path, "flows_to_prev.tsr")),
        to_next=tsr.load(os.path.join(path, "flows_to_next.tsr")),
        motion=Motion.parse(info["motion"]),
        texture=info["texture"],
        seed=int(info["seed"]),
        mask_spec=spec,
        meta={k: v for k, v in info.items() if k not in known},
    )
