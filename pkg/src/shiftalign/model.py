"""Toy-scale inpainting generator, temporal patch discriminator and checkpoints."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import numerics as N
from .flowops import ValidityConfig, cycle_validity, rescale_flow
from .numerics import Tensor, as_tensor, tsr
from .numerics.nn import Conv2d, Conv3d, ConvTranspose2d, Module
from .tsam import ALIGN_MODES, FlowLevel, ShiftSpec, TSAMGatedConv

DECODER_UPSAMPLES = 3
DECODER_TSAM_LAYERS = 5


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 16
    # (blocks, channels, stride) per encoder stage
    encoder_stages: Tuple[Tuple[int, int, int], ...] = ((1, 16, 1), (2, 32, 2), (2, 64, 2), (2, 64, 2))
    shift_fraction: Fraction = Fraction(1, 8)
    alignment: str = "tsam"
    leaky_alpha: float = 0.2

    def __post_init__(self):
        if self.alignment not in ALIGN_MODES:
            raise ValueError(f"alignment must be one of {ALIGN_MODES}, got {self.alignment!r}")
        total = 1
        for _, _, s in self.encoder_stages:
            total *= s
        if total != 2**DECODER_UPSAMPLES:
            raise ValueError(f"encoder must downsample by {2 ** DECODER_UPSAMPLES}, got {total}")
        if len(self.encoder_stages) != DECODER_UPSAMPLES + 1:
            raise ValueError("encoder needs one stage per decoder upsampling plus the full-resolution stage")

    @property
    def n_tsam(self) -> int:
        return sum(b for b, _, _ in self.encoder_stages) + DECODER_TSAM_LAYERS

    def tsam_strides(self) -> List[int]:
        """Downsampling factor at the input of every TSAM conv, in forward order."""
        out = []
        scale = 1
        for blocks, _, stride in self.encoder_stages:
            for b in range(blocks):
                out.append(scale)  # the TSAM conv runs before the block's strided conv
                if b == 0:
                    scale *= stride
        dec = [scale]
        for _ in range(DECODER_UPSAMPLES):
            scale //= 2
            dec.append(scale)
        dec.append(scale)
        return out + dec

    def pyramid_strides(self) -> List[int]:
        return sorted(set(self.tsam_strides()))

    def echo(self) -> Dict[str, str]:
        return {
            "base_channels": str(self.base_channels),
            "encoder_stages": ";".join(",".join(str(v) for v in st) for st in self.encoder_stages),
            "shift_fraction": str(Fraction(self.shift_fraction)),
            "alignment": self.alignment,
            "leaky_alpha": repr(float(self.leaky_alpha)),
        }

    @classmethod
    def from_echo(cls, d: Dict[str, str]) -> "GeneratorConfig":
        stages = tuple(tuple(int(v) for v in st.split(",")) for st in d["encoder_stages"].split(";"))
        return cls(
            base_channels=int(d["base_channels"]),
            encoder_stages=stages,
            shift_fraction=Fraction(d["shift_fraction"]),
            alignment=d["alignment"],
            leaky_alpha=float(d["leaky_alpha"]),
        )


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: int = 4
    channels: Tuple[int, ...] = (16, 32, 32)
    kernel: Tuple[int, int, int] = (3, 5, 5)
    stride: Tuple[int, int, int] = (1, 2, 2)
    leaky_alpha: float = 0.2

    def __post_init__(self):
        if len(self.channels) != self.layers - 1:
            raise ValueError("need one hidden width per layer except the last")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


class GatedConv(Module):
    def __init__(self, cin, cout, k, rng, stride=1):
        self.feature = Conv2d(cin, cout, k, rng, stride=stride)
        self.gate = Conv2d(cin, cout, k, rng, stride=stride)

    def forward(self, x):
        return self.feature(x) * N.sigmoid(self.gate(x))


class GatedDeconv(Module):
    def __init__(self, cin, cout, rng):
        self.feature = ConvTranspose2d(cin, cout, 4, rng, stride=2, pad=1)
        self.gate = ConvTranspose2d(cin, cout, 4, rng, stride=2, pad=1)

    def forward(self, x):
        return self.feature(x) * N.sigmoid(self.gate(x))


class Bottleneck(Module):
    """1x1 TSAM conv -> strided 3x3 conv -> 1x1 conv, plus a projected shortcut."""

    def __init__(self, cin, cout, stride, rng, spec, alpha):
        mid = max(cout // 2, 2)
        self.alpha = alpha
        self.reduce = TSAMGatedConv(cin, mid, 1, rng, spec=spec)
        self.spatial = Conv2d(mid, mid, 3, rng, stride=stride)
        self.expand = Conv2d(mid, cout, 1, rng, gain=0.5)
        self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, bias=False) if (stride != 1 or cin != cout) else None

    def forward(self, x, level, mode):
        h = N.leaky_relu(self.reduce(x, level, mode), self.alpha)
        h = N.leaky_relu(self.spatial(h), self.alpha)
        h = self.expand(h)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return N.leaky_relu(h + skip, self.alpha)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        spec = ShiftSpec(cfg.shift_fraction)
        a = cfg.leaky_alpha
        self.stem = GatedConv(4, cfg.base_channels, 3, rng)
        self.stages = []
        cin = cfg.base_channels
        skips = []
        for blocks, cout, stride in cfg.encoder_stages:
            stage = []
            for b in range(blocks):
                stage.append(Bottleneck(cin, cout, stride if b == 0 else 1, rng, spec, a))
                cin = cout
            self.stages.append(_Stage(stage))
            skips.append(cout)
        widths = [max(c // 2, 8) for c in skips]  # decoder width at each resolution
        self.reduce_in = Conv2d(skips[-1], widths[-1], 1, rng)
        self.bottom = TSAMGatedConv(widths[-1], widths[-1], 3, rng, spec=spec)
        self.ups = []
        self.fuse = []
        cur = widths[-1]
        for lvl in range(DECODER_UPSAMPLES - 1, -1, -1):
            self.ups.append(GatedDeconv(cur, widths[lvl], rng))
            self.fuse.append(TSAMGatedConv(widths[lvl] + skips[lvl], widths[lvl], 3, rng, spec=spec))
            cur = widths[lvl]
        self.refine = TSAMGatedConv(cur, cur, 3, rng, spec=spec)
        self.reduce_out = Conv2d(cur, 3, 1, rng, gain=0.5)

    def forward_raw(self, frames, masks, pyramid: Optional[Dict[int, FlowLevel]]) -> Tensor:
        cfg = self.cfg
        mode = cfg.alignment
        a = cfg.leaky_alpha
        t, _, h, w = frames.shape

        def level(x):
            if mode == "tsm":
                return None
            stride = h // x.shape[2]
            try:
                return pyramid[stride]
            except (KeyError, TypeError):
                raise KeyError(f"flow pyramid has no level for stride {stride}") from None

        m = np.asarray(masks.data if isinstance(masks, Tensor) else masks, dtype=frames.dtype)
        m3 = np.broadcast_to(m, frames.shape)
        x = N.concat([as_tensor(frames) * np.ascontiguousarray(m3), Tensor(m, dtype=frames.dtype)], axis=1)
        x = N.leaky_relu(self.stem(x), a)
        skips = []
        for stage in self.stages:
            for block in stage.blocks:
                x = block(x, level(x), mode)
            skips.append(x)
        x = N.leaky_relu(self.reduce_in(x), a)
        x = N.leaky_relu(self.bottom(x, level(x), mode), a)
        for up, fuse, skip in zip(self.ups, self.fuse, reversed(skips[:-1])):
            x = N.leaky_relu(up(x), a)
            x = N.concat([x, skip], axis=1)
            x = N.leaky_relu(fuse(x, level(x), mode), a)
        x = N.leaky_relu(self.refine(x, level(x), mode), a)
        return N.tanh(self.reduce_out(x))

    def forward(self, frames, masks, pyramid: Optional[Dict[int, FlowLevel]] = None) -> Tensor:
        """Inpaint ``frames[T,3,H,W]`` (values in [-1, 1]) given ``masks[T,1,H,W]`` (1 = valid).

        Returns the composite: known pixels are copied from ``frames``.
        """
        frames = as_tensor(frames)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ValueError(f"frames must be [T,3,H,W], got {frames.shape}")
        _, _, h, w = frames.shape
        div = 2**DECODER_UPSAMPLES
        if h % div or w % div:
            raise ValueError(f"frame size {h}x{w} is not divisible by {div}")
        m = np.asarray(masks.data if isinstance(masks, Tensor) else masks)
        if m.shape != (frames.shape[0], 1, h, w):
            raise ValueError(f"masks must be [T,1,H,W] = {(frames.shape[0], 1, h, w)}, got {m.shape}")
        raw = self.forward_raw(frames, m, pyramid)
        m3 = np.ascontiguousarray(np.broadcast_to(m, frames.shape), dtype=frames.dtype)
        return frames * m3 + raw * (1.0 - m3)


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks


def generator_forward(model: Generator, frames, masks, pyramid=None) -> Tensor:
    return model(frames, masks, pyramid)


class Discriminator(Module):
    """Stack of strided 3-D convs producing a spatio-temporal patch score map."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        widths = (3,) + tuple(cfg.channels) + (1,)
        pad = tuple(k // 2 for k in cfg.kernel)
        self.convs = [Conv3d(widths[i], widths[i + 1], cfg.kernel, rng, stride=cfg.stride, pad=pad) for i in range(cfg.layers)]

    def forward(self, video) -> Tensor:
        video = as_tensor(video)
        t = video.shape[0]
        if t < self.cfg.kernel[0]:
            raise ValueError(f"video of {t} frames is shorter than the temporal kernel {self.cfg.kernel[0]}")
        x = video.transpose(1, 0, 2, 3).reshape(1, 3, t, video.shape[2], video.shape[3])
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = N.leaky_relu(x, self.cfg.leaky_alpha)
        _, _, tt, hh, ww = x.shape
        return x.reshape(tt, 1, hh, ww)


def discriminator_forward(model: Discriminator, video) -> Tensor:
    return model(video)


# ---------------------------------------------------------------------------
# flow pyramid
# ---------------------------------------------------------------------------


def flow_level(to_prev: np.ndarray, to_next: np.ndarray, h: int, w: int, vcfg: ValidityConfig) -> FlowLevel:
    """Rescale full-resolution flows to ``h x w`` and compute cycle validity there.

    ``to_prev[t]`` maps frame t -> t-1 (entry 0 unused) and ``to_next[t]`` maps
    t -> t+1 (last entry unused).  The threshold shrinks with the flow.
    """
    t = to_prev.shape[0]
    full_h, full_w = to_prev.shape[1:3]
    vcfg = vcfg.scaled(min(h / full_h, w / full_w))
    p = np.stack([rescale_flow(to_prev[i], h, w) for i in range(t)]).astype(np.float32)
    n = np.stack([rescale_flow(to_next[i], h, w) for i in range(t)]).astype(np.float32)
    vp = np.zeros((t, h, w), dtype=np.float32)
    vn = np.zeros((t, h, w), dtype=np.float32)
    for i in range(1, t):
        # leg t -> t-1 checked against t-1 -> t, and vice versa
        vp[i] = cycle_validity(n[i - 1], p[i], vcfg)
        vn[i - 1] = cycle_validity(p[i], n[i - 1], vcfg)
    return FlowLevel(p, n, vp, vn)


def flow_pyramid(to_prev, to_next, cfg: GeneratorConfig, vcfg: ValidityConfig = ValidityConfig()) -> Dict[int, FlowLevel]:
    """Flows and validity masks for every feature stride that hosts a TSAM conv."""
    to_prev = np.asarray(to_prev)
    to_next = np.asarray(to_next)
    if to_prev.shape != to_next.shape or to_prev.ndim != 4:
        raise ValueError(f"need [T,H,W,2] flows in both directions, got {np.shape(to_prev)} and {np.shape(to_next)}")
    h, w = to_prev.shape[1:3]
    out = {}
    for s in cfg.pyramid_strides():
        if h % s or w % s:
            raise ValueError(f"flow size {h}x{w} not divisible by stride {s}")
        out[s] = flow_level(to_prev, to_next, h // s, w // s, vcfg)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MANIFEST = "manifest.txt"
CONFIG_ECHO = "config.txt"


def save_checkpoint(path, modules: Dict[str, Module], config: Dict[str, str]) -> None:
    """Write every parameter as a TSR1 file plus a manifest and a config echo.

    ``modules`` maps a role (``generator``, ``discriminator``) to a module.
    """
    os.makedirs(path, exist_ok=True)
    lines = []
    for role, module in modules.items():
        for name, p in module.named_parameters():
            fname = f"{role}.{name}.tsr"
            tsr.save(os.path.join(path, fname), p.data)
            lines.append(f"{role}.{name}\t{fname}\t{'x'.join(str(s) for s in p.shape)}\t{role}")
    with open(os.path.join(path, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, CONFIG_ECHO), "w") as fh:
        fh.write("".join(f"{k}={v}\n" for k, v in sorted(config.items())))


def read_config_echo(path) -> Dict[str, str]:
    out = {}
    with open(os.path.join(path, CONFIG_ECHO)) as fh:
        for line in fh:
            line = line.strip()
            if line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def load_checkpoint(path, modules: Dict[str, Module], expect_config: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    echo = read_config_echo(path)
    if expect_config is not None:
        diff = {k for k in set(echo) | set(expect_config) if echo.get(k) != expect_config.get(k)}
        if diff:
            raise ValueError(f"checkpoint config differs on keys {sorted(diff)}")
    states: Dict[str, Dict[str, np.ndarray]] = {role: {} for role in modules}
    with open(os.path.join(path, MANIFEST)) as fh:
        for line in fh:
            if not line.strip():
                continue
            full, fname, shape, role = line.rstrip("\n").split("\t")
            if role not in states:
                continue
            arr = tsr.load(os.path.join(path, fname))
            if "x".join(str(s) for s in arr.shape) != shape:
                raise ValueError(f"{fname}: stored shape {arr.shape} disagrees with manifest {shape}")
            states[role][full[len(role) + 1 :]] = arr
    for role, module in modules.items():
        module.load_state_dict(states[role])
    return echo
