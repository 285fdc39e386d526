"""Reconstruction, perceptual, style and hinge adversarial losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import numerics as N
from .numerics import Tensor, as_tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_a: float = 1.0
    lambda_c: float = 0.0
    lambda_p: float = 1.0
    lambda_s: float = 2.0
    lambda_G: float = 0.0

    def __post_init__(self):
        for name in ("lambda_a", "lambda_c", "lambda_p", "lambda_s", "lambda_G"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class FeatureExtractor:
    """Frozen random conv pyramid standing in for a pretrained network.

    Four stride-2 3x3 conv stages with leaky-relu; the output of each stage is
    a tap.  Weights are row-orthonormal draws from ``seed`` and never receive
    gradients, but gradients do flow through to the input.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (8, 16, 16, 32), in_channels: int = 3, identity: bool = False):
        self.seed = seed
        self.identity = identity
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        if identity:
            self.channels = (in_channels,)
            return
        self.channels = tuple(channels)
        rng = np.random.default_rng(seed)
        cin = in_channels
        for cout in self.channels:
            fan = cin * 9
            a = rng.normal(size=(max(cout, fan), min(cout, fan)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            wmat = q if cout >= fan else q.T
            w = wmat[:cout, :fan].reshape(cout, cin, 3, 3) * np.sqrt(2.0)
            self.weights.append(w)
            self.biases.append(rng.normal(0.0, 0.1, size=cout))
            cin = cout

    @classmethod
    def identity_tap(cls, in_channels: int = 3) -> "FeatureExtractor":
        return cls(identity=True, in_channels=in_channels)

    @property
    def dim(self) -> int:
        return int(sum(self.channels))

    def __call__(self, video) -> List[Tensor]:
        x = as_tensor(video)
        if self.identity:
            return [x]
        taps = []
        for w, b in zip(self.weights, self.biases):
            x = N.leaky_relu(N.conv2d(x, Tensor(w, dtype=x.dtype), Tensor(b, dtype=x.dtype), stride=2, pad=1), 0.2)
            taps.append(x)
        return taps


def _check_same(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def recon_loss(pred, gt, corrupt_mask, lambda_a: float = 1.0, lambda_c: float = 0.0) -> Tensor:
    """Mean L1 over all pixels plus mean L1 over the hole (mask == 0)."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_same(pred, gt, "recon_loss")
    m = np.asarray(corrupt_mask.data if isinstance(corrupt_mask, Tensor) else corrupt_mask)
    hole = np.ascontiguousarray(np.broadcast_to(1.0 - m, pred.shape), dtype=pred.dtype)
    l1 = N.absolute(pred - gt)
    loss = N.mean(l1) * float(lambda_a)
    count = float(hole.sum())
    if lambda_c and count > 0:
        loss = loss + N.sum(l1 * hole) * (float(lambda_c) / count)
    return loss


def perceptual_loss(pred, gt, extractor: FeatureExtractor) -> Tensor:
    """Sum over frames and taps of the tap L1 distance divided by the tap size."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_same(pred, gt, "perceptual_loss")
    total = None
    for fp, fg in zip(extractor(pred), extractor(gt)):
        n_p = float(np.prod(fp.shape[1:]))
        term = N.sum(N.absolute(fp - fg.detach())) * (1.0 / n_p)
        total = term if total is None else total + term
    return total


def gram(feat: Tensor) -> Tensor:
    """Per-frame channel Gram matrices ``[T, C, C]`` of ``feat[T, C, H, W]``."""
    t, c = feat.shape[:2]
    flat = feat.reshape(t, c, -1)
    return N.matmul(flat, flat.transpose(0, 2, 1))


def style_loss(pred, gt, extractor: FeatureExtractor) -> Tensor:
    """Sum over frames and taps of ``|G(pred) - G(gt)|_1 / (C^2 H W)``."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_same(pred, gt, "style_loss")
    total = None
    for fp, fg in zip(extractor(pred), extractor(gt)):
        _, c, h, w = fp.shape
        term = N.sum(N.absolute(gram(fp) - gram(fg).detach())) * (1.0 / (c * c * h * w))
        total = term if total is None else total + term
    return total


def adversarial_losses(disc_real, disc_fake):
    """Hinge losses ``(d_loss, g_loss)`` from patch score maps."""
    disc_real, disc_fake = as_tensor(disc_real), as_tensor(disc_fake)
    _check_same(disc_real, disc_fake, "adversarial_losses")
    d_loss = N.mean(N.relu(1.0 - disc_real)) + N.mean(N.relu(1.0 + disc_fake))
    g_loss = N.mean(disc_fake) * -1.0
    return d_loss, g_loss


PART_WEIGHTS = (("recon", None), ("perceptual", "lambda_p"), ("style", "lambda_s"), ("adversarial", "lambda_G"))


def total_loss(parts: Mapping[str, object], weights: LossWeights) -> Tensor:
    """``recon + lambda_p * perceptual + lambda_s * style + lambda_G * adversarial``.

    Missing parts count as zero.  A non-finite part raises, naming the term.
    """
    unknown = set(parts) - {k for k, _ in PART_WEIGHTS}
    if unknown:
        raise KeyError(f"unknown loss parts {sorted(unknown)}")
    total = None
    for key, wname in PART_WEIGHTS:
        if key not in parts or parts[key] is None:
            continue
        part = parts[key]
        value = float(part.data.reshape(-1)[0]) if isinstance(part, Tensor) else float(part)
        if not math.isfinite(value):
            raise FloatingPointError(f"loss term {key!r} is not finite")
        coef = 1.0 if wname is None else float(getattr(weights, wname))
        if coef == 0.0 and wname is not None:
            continue
        term = part * coef if isinstance(part, Tensor) else coef * value
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total if isinstance(total, Tensor) else Tensor(np.asarray(total))
