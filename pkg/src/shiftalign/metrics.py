"""PSNR, windowed SSIM and Frechet distance on surrogate video embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .losses import FeatureExtractor
from .numerics import Tensor, no_grad

PSNR_CAP = 100.0


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def psnr(pred, gt, peak: float = 1.0) -> float:
    pred, gt = _arr(pred), _arr(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 20.0 * np.log10(peak) - 10.0 * np.log10(mse))


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def eps1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def eps2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def kernel(self) -> np.ndarray:
        r = np.arange(self.window, dtype=np.float64) - (self.window - 1) / 2.0
        k = np.exp(-(r**2) / (2.0 * self.sigma**2))
        return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable 'valid' filtering over the last two axes
    n = k.size
    h, w = img.shape[-2:]
    rows = sum(k[i] * img[..., i : h - n + 1 + i, :] for i in range(n))
    return sum(k[i] * rows[..., :, i : w - n + 1 + i] for i in range(n))


def ssim_map(pred, gt, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    p, q = _arr(pred), _arr(gt)
    if p.shape != q.shape:
        raise ValueError(f"ssim: shape mismatch {p.shape} vs {q.shape}")
    if min(p.shape[-2:]) < cfg.window:
        raise ValueError(f"image {p.shape[-2:]} smaller than the {cfg.window}x{cfg.window} window")
    k = cfg.kernel()
    mu_p, mu_q = _filter_valid(p, k), _filter_valid(q, k)
    var_p = _filter_valid(p * p, k) - mu_p**2
    var_q = _filter_valid(q * q, k) - mu_q**2
    cov = _filter_valid(p * q, k) - mu_p * mu_q
    num = (2 * mu_p * mu_q + cfg.eps1) * (2 * cov + cfg.eps2)
    den = (mu_p**2 + mu_q**2 + cfg.eps1) * (var_p + var_q + cfg.eps2)
    return num / den


def ssim(pred, gt, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean windowed SSIM; accepts ``[H,W]``, ``[C,H,W]`` or ``[T,C,H,W]``.

    Every channel and frame is scored separately and the maps are averaged.
    """
    p = _arr(pred)
    if p.ndim < 2 or p.ndim > 4:
        raise ValueError(f"ssim expects 2-4 dims, got {p.shape}")
    return float(np.mean(ssim_map(pred, gt, cfg)))


@dataclass(frozen=True)
class FidStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma shape {sigma.shape} does not match mean of size {mu.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("non-finite statistics")
        if self.n < 2:
            raise ValueError("need at least two samples")
        if not np.allclose(sigma, sigma.T, atol=1e-10):
            raise ValueError("sigma is not symmetric")
        if sigma.size and np.linalg.eigvalsh(sigma).min() < -1e-8:
            raise ValueError("sigma is not positive semi-definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_samples(cls, feats) -> "FidStats":
        x = np.asarray(feats, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError(f"need [n >= 2, d] samples, got {x.shape}")
        mu = x.mean(axis=0)
        c = x - mu
        sigma = c.T @ c / (x.shape[0] - 1)
        return cls(mu, (sigma + sigma.T) / 2.0, x.shape[0])


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative eigenvalues clamp to 0."""
    a = (np.asarray(a, dtype=np.float64) + np.asarray(a, dtype=np.float64).T) / 2.0
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(a: FidStats, b: FidStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0."""
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"dimension mismatch {a.mu.shape} vs {b.mu.shape}")
    if np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma):
        return 0.0
    root_a = sqrtm_psd(a.sigma)
    cross = sqrtm_psd(root_a @ b.sigma @ root_a)
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def video_embed(video, extractor: FeatureExtractor, temporal_pool: str = "mean") -> np.ndarray:
    """Mean-pool every tap over space (and time for ``"mean"``) and concatenate.

    Returns ``[d]`` for ``temporal_pool="mean"`` or ``[T, d]`` for ``"none"``.
    """
    if temporal_pool not in ("mean", "none"):
        raise ValueError(f"unknown temporal pooling {temporal_pool!r}")
    with no_grad():
        taps = extractor(Tensor(_arr(video)))
    if temporal_pool == "mean":
        return np.concatenate([t.data.astype(np.float64).mean(axis=(0, 2, 3)) for t in taps])
    return np.concatenate([t.data.astype(np.float64).mean(axis=(2, 3)) for t in taps], axis=1)


def vfid(videos_a: Sequence, videos_b: Sequence, extractor: FeatureExtractor) -> float:
    """Frechet distance between per-clip embeddings of two clip sets.

    With a single clip per set, frames are used as samples instead.
    """
    if len(videos_a) >= 2 and len(videos_b) >= 2:
        fa = np.stack([video_embed(v, extractor) for v in videos_a])
        fb = np.stack([video_embed(v, extractor) for v in videos_b])
    else:
        fa = np.concatenate([video_embed(v, extractor, "none") for v in videos_a])
        fb = np.concatenate([video_embed(v, extractor, "none") for v in videos_b])
    return fid(FidStats.from_samples(fa), FidStats.from_samples(fb))
