import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftalign.losses import FeatureExtractor
from shiftalign.metrics import PSNR_CAP, FidStats, SsimConfig, fid, psnr, sqrtm_psd, ssim, video_embed, vfid


def test_psnr_examples(rng):
    x = rng.uniform(size=(3, 8, 8))
    assert psnr(x, x) == PSNR_CAP == 100.0
    a = np.zeros(100)
    b = np.full(100, 0.1)  # MSE 0.01
    assert psnr(a, b, 1.0) == pytest.approx(20.0, abs=1e-9)
    assert psnr(np.zeros(10), np.full(10, 255.0), 255.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        psnr(a, b, peak=0)


@given(seed=st.integers(0, 2**16))
def test_psnr_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(size=20), r.uniform(size=20)
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identical(rng):
    x = rng.uniform(size=(3, 16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constants_closed_form():
    cfg = SsimConfig()
    a, b = 0.3, 0.7
    got = ssim(np.full((12, 12), a), np.full((12, 12), b), cfg)
    assert got == pytest.approx((2 * a * b + cfg.eps1) / (a * a + b * b + cfg.eps1), abs=1e-10)


def test_ssim_monotone_in_noise(rng):
    gt = rng.uniform(size=(1, 24, 24))
    noise = rng.normal(size=gt.shape)
    scores = [ssim(gt + s * noise, gt) for s in (0.01, 0.05, 0.2)]
    other = ssim(rng.uniform(size=gt.shape), gt)
    assert 1.0 > scores[0] > scores[1] > scores[2] > other


@given(seed=st.integers(0, 2**16))
def test_ssim_bounded_and_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, 12, 12)), r.normal(size=(2, 12, 12))
    s = ssim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# -- FID ---------------------------------------------------------------------------------------


def stats(mu, sigma, n=10):
    return FidStats(np.asarray(mu, float), np.asarray(sigma, float), n)


def test_fid_closed_forms():
    i2 = np.eye(2)
    assert fid(stats([1, 0], i2), stats([0, 0], i2)) == pytest.approx(1.0, abs=1e-6)
    assert fid(stats([0, 0], i2), stats([0, 0], 4 * i2)) == pytest.approx(2.0, abs=1e-6)
    s = stats([0.3, -1], [[2, 0.5], [0.5, 1]])
    assert fid(s, s) == 0.0


@given(seed=st.integers(0, 2**16), d=st.integers(1, 6))
def test_sqrtm_reconstructs(seed, d):
    r = np.random.default_rng(seed)
    a = r.normal(size=(d, d + 2))
    sigma = a @ a.T
    root = sqrtm_psd(sigma)
    assert np.abs(root @ root - sigma).max() < 1e-8
    np.testing.assert_allclose(root, root.T, atol=1e-12)


@given(seed=st.integers(0, 2**16))
def test_fid_symmetric_nonnegative(seed):
    r = np.random.default_rng(seed)
    sa = FidStats.from_samples(r.normal(size=(12, 3)))
    sb = FidStats.from_samples(r.normal(1.0, 2.0, size=(12, 3)))
    ab, ba = fid(sa, sb), fid(sb, sa)
    assert ab >= 0 and abs(ab - ba) < 1e-8


def test_fid_stats_validation():
    with pytest.raises(ValueError):
        stats([0, 0], np.eye(3))
    with pytest.raises(ValueError):
        stats([0, 0], [[1, 2], [0, 1]])
    with pytest.raises(ValueError):
        stats([0, 0], [[1, 0], [0, -1]])
    with pytest.raises(ValueError):
        stats([0, np.nan], np.eye(2))
    with pytest.raises(ValueError):
        FidStats(np.zeros(2), np.eye(2), 1)
    with pytest.raises(ValueError):
        fid(stats([0], [[1]]), stats([0, 0], np.eye(2)))


# -- VFID-lite ---------------------------------------------------------------------------------


def test_embedding_dimension(rng):
    ext = FeatureExtractor()
    v = rng.uniform(-1, 1, size=(3, 3, 16, 16)).astype(np.float32)
    assert video_embed(v, ext).shape == (ext.dim,)
    assert video_embed(v, ext, "none").shape == (3, ext.dim)
    with pytest.raises(ValueError):
        video_embed(v, ext, "max")


def test_vfid_zero_and_positive(rng):
    ext = FeatureExtractor()
    clips = [rng.uniform(-1, 1, size=(3, 3, 16, 16)).astype(np.float32) for _ in range(3)]
    assert vfid(clips, clips, ext) == 0.0
    other = list(clips)
    other[1] = np.clip(other[1] + 0.5, -1, 1)
    assert vfid(clips, other, ext) > 0
    assert vfid(clips[:1], clips[:1], ext) == 0.0
