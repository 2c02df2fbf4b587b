import math

import numpy as np
import pytest

from latvid.metrics import (MetricError, masked_psnr, psnr, ssim,
                            ssim_and_grad)


def _img(seed=0, shape=(32, 32)):
    return np.random.default_rng(seed).uniform(0, 1, size=shape)


def test_ssim_self_is_one():
    x = _img(0)
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_ssim_symmetry():
    x, y = _img(1), _img(2)
    assert abs(ssim(x, y) - ssim(y, x)) < 1e-9


def test_ssim_constant_images_closed_form():
    mu1, mu2 = 0.3, 0.7
    a = np.full((32, 32), mu1)
    b = np.full((32, 32), mu2)
    c1 = 0.01 ** 2
    expected = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
    assert abs(ssim(a, b) - expected) < 1e-9


def test_ssim_decreases_with_noise():
    x = _img(3)
    rng = np.random.default_rng(4)
    small = ssim(x, np.clip(x + 0.02 * rng.normal(size=x.shape), 0, 1))
    big = ssim(x, np.clip(x + 0.2 * rng.normal(size=x.shape), 0, 1))
    assert 1.0 > small > big


def test_ssim_small_input_fallback():
    """Slices below the 11x11 window use global statistics; self-SSIM is
    still exactly 1 and values stay in range."""
    a, b = _img(5, (4, 4)), _img(6, (4, 4))
    assert abs(ssim(a, a) - 1.0) < 1e-12
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_video_layout_matches_slice_mean():
    video_a = np.random.default_rng(7).uniform(size=(2, 32, 32, 3))
    video_b = np.random.default_rng(8).uniform(size=(2, 32, 32, 3))
    per_slice = [ssim(video_a[f, :, :, c], video_b[f, :, :, c])
                 for f in range(2) for c in range(3)]
    assert abs(ssim(video_a, video_b) - np.mean(per_slice)) < 1e-12


def test_ssim_rejects_mismatched_dims():
    with pytest.raises(MetricError):
        ssim(_img(0), _img(0, (16, 16)))


@pytest.mark.parametrize("shape", [(32, 32), (4, 4), (3, 2, 2, 2)])
def test_ssim_grad_matches_finite_differences(shape):
    rng = np.random.default_rng(9)
    x = rng.uniform(0.2, 0.8, size=shape)
    y = rng.uniform(0.2, 0.8, size=shape)
    _, grad = ssim_and_grad(x, y)
    eps = 1e-6
    idx = [np.unravel_index(i, shape)
           for i in rng.choice(x.size, size=8, replace=False)]
    for ij in idx:
        up, dn = x.copy(), x.copy()
        up[ij] += eps
        dn[ij] -= eps
        fd = (ssim(up, y) - ssim(dn, y)) / (2 * eps)
        assert abs(grad[ij] - fd) < 1e-6


def test_masked_psnr_uniform_offset():
    a = np.zeros((2, 8, 8, 3))
    b = np.full((2, 8, 8, 3), 0.1)
    m = np.ones((2, 8, 8))
    assert abs(masked_psnr(a, b, m) - 20.0) < 1e-9


def test_masked_psnr_ignores_unmasked_region():
    rng = np.random.default_rng(10)
    a = rng.uniform(size=(2, 8, 8, 3))
    b = a.copy()
    m = np.ones((2, 8, 8))
    m[0, :4] = 0.0
    b[0, :4] += 10.0        # garbage outside the mask is invisible
    assert masked_psnr(a, b, m) == math.inf


def test_masked_psnr_matches_naive_loop():
    rng = np.random.default_rng(11)
    a = rng.uniform(size=(2, 4, 4, 3))
    b = rng.uniform(size=(2, 4, 4, 3))
    m = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(float)
    errs = []
    for f in range(2):
        for i in range(4):
            for j in range(4):
                if m[f, i, j] > 0:
                    errs.extend((a[f, i, j] - b[f, i, j]) ** 2)
    expected = 10 * math.log10(1.0 / np.mean(errs))
    assert abs(masked_psnr(a, b, m) - expected) < 1e-9


def test_masked_psnr_rejects_empty_mask():
    with pytest.raises(MetricError, match="known"):
        masked_psnr(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 3)),
                    np.zeros((1, 2, 2)))


def test_psnr_basics():
    a = np.zeros((4, 4))
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, np.full((4, 4), 0.5)) - 10 * math.log10(4)) < 1e-9
