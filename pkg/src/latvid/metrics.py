"""Image/video quality metrics: SSIM (with analytic gradient) and masked PSNR."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d, correlate2d

WIN_SIZE = 11
WIN_SIGMA = 1.5


class MetricError(ValueError):
    pass


def _gaussian_kernel(size: int = WIN_SIZE, sigma: float = WIN_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _as_slices(arr: np.ndarray) -> np.ndarray:
    """Normalize input to a stack of 2D slices (N, H, W).

    Videos (F, H, W, 3) and frames (H, W, 3) put color in the slice axis;
    latent grids (C, f, h, w) flatten channel and time.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3:
        if arr.shape[-1] == 3:
            return np.moveaxis(arr, -1, 0)
        return arr
    if arr.ndim == 4:
        if arr.shape[-1] == 3:
            return np.moveaxis(arr, -1, 1).reshape(-1, *arr.shape[1:3])
        return arr.reshape(-1, *arr.shape[2:])
    raise MetricError(f"unsupported array rank {arr.ndim}")


def _ssim_slice_and_grad(x: np.ndarray, y: np.ndarray, data_range: float):
    """SSIM of one 2D slice plus its gradient with respect to x.

    Uses 11x11 Gaussian windows (sigma 1.5, valid positions only); slices
    smaller than the window fall back to global statistics (one uniform
    window covering the whole slice).
    """
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    windowed = min(x.shape) >= WIN_SIZE

    if windowed:
        def corr(a):
            return correlate2d(a, _KERNEL, mode="valid")

        def adj(a):
            return convolve2d(a, _KERNEL, mode="full")
    else:
        n = x.size

        def corr(a):
            return np.array([[a.mean()]])

        def adj(a):
            return np.full(x.shape, a.sum() / n)

    mx, my = corr(x), corr(y)
    sxx = corr(x * x) - mx * mx
    syy = corr(y * y) - my * my
    sxy = corr(x * y) - mx * my
    a1 = 2 * mx * my + c1
    a2 = 2 * sxy + c2
    b1 = mx * mx + my * my + c1
    b2 = sxx + syy + c2
    s = (a1 * a2) / (b1 * b2)
    value = float(s.mean())

    nwin = s.size
    coef_y = 2 * a1 / (b1 * b2)
    coef_x = -2 * s / b2
    coef_const = (2 * my * (a2 - a1) / (b1 * b2)
                  + 2 * s * mx * (1.0 / b2 - 1.0 / b1))
    grad = (adj(coef_const) + y * adj(coef_y) + x * adj(coef_x)) / nwin
    return value, grad


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over frames/channels. Symmetric; ssim(x, x) = 1."""
    xs, ys = _as_slices(a), _as_slices(b)
    if xs.shape != ys.shape:
        raise MetricError("ssim inputs must have equal dims")
    return float(np.mean([
        _ssim_slice_and_grad(x, y, data_range)[0] for x, y in zip(xs, ys)]))


def ssim_and_grad(a: np.ndarray, b: np.ndarray, data_range: float = 1.0):
    """Mean SSIM and its gradient with respect to a (same shape as a)."""
    a = np.asarray(a, dtype=np.float64)
    xs, ys = _as_slices(a), _as_slices(b)
    if xs.shape != ys.shape:
        raise MetricError("ssim inputs must have equal dims")
    vals, grads = [], []
    for x, y in zip(xs, ys):
        v, g = _ssim_slice_and_grad(x, y, data_range)
        vals.append(v)
        grads.append(g)
    grad = np.stack(grads) / len(grads)
    # undo the slice reshaping back to the input layout
    if a.ndim == 2:
        grad = grad[0]
    elif a.ndim == 3 and a.shape[-1] == 3:
        grad = np.moveaxis(grad, 0, -1)
    elif a.ndim == 4 and a.shape[-1] == 3:
        grad = np.moveaxis(grad.reshape(a.shape[0], 3, *a.shape[1:3]), 1, -1)
    elif a.ndim == 4:
        grad = grad.reshape(a.shape)
    return float(np.mean(vals)), grad


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """PSNR over pixels with mask 1 only (all color channels), unit range.

    Returns math.inf on an exact match.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask) > 0
    if a.shape != b.shape or a.shape[:mask.ndim] != mask.shape:
        raise MetricError("dims disagree")
    if not mask.any():
        raise MetricError("mask has no known pixels")
    diff = a[mask] - b[mask]
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Plain PSNR with unit dynamic range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError("dims disagree")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
