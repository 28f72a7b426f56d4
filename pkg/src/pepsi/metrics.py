"""Quantitative evaluation: PSNR over the whole image or the hole region
only, and mean local SSIM.

Both metrics operate on images mapped to [0, 1] (peak 1). Use to_unit() to
get there from the network's [-1, 1] range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ContractError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class EvalReport:
    psnr_local: float
    psnr_global: float
    ssim: float
    hole_pixels: int
    total_pixels: int


def to_unit(x):
    """Map [-1, 1] image data onto [0, 1]."""
    return (np.asarray(x) + 1.0) / 2.0


def psnr(result, reference, region=None):
    """10 log10(1 / MSE) with peak 1; exact matches cap at 99 dB.

    region, when given, is a binary mask selecting hole pixels; the MSE then
    runs over those pixels across all channels.
    """
    result = np.asarray(result, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if result.shape != reference.shape:
        raise ContractError("psnr operands must share dims")
    err2 = (result - reference) ** 2
    if region is not None:
        region = np.asarray(region).astype(bool)
        if region.shape != result.shape[-2:]:
            raise ContractError("region mask must match the spatial dims")
        if not region.any():
            raise ContractError("empty region")
        err2 = err2[..., region]
    mse = float(err2.mean())
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _luma(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.mean(axis=0)
    if x.ndim == 2:
        return x
    raise ContractError(f"expected (H,W) or (C,H,W) image, got {x.shape}")


def _gaussian_window(size, sigma):
    half = size // 2
    g = np.exp(-0.5 * (np.arange(size) - half) ** 2 / sigma ** 2)
    k = np.outer(g, g)
    return k / k.sum()


_WINDOW = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)


def _windowed_mean(x, kernel):
    view = np.lib.stride_tricks.sliding_window_view(x, kernel.shape)
    return np.tensordot(view, kernel, axes=([2, 3], [0, 1]))


def ssim(result, reference):
    """Mean local SSIM on luma, 11x11 Gaussian window (sigma 1.5), standard
    stabilizers at peak 1. Windows are taken where they fully fit."""
    x = _luma(result)
    y = _luma(reference)
    if x.shape != y.shape:
        raise ContractError("ssim operands must share dims")
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    mu_x = _windowed_mean(x, _WINDOW)
    mu_y = _windowed_mean(y, _WINDOW)
    xx = _windowed_mean(x * x, _WINDOW) - mu_x ** 2
    yy = _windowed_mean(y * y, _WINDOW) - mu_y ** 2
    xy = _windowed_mean(x * y, _WINDOW) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float((num / den).mean())


def evaluate_pair(result, reference, mask):
    """Full report for one composited result against its reference.

    Inputs are [-1, 1] images (3, H, W) and a binary hole mask (H, W).
    """
    mask = np.asarray(mask)
    ru = to_unit(result)
    fu = to_unit(reference)
    return EvalReport(
        psnr_local=psnr(ru, fu, region=mask),
        psnr_global=psnr(ru, fu),
        ssim=ssim(ru, fu),
        hole_pixels=int(mask.sum()),
        total_pixels=int(mask.size),
    )
