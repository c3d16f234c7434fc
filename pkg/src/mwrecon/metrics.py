"""Image-quality metrics on real-valued magnitude images: RMSE, PSNR, SSIM.

* RMSE is the relative L2 error in percent: ``100 * ||a - b|| / ||b||``.
* PSNR uses the reference's maximum magnitude as the peak and is capped at
  300 dB for exact matches.
* SSIM is single-scale with an 11x11 Gaussian window (sigma 1.5),
  K1=0.01, K2=0.03, dynamic range ``max(ref) - min(ref)``, and symmetric
  (edge-reflecting) boundary handling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 300.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    rmse_pct: float


def _check_pair(recon, ref):
    recon = np.asarray(recon, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if recon.shape != ref.shape:
        raise ValueError(f"image shapes differ: {recon.shape} vs {ref.shape}")
    return recon, ref


def rmse(recon: np.ndarray, ref: np.ndarray) -> float:
    """Relative L2 error in percent."""
    recon, ref = _check_pair(recon, ref)
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0:
        raise ValueError("reference image has zero norm")
    return 100.0 * float(np.linalg.norm(recon - ref) / ref_norm)


def psnr(recon: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak = max |ref|, capped at 300."""
    recon, ref = _check_pair(recon, ref)
    err = np.sqrt(np.mean((recon - ref) ** 2))
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * float(np.log10(np.max(np.abs(ref)) / err)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_means(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    half = win.shape[0] // 2
    padded = np.pad(img, half, mode="symmetric")
    patches = sliding_window_view(padded, win.shape)
    return np.tensordot(patches, win, axes=([2, 3], [0, 1]))


def ssim(recon: np.ndarray, ref: np.ndarray) -> float:
    """Mean local structural similarity."""
    recon, ref = _check_pair(recon, ref)
    if min(recon.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW} for SSIM")
    drange = float(ref.max() - ref.min())
    if drange == 0:
        drange = 1.0  # constant reference: only an exact match scores 1
    c1 = (_SSIM_K1 * drange) ** 2
    c2 = (_SSIM_K2 * drange) ** 2
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _local_means(recon, win)
    mu_y = _local_means(ref, win)
    var_x = _local_means(recon * recon, win) - mu_x**2
    var_y = _local_means(ref * ref, win) - mu_y**2
    cov = _local_means(recon * ref, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def evaluate(recon: np.ndarray, ref: np.ndarray) -> MetricReport:
    """All three metrics for a reconstruction against its reference."""
    return MetricReport(psnr_db=psnr(recon, ref), ssim=ssim(recon, ref), rmse_pct=rmse(recon, ref))
