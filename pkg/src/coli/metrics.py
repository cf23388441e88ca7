"""PSNR, SSIM, MS-SSIM and bits-per-pixel on 8-bit images.

SSIM uses an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, data
range 255, and averages the SSIM map over all fully-contained windows
(no padding). Multi-channel images are scored per channel and averaged
unless ``luma=True``, which scores BT.601 luminance only.

MS-SSIM uses the standard five weights with 2x2 average pooling between
scales. Images smaller than 176 px on the short side use fewer scales: the
largest count ``s`` such that every scale is still at least 11 px, with the
leading ``s`` weights renormalised to sum to one. Negative contrast terms
are clamped to zero before the weighted product.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .pixel_io import Image

PSNR_CAP = 100.0
WIN = 11
SIGMA = 1.5
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
BT601 = (0.299, 0.587, 0.114)

REPORT_FIELDS = ("psnr_db", "ssim", "ms_ssim", "bpp", "payload_bytes")


@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    ms_ssim: float
    bpp: float
    payload_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def to_csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(REPORT_FIELDS)
        writer.writerow([getattr(self, f) for f in REPORT_FIELDS])
        return buf.getvalue()


def _as_array(img) -> np.ndarray:
    arr = img.data if isinstance(img, Image) else np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def _luma(x: np.ndarray) -> np.ndarray:
    if x.shape[2] == 1:
        return x
    return (x[:, :, :3] @ np.asarray(BT601))[:, :, None]


def psnr(a, b) -> float:
    """``10 log10(255^2 / MSE)`` over all samples; identical images give 100 dB."""
    x, y = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / mse))


def bpp(payload_bytes: int, width: int, height: int) -> float:
    if width < 1 or height < 1:
        raise ValueError("dimensions must be positive")
    return 8.0 * payload_bytes / (width * height)


def gaussian_window(size: int = WIN, sigma: float = SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of a 2-D array with the 1-D kernel ``g``."""
    k = len(g)
    rows = sliding_window_view(x, k, axis=0) @ g  # (H-k+1, W)
    return sliding_window_view(rows, k, axis=1) @ g


def _ssim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SSIM and contrast-structure maps for one 2-D channel."""
    g = gaussian_window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    cs = (2.0 * sxy + C2) / (sxx + syy + C2)
    lum = (2.0 * mu_x * mu_y + C1) / (mu_x * mu_x + mu_y * mu_y + C1)
    return lum * cs, cs


def ssim(a, b, luma: bool = False) -> float:
    x, y = _pair(a, b)
    if min(x.shape[:2]) < WIN:
        raise ShapeError(f"SSIM needs both dimensions >= {WIN}, got {x.shape[:2]}")
    if luma:
        x, y = _luma(x), _luma(y)
    vals = [float(np.mean(_ssim_maps(x[:, :, c], y[:, :, c])[0])) for c in range(x.shape[2])]
    return float(np.mean(vals))


def ms_ssim_scales(height: int, width: int) -> int:
    side = min(height, width)
    scales = 0
    while scales < len(MS_WEIGHTS) and side >= WIN:
        scales += 1
        side //= 2
    return scales


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _ms_ssim_channel(x: np.ndarray, y: np.ndarray, scales: int) -> float:
    weights = np.asarray(MS_WEIGHTS[:scales])
    weights = weights / weights.sum()
    result = 1.0
    for s in range(scales):
        ssim_map, cs_map = _ssim_maps(x, y)
        term = float(np.mean(ssim_map if s == scales - 1 else cs_map))
        result *= max(term, 0.0) ** weights[s]
        if s < scales - 1:
            x, y = _downsample(x), _downsample(y)
    return result


def ms_ssim(a, b, luma: bool = False) -> float:
    x, y = _pair(a, b)
    scales = ms_ssim_scales(*x.shape[:2])
    if scales == 0:
        raise ShapeError(f"MS-SSIM needs both dimensions >= {WIN}, got {x.shape[:2]}")
    if luma:
        x, y = _luma(x), _luma(y)
    vals = [_ms_ssim_channel(x[:, :, c], y[:, :, c], scales) for c in range(x.shape[2])]
    return float(np.mean(vals))


def report(original, reconstructed, payload_bytes: int) -> MetricsReport:
    """All quality metrics plus bpp for one reconstruction."""
    x, y = _pair(original, reconstructed)
    h, w = x.shape[:2]
    small = min(h, w) < WIN
    return MetricsReport(
        psnr_db=psnr(x, y),
        ssim=float("nan") if small else ssim(x, y),
        ms_ssim=float("nan") if small else ms_ssim(x, y),
        bpp=bpp(payload_bytes, w, h),
        payload_bytes=int(payload_bytes),
    )
