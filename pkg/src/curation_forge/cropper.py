"""Selective cropping: importance maps and window scoring.

The importance map blends three components: a spectral saliency map
(sign of the 2-D DCT, reconstructed, squared, smoothed), a binary face
map from externally supplied boxes, and an isotropic center-bias
Gaussian. A crop window is scored by summing map values under a kernel
that is +1 in the window interior and -1 in a thin border frame, so
windows that cut through important content pay for it. All window
positions are scored at once through frequency-domain cross-correlation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

DEFAULT_CROP = (1024, 768)
DEFAULT_BORDER = 10
DEFAULT_WEIGHTS = (1.0, 1.0, 0.25)  # saliency, face, center
_TIE_REL_TOL = 1e-9


@dataclass
class CropWindow:
    x: int
    y: int
    w: int
    h: int
    score: float


@dataclass
class ImportanceMap:
    grid: np.ndarray
    saliency: np.ndarray
    face: np.ndarray
    center: np.ndarray
    weights: tuple[float, float, float]


def saliency_map(luma: np.ndarray, smooth_frac: float = 0.045) -> np.ndarray:
    """Image-signature saliency of a luma raster, scaled to peak 1.

    The DC coefficient's sign is dropped before reconstruction, so the
    squared signal measures deviation from the mean; constant rasters map
    to all zeros instead of a flat foreground.
    """
    luma = np.asarray(luma, dtype=float)
    if luma.ndim != 2 or luma.shape[0] < 8 or luma.shape[1] < 8:
        raise ValueError("luma raster must be 2-D and at least 8x8")
    signature = np.sign(dctn(luma, norm="ortho"))
    signature[0, 0] = 0.0
    recon = idctn(signature, norm="ortho")
    energy = recon * recon
    smoothed = gaussian_filter(energy, sigma=smooth_frac * luma.shape[1])
    peak = smoothed.max()
    if peak > 0:
        smoothed = smoothed / peak
    return smoothed


def center_bias(height: int, width: int) -> np.ndarray:
    """Isotropic Gaussian at the raster midpoint, sigma = min(H, W) / 3."""
    sigma = min(height, width) / 3.0
    yy = np.arange(height, dtype=float) - (height - 1) / 2.0
    xx = np.arange(width, dtype=float) - (width - 1) / 2.0
    return np.exp(-(yy[:, None] ** 2 + xx[None, :] ** 2) / (2.0 * sigma * sigma))


def build_importance(
    saliency: np.ndarray,
    face_boxes: Sequence[tuple[int, int, int, int]] = (),
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> ImportanceMap:
    """Combine saliency, binary face boxes, and center bias into one map.

    Boxes are (x, y, w, h) in pixels; overlapping boxes stay binary (the
    face map is a max, not a sum). Out-of-bounds boxes are rejected.
    """
    saliency = np.asarray(saliency, dtype=float)
    h, w = saliency.shape
    face = np.zeros((h, w))
    for bx, by, bw, bh in face_boxes:
        if bx < 0 or by < 0 or bw < 1 or bh < 1 or bx + bw > w or by + bh > h:
            raise ValueError(f"face box {(bx, by, bw, bh)} out of bounds for {w}x{h}")
        face[by : by + bh, bx : bx + bw] = 1.0
    ws, wf, wc = weights
    if ws < 0 or wf < 0 or wc < 0:
        raise ValueError("weights must be nonnegative")
    center = center_bias(h, w)
    grid = ws * saliency + wf * face + wc * center
    return ImportanceMap(grid=grid, saliency=saliency, face=face, center=center, weights=(ws, wf, wc))


def _window_sums(grid: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """All kh x kw window sums via FFT cross-correlation (valid positions)."""
    return fftconvolve(grid, np.ones((kh, kw)), mode="valid")


def score_windows(grid: np.ndarray, w: int, h: int, border: int) -> np.ndarray:
    """Score every window position: interior sum minus border-frame sum."""
    grid = np.asarray(grid, dtype=float)
    mh, mw = grid.shape
    if w > mw or h > mh:
        raise ValueError(f"crop {w}x{h} larger than map {mw}x{mh}")
    if border < 0 or 2 * border >= min(w, h):
        raise ValueError("border must satisfy 0 <= border < min(w, h) / 2")
    full = _window_sums(grid, h, w)
    if border == 0:
        return full
    inner = _window_sums(grid, h - 2 * border, w - 2 * border)
    inner = inner[border : border + full.shape[0], border : border + full.shape[1]]
    # interior - (full - interior)
    return 2.0 * inner - full


def best_crop(importance: ImportanceMap | np.ndarray, w: int, h: int, border: int = DEFAULT_BORDER) -> CropWindow:
    """Highest-scoring w x h window of the importance map.

    Score ties (within a small relative quantum, which also absorbs FFT
    round-off) resolve to the window nearest the map center, then the
    smallest y, then the smallest x.
    """
    grid = importance.grid if isinstance(importance, ImportanceMap) else np.asarray(importance, dtype=float)
    scores = score_windows(grid, w, h, border)
    top = scores.max()
    tol = _TIE_REL_TOL * max(1.0, float(np.abs(scores).max()))
    ys, xs = np.nonzero(scores >= top - tol)
    mh, mw = grid.shape
    # integer arithmetic: minimize squared distance of window center to map center
    cy2, cx2 = mh - h, mw - w
    best = min(
        zip(ys.tolist(), xs.tolist()),
        key=lambda p: ((2 * p[0] - cy2) ** 2 + (2 * p[1] - cx2) ** 2, p[0], p[1]),
    )
    y, x = best
    return CropWindow(x=int(x), y=int(y), w=w, h=h, score=float(scores[y, x]))


def luma_of_rgb(raster: np.ndarray) -> np.ndarray:
    """BT.709 luma of an H x W x 3 raster in [0, 1]."""
    raster = np.asarray(raster, dtype=float)
    return 0.2126 * raster[..., 0] + 0.7152 * raster[..., 1] + 0.0722 * raster[..., 2]


def selective_crop_box(
    raster: np.ndarray,
    face_boxes: Sequence[tuple[int, int, int, int]] = (),
    size: tuple[int, int] = DEFAULT_CROP,
    border: int = DEFAULT_BORDER,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> CropWindow:
    """Choose the crop window for an RGB raster at least as large as ``size``."""
    w, h = size
    sal = saliency_map(luma_of_rgb(raster))
    imp = build_importance(sal, face_boxes, weights)
    return best_crop(imp, w, h, border)
