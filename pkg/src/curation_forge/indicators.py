"""Per-image scalar quality indicators and population z-score trimming.

Seven scalars describe each image: brightness (BT.709 mean luma),
colorfulness (opponent-axis statistic of Hasler and Suesstrunk), RMS
contrast (luma standard deviation), a Sobel-gradient sharpness proxy,
bitrate in bits per pixel, pixel count, and the JPEG quality factor
recovered from the embedded quantization table when the source is a
JPEG stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate

SCALAR_DIMS = (
    "brightness",
    "colorfulness",
    "rms_contrast",
    "sharpness",
    "bitrate",
    "resolution",
    "jpeg_quality",
)

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


@dataclass
class IndicatorVector:
    """The scalar indicators plus the optional content-cluster index."""

    image_id: str
    brightness: float
    colorfulness: float
    rms_contrast: float
    sharpness: float
    bitrate: float
    resolution: int
    jpeg_quality: int | None = None
    content_cluster: int | None = None

    def scalar(self, dim: str) -> float | None:
        v = getattr(self, dim)
        return None if v is None else float(v)

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "brightness": self.brightness,
            "colorfulness": self.colorfulness,
            "rms_contrast": self.rms_contrast,
            "sharpness": self.sharpness,
            "bitrate": self.bitrate,
            "resolution": self.resolution,
            "jpeg_quality": self.jpeg_quality,
            "content_cluster": self.content_cluster,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "IndicatorVector":
        return cls(
            image_id=d["image_id"],
            brightness=float(d["brightness"]),
            colorfulness=float(d["colorfulness"]),
            rms_contrast=float(d["rms_contrast"]),
            sharpness=float(d["sharpness"]),
            bitrate=float(d["bitrate"]),
            resolution=int(d["resolution"]),
            jpeg_quality=None if d.get("jpeg_quality") is None else int(d["jpeg_quality"]),
            content_cluster=None if d.get("content_cluster") is None else int(d["content_cluster"]),
        )


@dataclass
class TrimStats:
    """Population mean/SD per trimmed dimension; constant dims are skipped."""

    means: dict[str, float]
    stds: dict[str, float]
    skipped: list[str]


def compute_indicators(
    image_id: str,
    raster: np.ndarray,
    byte_size: int,
    jpeg_quality: int | None = None,
    content_cluster: int | None = None,
) -> IndicatorVector:
    """Compute the raster-derived scalars for one decoded RGB image.

    ``raster`` is H x W x 3 with channel values in [0, 1]. Brightness and
    contrast are mean and standard deviation of BT.709 luma; colorfulness
    is sqrt(var_rg + var_yb) + 0.3 sqrt(mean_rg^2 + mean_yb^2) on the
    opponent axes rg = R - G and yb = (R + G)/2 - B; sharpness is the
    mean 3x3 Sobel gradient magnitude of luma with replicated edges.
    """
    raster = np.asarray(raster, dtype=float)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ValueError("raster must be H x W x 3")
    h, w = raster.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("raster must contain at least one pixel")
    r, g, b = raster[..., 0], raster[..., 1], raster[..., 2]
    luma = 0.2126 * r + 0.7152 * g + 0.0722 * b
    rg = r - g
    yb = 0.5 * (r + g) - b
    colorfulness = float(
        np.sqrt(rg.var() + yb.var()) + 0.3 * np.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
    )
    gx = correlate(luma, _SOBEL_X, mode="nearest")
    gy = correlate(luma, _SOBEL_Y, mode="nearest")
    sharpness = float(np.sqrt(gx * gx + gy * gy).mean())
    return IndicatorVector(
        image_id=image_id,
        brightness=float(luma.mean()),
        colorfulness=colorfulness,
        rms_contrast=float(luma.std()),
        sharpness=sharpness,
        bitrate=8.0 * byte_size / (w * h),
        resolution=w * h,
        jpeg_quality=jpeg_quality,
        content_cluster=content_cluster,
    )


# ---------------------------------------------------------------------------
# JPEG quality factor from the embedded quantization table

_JPEG_LUMA_BASE = np.array(
    [
        16, 11, 10, 16, 24, 40, 51, 61,
        12, 12, 14, 19, 26, 58, 60, 55,
        14, 13, 16, 24, 40, 57, 69, 56,
        14, 17, 22, 29, 51, 87, 80, 62,
        18, 22, 37, 56, 68, 109, 103, 77,
        24, 35, 55, 64, 81, 104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101,
        72, 92, 95, 98, 112, 100, 103, 99,
    ],
    dtype=np.int64,
)

_ZIGZAG = np.array(
    [
        0, 1, 8, 16, 9, 2, 3, 10,
        17, 24, 32, 25, 18, 11, 4, 5,
        12, 19, 26, 33, 40, 48, 41, 34,
        27, 20, 13, 6, 7, 14, 21, 28,
        35, 42, 49, 56, 57, 50, 43, 36,
        29, 22, 15, 23, 30, 37, 44, 51,
        58, 59, 52, 45, 38, 31, 39, 46,
        53, 60, 61, 54, 47, 55, 62, 63,
    ],
    dtype=np.int64,
)


def reference_luma_table(quality: int) -> np.ndarray:
    """The baseline-scaled luminance table for an integer quality in 1..100."""
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in 1..100")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    table = (_JPEG_LUMA_BASE * scale + 50) // 100
    return np.clip(table, 1, 255)


_REFERENCE_TABLES = np.stack([reference_luma_table(q) for q in range(1, 101)])


def _parse_dqt_tables(data: bytes) -> dict[int, np.ndarray]:
    """Quantization tables by id, de-zigzagged to natural order."""
    tables: dict[int, np.ndarray] = {}
    if len(data) < 4 or data[0] != 0xFF or data[1] != 0xD8:
        return tables
    pos = 2
    n = len(data)
    while pos + 1 < n:
        if data[pos] != 0xFF:
            pos += 1
            continue
        marker = data[pos + 1]
        if marker == 0xFF:  # fill byte
            pos += 1
            continue
        if marker in (0xD8, 0x01) or 0xD0 <= marker <= 0xD7:
            pos += 2
            continue
        if marker in (0xD9, 0xDA):  # EOI / start of scan: tables all seen
            break
        if pos + 4 > n:
            break
        seg_len = (data[pos + 2] << 8) | data[pos + 3]
        if seg_len < 2 or pos + 2 + seg_len > n:
            break
        if marker == 0xDB:
            payload = data[pos + 4 : pos + 2 + seg_len]
            off = 0
            while off < len(payload):
                pq = payload[off] >> 4
                tq = payload[off] & 0x0F
                off += 1
                width = 2 if pq == 1 else 1
                if off + 64 * width > len(payload):
                    break
                if width == 1:
                    zz = np.frombuffer(payload[off : off + 64], dtype=np.uint8).astype(np.int64)
                else:
                    zz = np.frombuffer(payload[off : off + 128], dtype=">u2").astype(np.int64)
                off += 64 * width
                if tq not in tables:
                    natural = np.empty(64, dtype=np.int64)
                    natural[_ZIGZAG] = zz
                    tables[tq] = natural
        pos += 2 + seg_len
    return tables


def estimate_jpeg_quality(data: bytes) -> int | None:
    """Nearest standard-scaling quality factor for a JPEG stream.

    Matches the embedded luminance table against the reference tables for
    quality 1..100 by sum of absolute differences (ties go to the higher
    quality). Returns None for non-JPEG input or streams without a
    quantization table.
    """
    tables = _parse_dqt_tables(bytes(data))
    if not tables:
        return None
    table = tables.get(0)
    if table is None:
        table = tables[min(tables)]
    sad = np.abs(_REFERENCE_TABLES - table[None, :]).sum(axis=1)
    # scan high-to-low so SAD ties resolve to the higher quality factor
    return 100 - int(np.argmin(sad[::-1]))


# ---------------------------------------------------------------------------
# z-score trimming


def trim_by_zscore(
    vectors: Sequence[IndicatorVector],
    threshold: float = 3.0,
    dims: Sequence[str] = SCALAR_DIMS,
) -> tuple[list[IndicatorVector], TrimStats]:
    """Keep images whose indicators all sit within ``threshold`` SDs.

    Statistics come from the full input population in a single pass; the
    filter is not re-iterated. Dimensions with zero spread cannot be
    z-scored and are skipped (reported in the stats). A vector missing a
    value on some dimension (e.g. no JPEG quality) passes that dimension.
    """
    vectors = list(vectors)
    if len(vectors) < 2:
        raise ValueError("need at least 2 vectors to estimate spread")
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    skipped: list[str] = []
    for dim in dims:
        present = [v.scalar(dim) for v in vectors if v.scalar(dim) is not None]
        if len(present) < 2:
            skipped.append(dim)
            continue
        arr = np.asarray(present, dtype=float)
        std = float(arr.std(ddof=1))
        if std == 0.0:
            skipped.append(dim)
            continue
        means[dim] = float(arr.mean())
        stds[dim] = std
    kept = []
    for v in vectors:
        ok = True
        for dim in means:
            x = v.scalar(dim)
            if x is None:
                continue
            if abs((x - means[dim]) / stds[dim]) > threshold:
                ok = False
                break
        if ok:
            kept.append(v)
    return kept, TrimStats(means=means, stds=stds, skipped=skipped)


# ---------------------------------------------------------------------------
# JSONL carrier for indicator vectors


def write_indicators(path: str | Path, vectors: Iterable[IndicatorVector]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in vectors:
            fh.write(json.dumps(v.to_json_dict(), sort_keys=True))
            fh.write("\n")


def read_indicators(path: str | Path) -> list[IndicatorVector]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(IndicatorVector.from_json_dict(json.loads(line)))
    return out
