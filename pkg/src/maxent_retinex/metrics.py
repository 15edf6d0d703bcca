"""Evaluation battery: entropy, gray statistics, lightness order error,
PSNR/SSIM, the histogram-equalization baseline and test-set reports.

All metrics work on 8-bit scale values. Entropy, GMI and GMG quantize to
256 levels first; PSNR and SSIM use the unquantized gray image times 255.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .core import ContractError, check_image, max_channel, to_gray, to_uint8
from .ops import hist_equalize

PSNR_CAP = 99.0
SSIM_K1, SSIM_K2, SSIM_L = 0.01, 0.03, 255.0
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5
LOE_GRID = 50
LOE_SCALE = 1000.0

# column order follows the published comparison table (NIQE omitted)
COLUMNS = ("ge", "gmi", "ce", "gmg", "loe_low", "loe_high", "psnr", "ssim", "wall_time_s")
HEADERS = {"ge": "GE", "gmi": "GMI", "ce": "CE", "gmg": "GMG", "loe_low": "LOE_low",
           "loe_high": "LOE_high", "psnr": "PSNR", "ssim": "SSIM", "wall_time_s": "Time"}


@dataclass
class MetricsReport:
    ge: float
    ce: float
    gmi: float
    gmg: float
    loe_low: float
    loe_high: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    wall_time_s: float | None = None
    name: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _gray255(img: np.ndarray) -> np.ndarray:
    img = check_image(img, channels=(1, 3))
    g = to_gray(img) if img.shape[2] == 3 else img
    return g[..., 0].astype(np.float64) * 255.0


def _entropy_bits(levels: np.ndarray) -> float:
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    p = hist[hist > 0] / hist.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def quantized_gray(img: np.ndarray) -> np.ndarray:
    img = check_image(img, channels=(1, 3))
    return to_uint8(to_gray(img) if img.shape[2] == 3 else img)[..., 0]


def gray_entropy(img: np.ndarray) -> float:
    """Shannon entropy in bits of the 256-bin gray histogram."""
    return _entropy_bits(quantized_gray(img))


def color_entropy(img: np.ndarray) -> float:
    """Sum of the R, G and B channel entropies."""
    img = check_image(img, channels=(3,))
    q = to_uint8(img)
    return sum(_entropy_bits(q[..., c]) for c in range(3))


def gray_mean_illumination(img: np.ndarray) -> float:
    return float(quantized_gray(img).mean())


def gray_mean_gradient(img: np.ndarray) -> float:
    """Mean of ``(|dh| + |dv|) / 2`` of the 0-255 gray image, forward differences."""
    g = quantized_gray(img).astype(np.float64)
    dh = np.zeros_like(g)
    dv = np.zeros_like(g)
    dh[:, :-1] = g[:, 1:] - g[:, :-1]
    dv[:-1, :] = g[1:, :] - g[:-1, :]
    return float(((np.abs(dh) + np.abs(dv)) / 2.0).mean())


def _grid(n: int, size: int = LOE_GRID) -> np.ndarray:
    return np.linspace(0, n - 1, min(size, n)).astype(int)


def loe(original: np.ndarray, enhanced: np.ndarray, grid: int = LOE_GRID) -> float:
    """Lightness order error x1000.

    Lightness is the max channel, sampled on a uniform grid of at most
    ``grid x grid`` pixels; the score is the fraction of ordered pixel pairs
    whose ``>=`` relation differs between the two images.
    """
    original = check_image(original, channels=(3,))
    enhanced = check_image(enhanced, channels=(3,))
    if original.shape != enhanced.shape:
        raise ContractError(f"LOE needs equal shapes, got {original.shape} vs {enhanced.shape}")
    rows, cols = _grid(original.shape[0], grid), _grid(original.shape[1], grid)
    lo = max_channel(original)[np.ix_(rows, cols)][..., 0].ravel()
    le = max_channel(enhanced)[np.ix_(rows, cols)][..., 0].ravel()
    uo = lo[:, None] >= lo[None, :]
    ue = le[:, None] >= le[None, :]
    return float(np.mean(uo != ue) * LOE_SCALE)


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ContractError(f"images differ in shape: {np.shape(a)} vs {np.shape(b)}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    _same_shape(a, b)
    mse = float(np.mean((_gray255(a) - _gray255(b)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(SSIM_L ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the gray images."""
    _same_shape(a, b)
    x, y = _gray255(a), _gray255(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    w = gaussian_window()
    half = SSIM_WINDOW // 2

    def blur(z):
        z = ndimage.correlate1d(z, w, axis=0, mode="reflect")
        z = ndimage.correlate1d(z, w, axis=1, mode="reflect")
        return z[half:-half, half:-half]

    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def he_baseline(img: np.ndarray) -> np.ndarray:
    """Plain histogram equalization of R, G and B independently."""
    img = check_image(img, channels=(3,))
    return np.concatenate([hist_equalize(img[..., c:c + 1]) for c in range(3)], axis=2)


def image_metrics(enhanced, low, ref=None, wall_time_s=None, name=None) -> MetricsReport:
    report = MetricsReport(
        ge=gray_entropy(enhanced),
        ce=color_entropy(enhanced),
        gmi=gray_mean_illumination(enhanced),
        gmg=gray_mean_gradient(enhanced),
        loe_low=loe(low, enhanced),
        wall_time_s=wall_time_s,
        name=name,
    )
    if ref is not None:
        report.loe_high = loe(ref, enhanced)
        report.psnr = psnr(enhanced, ref)
        report.ssim = ssim(enhanced, ref)
    return report


def aggregate(reports: Sequence[MetricsReport], name: str = "mean") -> MetricsReport:
    if not reports:
        raise ContractError("cannot aggregate an empty list of reports")
    values = {}
    for f in fields(MetricsReport):
        if f.name == "name":
            continue
        col = [getattr(r, f.name) for r in reports]
        values[f.name] = None if any(v is None for v in col) else float(np.mean(col))
    return MetricsReport(name=name, **values)


def evaluate_set(enhancer: Callable[[np.ndarray], np.ndarray],
                 low_images: Sequence[np.ndarray],
                 ref_images: Sequence[np.ndarray] | None = None,
                 names: Sequence[str] | None = None):
    """Run ``enhancer`` over a test set. Returns ``(mean_report, per_image)``."""
    if len(low_images) == 0:
        raise ContractError("evaluate_set needs at least one image")
    if ref_images is not None and len(ref_images) != len(low_images):
        raise ContractError(
            f"{len(low_images)} low images but {len(ref_images)} references")
    names = list(names) if names is not None else [f"{i:04d}" for i in range(len(low_images))]
    rows = []
    for i, low in enumerate(low_images):
        t0 = time.perf_counter()
        out = enhancer(low)
        dt = time.perf_counter() - t0
        ref = ref_images[i] if ref_images is not None else None
        rows.append(image_metrics(out, low, ref, wall_time_s=dt, name=names[i]))
    return aggregate(rows), rows


def evaluate_pairs(enhanced_images, low_images, ref_images=None, names=None):
    """Score already-enhanced images (no timing). Returns ``(mean_report, per_image)``."""
    if len(enhanced_images) == 0:
        raise ContractError("evaluate_pairs needs at least one image")
    names = list(names) if names is not None else [f"{i:04d}" for i in range(len(low_images))]
    rows = [image_metrics(e, l, ref_images[i] if ref_images is not None else None, name=names[i])
            for i, (e, l) in enumerate(zip(enhanced_images, low_images))]
    return aggregate(rows), rows


# --- report rendering -----------------------------------------------------

def _fmt(value, column):
    if value is None:
        return "-"
    if column == "wall_time_s":
        return f"{value:.4f}"
    if column == "ssim":
        return f"{value:.4f}"
    return f"{value:.3f}" if abs(value) < 100 else f"{value:.1f}"


def format_table(rows: Sequence[MetricsReport], include_time: bool = True) -> str:
    """Aligned plain-text table, one line per report."""
    cols = [c for c in COLUMNS if include_time or c != "wall_time_s"]
    header = ["Image"] + [HEADERS[c] for c in cols]
    body = [[r.name or ""] + [_fmt(getattr(r, c), c) for c in cols] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w)
                       for i, (h, w) in enumerate(zip(line, widths)))
             for line in [header] + body]
    rule = "-" * len(lines[0])
    return "\n".join([lines[0], rule, *lines[1:]]) + "\n"


def to_csv(rows: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["name", *COLUMNS], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        d = r.to_dict()
        writer.writerow({k: ("" if d[k] is None else d[k]) for k in ["name", *COLUMNS]})
    return buf.getvalue()


def to_json(mean: MetricsReport, rows: Sequence[MetricsReport]) -> str:
    return json.dumps({"mean": mean.to_dict(), "images": [r.to_dict() for r in rows]},
                      indent=2, sort_keys=True) + "\n"
