"""Full- and no-reference image quality metrics plus the identity score.

PSNR uses peak 1.0 on unit-range floats and reports identical images as the
100 dB aggregation cap. SSIM follows the original windowed formulation
(11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0) on
the luma plane, averaging over all fully interior windows. The LPIPS-style
distance unit-normalizes backbone features per tap, averages squared
differences with uniform channel weights, and sums over taps. Deg is 100x
the cosine similarity between identity embeddings (higher is better, matching
the reported direction). NIQE lives in :mod:`turbvis.niqe`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from turbvis.backbones import EmbeddingBackbone
from turbvis.imageio import Image
from turbvis.netutil import to_tensor

PSNR_CAP_DB = 100.0


def psnr(a: Image, b: Image) -> float:
    """10*log10(1/MSE) over all channels and pixels, capped at 100 dB."""
    if a.array.shape != b.array.shape:
        raise ValueError(f"shape mismatch {a.array.shape} vs {b.array.shape}")
    mse = float(np.mean((a.array.astype(np.float64) - b.array.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: Image, b: Image, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean windowed SSIM over the luma plane."""
    if a.array.shape != b.array.shape:
        raise ValueError(f"shape mismatch {a.array.shape} vs {b.array.shape}")
    x = a.luma().astype(np.float64)
    y = b.luma().astype(np.float64)
    h, w = x.shape
    if h < window_size or w < window_size:
        raise ValueError(f"image {h}x{w} smaller than {window_size}x{window_size} window")

    win = _gaussian_window(window_size, sigma)
    r = window_size // 2

    def wmean(img: np.ndarray) -> np.ndarray:
        full = ndimage.correlate(img, win, mode="constant")
        return full[r : h - r, r : w - r]  # windows fully inside the image

    mu_x = wmean(x)
    mu_y = wmean(y)
    var_x = wmean(x * x) - mu_x ** 2
    var_y = wmean(y * y) - mu_y ** 2
    cov = wmean(x * y) - mu_x * mu_y

    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(ssim_map.mean())


def lpips(phi: EmbeddingBackbone, a: Image, b: Image,
          tap_weights: list[float] | None = None) -> float:
    """Unit-normalized feature differences, spatially averaged, summed over taps."""
    if phi is None:
        raise RuntimeError("perceptual backbone is not loaded")
    if a.array.shape != b.array.shape:
        raise ValueError(f"shape mismatch {a.array.shape} vs {b.array.shape}")
    import torch

    with torch.no_grad():
        fa = phi.net.features_t(to_tensor(a.to_rgb().array).unsqueeze(0))
        fb = phi.net.features_t(to_tensor(b.to_rgb().array).unsqueeze(0))
        if tap_weights is None:
            tap_weights = [1.0] * len(fa)
        if len(tap_weights) != len(fa):
            raise ValueError(f"expected {len(fa)} tap weights, got {len(tap_weights)}")
        total = 0.0
        for weight, x, y in zip(tap_weights, fa, fb):
            xn = x / torch.sqrt((x ** 2).sum(dim=1, keepdim=True) + 1e-10)
            yn = y / torch.sqrt((y ** 2).sum(dim=1, keepdim=True) + 1e-10)
            total += weight * float(((xn - yn) ** 2).mean(dim=1).mean())
        return total


def deg_from_embeddings(e1: np.ndarray, e2: np.ndarray) -> float:
    """100x cosine similarity; raises on zero-norm embeddings instead of NaN."""
    e1 = np.asarray(e1, dtype=np.float64).reshape(-1)
    e2 = np.asarray(e2, dtype=np.float64).reshape(-1)
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise ArithmeticError("zero-norm embedding in Deg computation")
    return float(100.0 * np.dot(e1, e2) / (n1 * n2))


def deg(eta: EmbeddingBackbone, a: Image, b: Image) -> float:
    if eta is None:
        raise RuntimeError("identity backbone is not loaded")
    return deg_from_embeddings(eta.embed(a), eta.embed(b))


METRIC_COLUMNS = ["lpips", "niqe", "deg", "psnr", "ssim"]


@dataclass
class MetricReport:
    """Per-image metric rows plus arithmetic-mean aggregates."""

    names: list[str] = field(default_factory=list)
    rows: list[dict[str, float]] = field(default_factory=list)

    def add(self, name: str, **values: float) -> None:
        self.names.append(name)
        self.rows.append({k: float(v) for k, v in values.items()})

    def aggregate(self) -> dict[str, float]:
        out = {}
        for col in METRIC_COLUMNS:
            vals = [row[col] for row in self.rows if col in row and np.isfinite(row[col])]
            out[col] = float(np.mean(vals)) if vals else float("nan")
        return out

    def to_csv(self) -> str:
        lines = ["name," + ",".join(METRIC_COLUMNS)]
        for name, row in zip(self.names, self.rows):
            lines.append(name + "," + ",".join(
                f"{row[c]:.6f}" if c in row and np.isfinite(row.get(c, float('nan')))
                else "nan" for c in METRIC_COLUMNS))
        agg = self.aggregate()
        lines.append("mean," + ",".join(
            f"{agg[c]:.6f}" if np.isfinite(agg[c]) else "nan" for c in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"


def format_quality_table(rows: dict[str, dict[str, float]]) -> str:
    """Render method rows in the reported column layout."""
    header = f"{'Method':<12} {'LPIPS↓':>8} {'NIQE↓':>8} {'Deg.↑':>8} {'PSNR↑':>8} {'SSIM↑':>8}"
    lines = [header, "-" * len(header)]
    for method, vals in rows.items():
        lines.append(
            f"{method:<12} {vals['lpips']:>8.4f} {vals['niqe']:>8.3f} "
            f"{vals['deg']:>8.2f} {vals['psnr']:>8.2f} {vals['ssim']:>8.4f}"
        )
    return "\n".join(lines)
