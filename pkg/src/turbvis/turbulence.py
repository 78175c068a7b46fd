"""Seeded turbulence degradation: sampled Gaussian blur, elastic warp, noise.

A degraded observation is built as ``clip(warp(blur(x)) + noise, 0, 1)``:
blur by an isotropic or anisotropic Gaussian kernel, then elastic deformation
by a smoothed random displacement field, then additive Gaussian noise. The
composition order is fixed so realizations are reproducible. Convolutions use
reflect padding; warping clamps sample coordinates at the border.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from turbvis.config import DegradeConfig
from turbvis.imageio import Image
from turbvis.rng import RngStream


@dataclass(frozen=True)
class KernelSpec:
    """Rotated anisotropic Gaussian blur kernel parameters."""

    size: int = 11
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    theta: float = 0.0

    def validate(self) -> None:
        if self.size % 2 == 0 or self.size < 1:
            raise ValueError(f"kernel size must be odd and >= 1, got {self.size}")
        if self.sigma_x < 0 or self.sigma_y < 0:
            raise ValueError("kernel sigmas must be >= 0")


@dataclass
class DisplacementField:
    """Per-pixel displacements in pixels; peak magnitude equals alpha."""

    dx: np.ndarray
    dy: np.ndarray
    alpha: float
    beta: float


@dataclass
class DegradationParams:
    """One sampled realization of the degradation operator plus noise level."""

    kernel: KernelSpec
    field: DisplacementField
    noise_sigma: float
    seed_label: str = ""


def gaussian_blur_kernel(spec: KernelSpec) -> np.ndarray:
    """Realize the kernel on the integer grid and normalize it to sum 1.

    sigma = 0 along an axis collapses that axis to a delta; both zero gives
    the identity kernel.
    """
    spec.validate()
    r = spec.size // 2
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    cos_t, sin_t = np.cos(spec.theta), np.sin(spec.theta)
    u = cos_t * xs + sin_t * ys
    v = -sin_t * xs + cos_t * ys

    def axis_term(coord: np.ndarray, sigma: float) -> np.ndarray:
        if sigma > 0:
            return coord ** 2 / (2.0 * sigma ** 2)
        # degenerate axis: all mass on the coord = 0 line
        return np.where(np.abs(coord) < 1e-9, 0.0, np.inf)

    quad = axis_term(u, spec.sigma_x) + axis_term(v, spec.sigma_y)
    with np.errstate(under="ignore"):
        kernel = np.exp(-quad)
    total = kernel.sum()
    if total <= 0:  # numerically impossible (center is always 1), but be safe
        kernel = np.zeros_like(kernel)
        kernel[r, r] = 1.0
        total = 1.0
    kernel = (kernel / total).astype(np.float32)
    kernel /= kernel.sum(dtype=np.float32)
    return kernel


def elastic_field(h: int, w: int, alpha: float, beta: float, rng: RngStream) -> DisplacementField:
    """Uniform per-pixel displacements smoothed by a Gaussian of std beta,
    then rescaled so the peak absolute displacement equals alpha exactly."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    dx = rng.uniform(-1.0, 1.0, size=(h, w))
    dy = rng.uniform(-1.0, 1.0, size=(h, w))
    dx = ndimage.gaussian_filter(dx, sigma=beta, mode="reflect")
    dy = ndimage.gaussian_filter(dy, sigma=beta, mode="reflect")
    peak = max(np.abs(dx).max(), np.abs(dy).max())
    if alpha == 0.0 or peak == 0.0:
        dx = np.zeros((h, w))
        dy = np.zeros((h, w))
    else:
        scale = alpha / peak
        dx = np.clip(dx * scale, -alpha, alpha)
        dy = np.clip(dy * scale, -alpha, alpha)
    return DisplacementField(dx.astype(np.float32), dy.astype(np.float32),
                             alpha=float(alpha), beta=float(beta))


def zero_field(h: int, w: int) -> DisplacementField:
    z = np.zeros((h, w), dtype=np.float32)
    return DisplacementField(z, z.copy(), alpha=0.0, beta=1.0)


def blur(img: Image, kernel: np.ndarray) -> Image:
    """Reflect-padded 2D correlation per channel. Gaussian kernels are
    point-symmetric, so correlation equals convolution here."""
    out = np.stack([
        ndimage.correlate(ch.astype(np.float64), kernel.astype(np.float64), mode="reflect")
        for ch in img.array
    ])
    return Image(out.astype(np.float32), img.color_space)


def warp(img: Image, field: DisplacementField) -> Image:
    """Bilinear sampling at (x + dx, y + dy) with edge-clamped coordinates."""
    h, w = img.height, img.width
    if field.dx.shape != (h, w) or field.dy.shape != (h, w):
        raise ValueError(
            f"field shape {field.dx.shape} does not match image ({h}, {w})"
        )
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sample_y = np.clip(ys + field.dy, 0.0, h - 1.0)
    sample_x = np.clip(xs + field.dx, 0.0, w - 1.0)
    coords = np.stack([sample_y, sample_x])
    out = np.stack([
        ndimage.map_coordinates(ch.astype(np.float64), coords, order=1, mode="nearest")
        for ch in img.array
    ])
    return Image(out.astype(np.float32), img.color_space)


def sample_params(rng: RngStream, cfg: DegradeConfig, height: int, width: int) -> DegradationParams:
    """Draw one degradation realization.

    Kernel: with probability ``anisotropic_prob`` the two sigmas are sampled
    independently with a uniform rotation; otherwise a single shared sigma.
    alpha, beta, and the noise std are uniform over their configured ranges.
    """
    cfg.validate()
    if rng.uniform() < cfg.anisotropic_prob:
        sigma_x = rng.uniform(cfg.sigma_min, cfg.sigma_max)
        sigma_y = rng.uniform(cfg.sigma_min, cfg.sigma_max)
        theta = rng.uniform(0.0, np.pi)
    else:
        sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max)
        sigma_x = sigma_y = sigma
        theta = 0.0
    alpha = rng.uniform(cfg.alpha_min, cfg.alpha_max)
    beta = rng.uniform(cfg.beta_min, cfg.beta_max)
    noise_sigma = rng.uniform(0.0, cfg.noise_max)
    kernel = KernelSpec(size=cfg.kernel_size, sigma_x=float(sigma_x),
                        sigma_y=float(sigma_y), theta=float(theta))
    field = elastic_field(height, width, float(alpha), float(beta), rng.fork("field"))
    return DegradationParams(kernel=kernel, field=field,
                             noise_sigma=float(noise_sigma), seed_label=rng.label)


def degrade(img: Image, params: DegradationParams, rng: RngStream) -> Image:
    """Apply blur, then warp, then additive Gaussian noise; clip to [0, 1]."""
    kernel = gaussian_blur_kernel(params.kernel)
    out = warp(blur(img, kernel), params.field)
    data = out.array
    if params.noise_sigma > 0:
        noise = rng.normal(size=data.shape).astype(np.float32) * np.float32(params.noise_sigma)
        data = data + noise
    return Image(np.clip(data, 0.0, 1.0), img.color_space)


def identity_params(h: int, w: int, size: int = 11) -> DegradationParams:
    """Delta kernel, zero field, zero noise: degrade() becomes the identity."""
    return DegradationParams(
        kernel=KernelSpec(size=size, sigma_x=0.0, sigma_y=0.0, theta=0.0),
        field=zero_field(h, w),
        noise_sigma=0.0,
        seed_label="identity",
    )


def params_with(params: DegradationParams, **kernel_kwargs) -> DegradationParams:
    """Copy params with kernel fields replaced; handy for sigma sweeps."""
    return replace(params, kernel=replace(params.kernel, **kernel_kwargs))
