"""No-reference quality score from natural-scene statistics, from scratch.

Pipeline: local mean/contrast normalization (MSCN) of the luma plane scaled
to [0, 255]; per-patch features at two scales (the second from a 2x2 box
downsample): an asymmetric generalized Gaussian (AGGD) fit of the MSCN
coefficients (shape, mean of scales) plus AGGD fits of four orientation
neighbor products (shape, mean, left scale, right scale), giving 18 features
per scale and 36 per patch. A pristine model is the mean and covariance of
these vectors over sharp patches (patch sharpness >= threshold * corpus
peak); the score of an image is the Mahalanobis-style distance

    sqrt((nu - mu)^T ((Sigma + Sigma_img) / 2)^-1 (nu - mu))

between the image's own feature Gaussian and the pristine model. A small
ridge (1e-6 on the diagonal) keeps the pooled covariance invertible on
desk-scale corpora. Lower scores mean more natural statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, special

from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from turbvis.imageio import Image

RIDGE_EPS = 1e-6
FEATURE_DIM = 36

_GAMMA_RANGE = np.arange(0.2, 10.0 + 1e-9, 0.001)
_B = special.gamma(2.0 / _GAMMA_RANGE) ** 2
_AC = special.gamma(1.0 / _GAMMA_RANGE) * special.gamma(3.0 / _GAMMA_RANGE)
_RHAT_TABLE = _B / _AC


def aggd_fit(x: np.ndarray) -> tuple[float, float, float, float]:
    """Moment-matching AGGD fit; returns (shape alpha, mean N, scale_l, scale_r)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    sq = x * x
    left = sq[x < 0]
    right = sq[x >= 0]
    lms = np.sqrt(left.mean()) if left.size else 0.0
    rms = np.sqrt(right.mean()) if right.size else 0.0
    gamma_hat = lms / rms if rms > 0 else np.inf
    mean_sq = sq.mean()
    r_hat = (np.abs(x).mean() ** 2) / mean_sq if mean_sq > 0 else np.inf
    rhat_norm = r_hat * ((gamma_hat ** 3 + 1) * (gamma_hat + 1)) / ((gamma_hat ** 2 + 1) ** 2)
    alpha = float(_GAMMA_RANGE[np.argmin((_RHAT_TABLE - rhat_norm) ** 2)])
    ratio = np.sqrt(special.gamma(1.0 / alpha) / special.gamma(3.0 / alpha))
    scale_l = float(ratio * lms)
    scale_r = float(ratio * rms)
    mean = float((scale_r - scale_l) * (special.gamma(2.0 / alpha) / special.gamma(1.0 / alpha)))
    return alpha, mean, scale_l, scale_r


def _neighbor_products(x: np.ndarray) -> list[np.ndarray]:
    return [
        x[:, :-1] * x[:, 1:],      # horizontal
        x[:-1, :] * x[1:, :],      # vertical
        x[:-1, :-1] * x[1:, 1:],   # main diagonal
        x[:-1, 1:] * x[1:, :-1],   # anti diagonal
    ]


def _subband_features(mscn: np.ndarray) -> np.ndarray:
    alpha, _, scale_l, scale_r = aggd_fit(mscn)
    feats = [alpha, (scale_l + scale_r) / 2.0]
    for prod in _neighbor_products(mscn):
        feats.extend(aggd_fit(prod))
    return np.array(feats, dtype=np.float64)


def _mscn_window() -> np.ndarray:
    ax = np.arange(-3, 4, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * (7.0 / 6.0) ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def mscn_transform(gray255: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (normalized coefficients, local deviation field)."""
    win = _mscn_window()
    mu = ndimage.correlate(gray255, win, mode="nearest")
    sigma = np.sqrt(np.abs(ndimage.correlate(gray255 * gray255, win, mode="nearest") - mu * mu))
    return (gray255 - mu) / (sigma + 1.0), sigma


def _box_half(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def image_features(img: Image, patch_size: int = 96,
                   sharpness_threshold: float | None = None) -> np.ndarray:
    """(patches, 36) feature matrix; optional sharpness-based patch selection."""
    gray = img.luma().astype(np.float64) * 255.0
    h, w = gray.shape
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} smaller than patch size {patch_size}")
    mscn1, sigma1 = mscn_transform(gray)
    mscn2, _ = mscn_transform(_box_half(gray))
    half = patch_size // 2

    feats, sharpness = [], []
    for py in range(0, h - patch_size + 1, patch_size):
        for px in range(0, w - patch_size + 1, patch_size):
            p1 = mscn1[py : py + patch_size, px : px + patch_size]
            p2 = mscn2[py // 2 : py // 2 + half, px // 2 : px // 2 + half]
            feats.append(np.concatenate([_subband_features(p1), _subband_features(p2)]))
            sharpness.append(sigma1[py : py + patch_size, px : px + patch_size].mean())
    feats = np.array(feats)
    if sharpness_threshold is not None and len(feats) > 1:
        sharpness = np.array(sharpness)
        keep = sharpness >= sharpness_threshold * sharpness.max()
        feats = feats[keep]
    return feats


@dataclass
class NiqeModel:
    """Pristine multivariate Gaussian over 36-dim NSS features."""

    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = 96
    sharpness_threshold: float = 0.75

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mu.shape != (FEATURE_DIM,) or self.cov.shape != (FEATURE_DIM, FEATURE_DIM):
            raise ValueError("NIQE model must have 36-dim mean and 36x36 covariance")


def fit_niqe(corpus: list[Image], patch_size: int = 96,
             sharpness_threshold: float = 0.75) -> NiqeModel:
    if not corpus:
        raise ValueError("empty pristine corpus")
    all_feats = [
        image_features(img, patch_size, sharpness_threshold=sharpness_threshold)
        for img in corpus
    ]
    feats = np.concatenate([f for f in all_feats if len(f)], axis=0)
    if feats.shape[0] < 2:
        raise ValueError(f"corpus too small: only {feats.shape[0]} usable patches")
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    return NiqeModel(mu=mu, cov=cov, patch_size=patch_size,
                     sharpness_threshold=sharpness_threshold)


def niqe(img: Image, model: NiqeModel) -> float:
    feats = image_features(img, model.patch_size, sharpness_threshold=None)
    nu = feats.mean(axis=0)
    cov_img = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros_like(model.cov)
    pooled = (model.cov + cov_img) / 2.0 + RIDGE_EPS * np.eye(FEATURE_DIM)
    diff = nu - model.mu
    d2 = float(diff @ np.linalg.solve(pooled, diff))
    return float(np.sqrt(max(d2, 0.0)))


def save_niqe_model(model: NiqeModel, path) -> None:
    ckpt = Checkpoint(
        entries={"niqe.mu": model.mu.astype(np.float32),
                 "niqe.cov": model.cov.astype(np.float32)},
        metadata={"kind": "niqe",
                  "niqe.patch_size": str(model.patch_size),
                  "niqe.sharpness_threshold": str(model.sharpness_threshold)},
    )
    save_checkpoint(ckpt, path)


def load_niqe_model(path) -> NiqeModel:
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != "niqe":
        raise CheckpointIntegrityError(f"{path}: not a NIQE model file")
    return NiqeModel(
        mu=ckpt.require("niqe.mu").astype(np.float64),
        cov=ckpt.require("niqe.cov").astype(np.float64),
        patch_size=int(ckpt.metadata["niqe.patch_size"]),
        sharpness_threshold=float(ckpt.metadata["niqe.sharpness_threshold"]),
    )
