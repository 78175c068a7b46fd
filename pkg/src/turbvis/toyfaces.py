"""Procedural paired toy faces: a desk-scale stand-in for restricted data.

Each subject gets an identity vector controlling geometry and coloring (head
ellipse, hair, eye spacing and size, nose, mouth, skin tone, background);
variations perturb only expression-like parameters (mouth curve/opening, eye
openness, a tiny head shift). The visible image is rendered in RGB with
smooth antialiased masks; the thermal counterpart is a deterministic
surrogate of the visible-to-thermal operator: inverted luma, mild blur, and a
fixed contrast curve. Pairs are pixel-aligned by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from turbvis.data import PairedDataset, PairedRecord, load_paired_dataset, write_manifest
from turbvis.imageio import GRAYSCALE, RGB, Image, save_image
from turbvis.rng import RngStream


@dataclass
class FaceIdentity:
    skin: np.ndarray  # (3,)
    hair: np.ndarray  # (3,)
    bg: float
    bg_tilt: float
    face_rx: float
    face_ry: float
    face_cy: float
    eye_dx: float
    eye_y: float
    eye_r: float
    iris: float
    nose_w: float
    nose_len: float
    mouth_y: float
    mouth_w: float


@dataclass
class FaceExpression:
    mouth_curve: float
    mouth_open: float
    eye_open: float
    shift_x: float
    shift_y: float


NEUTRAL = FaceExpression(mouth_curve=0.0, mouth_open=0.03, eye_open=1.0,
                         shift_x=0.0, shift_y=0.0)


def sample_identity(rng: RngStream) -> FaceIdentity:
    r = rng.uniform(0.45, 0.95)
    g = r * rng.uniform(0.6, 0.95)
    b = g * rng.uniform(0.55, 0.95)
    hair_level = rng.uniform(0.05, 0.55)
    hair = np.array([hair_level * rng.uniform(0.6, 1.4),
                     hair_level * rng.uniform(0.5, 1.1),
                     hair_level * rng.uniform(0.4, 1.0)])
    return FaceIdentity(
        skin=np.array([r, g, b]),
        hair=np.clip(hair, 0.02, 0.9),
        bg=rng.uniform(0.05, 0.30),
        bg_tilt=rng.uniform(-0.08, 0.08),
        face_rx=rng.uniform(0.45, 0.62),
        face_ry=rng.uniform(0.58, 0.78),
        face_cy=rng.uniform(-0.05, 0.08),
        eye_dx=rng.uniform(0.18, 0.30),
        eye_y=rng.uniform(-0.30, -0.16),
        eye_r=rng.uniform(0.055, 0.095),
        iris=rng.uniform(0.05, 0.35),
        nose_w=rng.uniform(0.05, 0.10),
        nose_len=rng.uniform(0.12, 0.20),
        mouth_y=rng.uniform(0.28, 0.42),
        mouth_w=rng.uniform(0.15, 0.28),
    )


def sample_expression(rng: RngStream) -> FaceExpression:
    return FaceExpression(
        mouth_curve=rng.uniform(-0.05, 0.05),
        mouth_open=rng.uniform(0.015, 0.05),
        eye_open=rng.uniform(0.55, 1.0),
        shift_x=rng.uniform(-0.02, 0.02),
        shift_y=rng.uniform(-0.02, 0.02),
    )


def _smooth(t: np.ndarray) -> np.ndarray:
    s = np.clip(t, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _ellipse(xx, yy, cx, cy, rx, ry, soft=0.12):
    q = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    return _smooth((1.0 - q) / soft)


def _paint(img: np.ndarray, mask: np.ndarray, color) -> np.ndarray:
    color = np.asarray(color, dtype=np.float64).reshape(3, 1, 1)
    return img * (1.0 - mask) + color * mask


def render_face(identity: FaceIdentity, expression: FaceExpression = NEUTRAL,
                resolution: int = 64) -> Image:
    ax = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    xx, yy = np.meshgrid(ax, ax)
    xx = xx - expression.shift_x
    yy = yy - expression.shift_y
    idn = identity

    img = np.empty((3, resolution, resolution), dtype=np.float64)
    img[:] = np.clip(idn.bg + idn.bg_tilt * yy, 0.0, 1.0)

    # hair cap behind the head, then the head ellipse
    img = _paint(img, _ellipse(xx, yy, 0.0, idn.face_cy - 0.12,
                               idn.face_rx * 1.12, idn.face_ry * 1.08), idn.hair)
    head = _ellipse(xx, yy, 0.0, idn.face_cy, idn.face_rx, idn.face_ry)
    img = _paint(img, head, idn.skin)

    eye_cy = idn.face_cy + idn.eye_y
    open_ry = idn.eye_r * (0.35 + 0.65 * expression.eye_open)
    for side in (-1.0, 1.0):
        cx = side * idn.eye_dx
        sclera = _ellipse(xx, yy, cx, eye_cy, idn.eye_r * 1.45, open_ry * 1.3, soft=0.25)
        img = _paint(img, sclera, (0.93, 0.93, 0.93))
        iris = _ellipse(xx, yy, cx, eye_cy, idn.eye_r * 0.75, open_ry, soft=0.3)
        img = _paint(img, iris, (idn.iris, idn.iris, idn.iris * 1.2))

    nose_cy = idn.face_cy + 0.08
    nose = _ellipse(xx, yy, 0.0, nose_cy, idn.nose_w, idn.nose_len, soft=0.3)
    img = _paint(img, nose, idn.skin * 0.78)

    mouth_cy = idn.face_cy + idn.mouth_y + expression.mouth_curve * (xx / max(idn.mouth_w, 1e-3)) ** 2
    band = np.abs(yy - mouth_cy)
    mouth = _smooth((expression.mouth_open + 0.015 - band) / 0.025)
    mouth *= _smooth((idn.mouth_w - np.abs(xx)) / 0.05)
    lip = np.array([min(idn.skin[0] * 0.95 + 0.1, 1.0), idn.skin[1] * 0.45, idn.skin[2] * 0.45])
    img = _paint(img, mouth * head, lip)

    return Image(np.clip(img, 0.0, 1.0).astype(np.float32), RGB)


def thermal_surrogate(visible: Image) -> Image:
    """Deterministic visible-to-thermal operator: inverted luma, mild blur,
    and a fixed S-shaped contrast curve."""
    inv = 1.0 - visible.luma().astype(np.float64)
    sigma = max(0.5, visible.height / 64.0)
    smooth = ndimage.gaussian_filter(inv, sigma=sigma, mode="reflect")
    s = smooth * smooth * (3.0 - 2.0 * smooth)  # emphasize warm/cold contrast
    th = 0.05 + 0.9 * (0.7 * s + 0.3 * smooth)
    return Image(np.clip(th, 0.0, 1.0).astype(np.float32)[None], GRAYSCALE)


def make_toy_dataset(out_dir, n_subjects: int, variations_per_subject: int,
                     resolution: int, rng: RngStream) -> PairedDataset:
    """Render aligned (thermal, visible) pairs and write PNGs plus manifest."""
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    if variations_per_subject < 1:
        raise ValueError("need at least 1 variation per subject")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for s in range(n_subjects):
        subject_id = f"s{s:03d}"
        identity = sample_identity(rng.fork(f"subject{s}/identity"))
        for v in range(variations_per_subject):
            tag = f"v{v:02d}"
            expression = sample_expression(rng.fork(f"subject{s}/var{v}"))
            visible = render_face(identity, expression, resolution)
            thermal = thermal_surrogate(visible)
            vis_path = out_dir / f"{subject_id}_{tag}_vis.png"
            th_path = out_dir / f"{subject_id}_{tag}_th.png"
            save_image(visible, vis_path)
            save_image(thermal, th_path)
            records.append(PairedRecord(subject_id=subject_id, tag=tag,
                                        thermal_path=th_path, visible_path=vis_path))
    manifest = out_dir / "manifest.csv"
    write_manifest(records, manifest)
    return load_paired_dataset(manifest)
