"""Images as float32 channel-first arrays in [0, 1], plus PNG I/O.

Grayscale images have 1 channel, RGB images 3. Loading scales 8-bit sources
by 1/255 and 16-bit sources by 1/65535; saving quantizes to 8 bits with
round-half-up, so an 8-bit load/save round trip is pixel-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

GRAYSCALE = "grayscale"
RGB = "rgb"

# Rec. 601 luma weights, used everywhere a gray view of an RGB image is needed.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class ImageIOError(IOError):
    """Unreadable file or unsupported pixel format."""


@dataclass
class Image:
    """float32 (channels, height, width) array with a declared color space."""

    array: np.ndarray
    color_space: str

    def __post_init__(self):
        self.array = np.asarray(self.array, dtype=np.float32)
        if self.array.ndim != 3:
            raise ValueError(f"image array must be (C, H, W), got shape {self.array.shape}")
        expected = {GRAYSCALE: 1, RGB: 3}.get(self.color_space)
        if expected is None:
            raise ValueError(f"unknown color space {self.color_space!r}")
        if self.array.shape[0] != expected:
            raise ValueError(
                f"{self.color_space} image needs {expected} channels, got {self.array.shape[0]}"
            )

    @property
    def height(self) -> int:
        return self.array.shape[1]

    @property
    def width(self) -> int:
        return self.array.shape[2]

    @property
    def channels(self) -> int:
        return self.array.shape[0]

    def to_rgb(self) -> "Image":
        """Grayscale is upcast by channel repetition; RGB passes through."""
        if self.color_space == RGB:
            return self
        return Image(np.repeat(self.array, 3, axis=0), RGB)

    def luma(self) -> np.ndarray:
        """(H, W) luma plane; identity for grayscale."""
        if self.color_space == GRAYSCALE:
            return self.array[0]
        return np.tensordot(LUMA_WEIGHTS, self.array, axes=(0, 0)).astype(np.float32)

    def clipped(self) -> "Image":
        return Image(np.clip(self.array, 0.0, 1.0), self.color_space)


def load_image(path) -> Image:
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            if mode == "P":
                pil = pil.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(pil, dtype=np.float32) / 255.0
                return Image(arr[None], GRAYSCALE)
            if mode in ("I;16", "I"):
                arr = np.asarray(pil, dtype=np.float32) / 65535.0
                return Image(arr[None], GRAYSCALE)
            if mode == "RGB":
                arr = np.asarray(pil, dtype=np.float32) / 255.0
                return Image(arr.transpose(2, 0, 1), RGB)
            raise ImageIOError(f"{path}: unsupported pixel mode {mode!r}")
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc


def save_image(img: Image, path) -> None:
    """Quantize to 8 bits with round-half-up and write a PNG."""
    data = np.clip(img.array, 0.0, 1.0)
    quant = np.floor(data * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if img.color_space == GRAYSCALE:
        PILImage.fromarray(quant[0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(quant.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
