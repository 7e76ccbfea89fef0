"""Tiny PNG helpers: float images in [0, 1] <-> 8-bit PNG files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataFormatError


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write a float image (H,W) or (H,W,3) with values in [0,1] as 8-bit PNG.

    Values are clamped to [0,1] and quantized with round(v * 255).
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise DataFormatError(f"expected (H,W) or (H,W,3) image, got shape {arr.shape}")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quant).save(str(path), format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG as float64 in [0,1]; RGB(A) collapses to (H,W,3), grayscale to (H,W)."""
    with Image.open(str(path)) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr
