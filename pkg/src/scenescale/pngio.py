"""PNG round-tripping and content hashing for artifact bundles."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageBuffer

__all__ = ["load_png", "save_png", "sha256_file"]


def load_png(path: str | Path) -> ImageBuffer:
    """Read a PNG as a 1- or 3-channel ImageBuffer (palette/alpha flattened)."""
    with Image.open(path) as im:
        mode = "L" if im.mode in ("L", "1", "I;16", "I") else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return ImageBuffer(arr, copy=False)


def save_png(img: ImageBuffer, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    Image.fromarray(arr, mode="L" if img.channels == 1 else "RGB").save(path, format="PNG")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
