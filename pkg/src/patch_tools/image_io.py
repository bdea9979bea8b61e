from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from common.errors import InputError, MissingInputError


def read_image(path: str | Path) -> np.ndarray:
    """PNG or PPM (P6) as an [H, W, 3] float array in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Image not found: {path}")
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise InputError(f"Cannot decode image {path}: {e}") from e


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def write_png(pixels: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no ancillary chunks, so identical pixels give identical bytes
    Image.fromarray(to_uint8(pixels)).save(path, format="PNG", optimize=False)
    return path


def resize_patch(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an [h, w, 3] patch to [size, size, 3]."""
    if pixels.shape[0] == size and pixels.shape[1] == size:
        return pixels
    img = Image.fromarray(to_uint8(pixels)).resize((size, size), resample=Image.Resampling.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0
