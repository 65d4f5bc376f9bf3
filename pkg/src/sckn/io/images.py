"""8-bit image reading and writing (PNG, binary PGM/PPM)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import UnsupportedFormatError

_SUFFIXES = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}
_MODES = {"L", "RGB", "RGBA", "P", "1", "LA"}
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(path: Path) -> int | None:
    # IHDR is always the first chunk; its bit-depth byte sits at offset 24
    with open(path, "rb") as f:
        head = f.read(25)
    if len(head) == 25 and head.startswith(_PNG_SIGNATURE) and head[12:16] == b"IHDR":
        return head[24]
    return None


def read_image(path) -> np.ndarray:
    """Read an 8-bit image as uint8 ``(H, W)`` (gray) or ``(H, W, 3)`` (color).

    Palette images are expanded to RGB and alpha channels are dropped.
    Anything with more than 8 bits per sample is rejected.
    """
    path = Path(path)
    depth = _png_bit_depth(path)
    if depth is not None and depth > 8:
        raise UnsupportedFormatError(f"{path}: {depth}-bit PNG, only 8-bit data is supported", 24)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise UnsupportedFormatError(f"{path}: unsupported format {im.format}")
            if im.mode not in _MODES:
                raise UnsupportedFormatError(f"{path}: unsupported pixel mode {im.mode} (only 8-bit data)")
            if im.mode in ("P", "RGBA"):
                im = im.convert("RGB")
            elif im.mode in ("1", "LA"):
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8).copy()
    except UnidentifiedImageError as err:
        raise UnsupportedFormatError(f"{path}: not a recognized image") from err


def write_image(path, image) -> None:
    """Write a gray or RGB image; float data is rounded and clipped to [0, 255]."""
    path = Path(path)
    fmt = _SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedFormatError(f"{path}: unsupported extension {path.suffix!r}")
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise UnsupportedFormatError(f"cannot write an image of shape {arr.shape}")
    if path.suffix.lower() == ".pgm" and arr.ndim != 2:
        raise UnsupportedFormatError("PGM holds grayscale images only")
    Image.fromarray(arr).save(path, format=fmt)
