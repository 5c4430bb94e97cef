"""Colour channel stretch and point-centred patch extraction.

Images are float64 arrays of shape (height, width, 3) with intensities in
[0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, PointOutOfBounds

PATCH_SIZE = 224
DEGENERATE_EPS = 1e-9


class DegenerateChannelWarning(UserWarning):
    """A channel had no dynamic range after the low-percentile shift and was left untouched."""


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # (224, 224, 3)
    source_image_id: str
    center: tuple[int, int]  # (x, y)


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return arr / 255.0


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise DataError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise DataError("image contains non-finite intensities")
    return image


def tail_size(n_pixels: int) -> int:
    return max(1, n_pixels // 100)


def stretch_channel(channel: np.ndarray) -> np.ndarray | None:
    """Stretch one channel; returns None when the channel is degenerate.

    Subtract the mean of the darkest 1% of pixels, clamp negatives to zero,
    then divide by the mean of the brightest 1% of the shifted values.
    """
    flat = channel.ravel()
    k = tail_size(flat.size)
    ordered = np.sort(flat)
    lo = ordered[:k].mean()
    shifted = np.maximum(channel - lo, 0.0)
    hi = np.sort(shifted.ravel())[-k:].mean()
    if hi < DEGENERATE_EPS:
        return None
    return np.clip(shifted / hi, 0.0, 1.0)


def color_stretch(image: np.ndarray) -> np.ndarray:
    image = check_image(image)
    out = image.copy()
    for c in range(3):
        stretched = stretch_channel(image[:, :, c])
        if stretched is None:
            warnings.warn(f"channel {c} has no dynamic range; passed through", DegenerateChannelWarning, stacklevel=2)
        else:
            out[:, :, c] = stretched
    return out


def extract_patch(
    image: np.ndarray,
    x: int,
    y: int,
    image_id: str = "",
    size: int = PATCH_SIZE,
) -> Patch:
    """Square patch centred on (x, y); pixels beyond the border replicate the edge.

    For the default size the patch spans rows y-112..y+111 and columns
    x-112..x+111.
    """
    h, w = image.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise PointOutOfBounds(f"point ({x}, {y}) outside {w}x{h} image {image_id!r}")
    half = size // 2
    rows = np.clip(np.arange(y - half, y - half + size), 0, h - 1)
    cols = np.clip(np.arange(x - half, x - half + size), 0, w - 1)
    return Patch(pixels=image[np.ix_(rows, cols)], source_image_id=image_id, center=(x, y))
