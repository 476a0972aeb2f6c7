"""Image loading and the crop-then-pad-to-square preprocessing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageDecodeError
from .manifest import CropWindow


def load_image(path: Path, row_id: str) -> Image.Image:
    """Open an image as grayscale; decode failures name the manifest row."""
    try:
        with Image.open(path) as img:
            return img.convert("L")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(row_id, f"cannot decode {path}: {exc}") from exc


def crop_square(img: Image.Image, window: CropWindow) -> Image.Image:
    """Cut the box alone, then square it with zeros; pads never show context."""
    left, top = round(window.x), round(window.y)
    width, height = round(window.w), round(window.h)
    region = img.crop((left, top, left + width, top + height))
    side = round(window.side())
    canvas = Image.new(img.mode, (side, side), 0)
    canvas.paste(region, (round(window.pad_left), round(window.pad_top)))
    return canvas


def pad_to_square(img: Image.Image) -> Image.Image:
    """Center the whole frame on a zero square canvas."""
    width, height = img.size
    side = max(width, height)
    left = -((side - width) // 2)
    top = -((side - height) // 2)
    return img.crop((left, top, left + side, top + side))


def to_model_input(img: Image.Image, size: int) -> np.ndarray:
    """Resize the square image to the model grid, scaled to [0, 1]."""
    resized = img.resize((size, size), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0


def preprocess(img: Image.Image, crop: CropWindow | None, size: int) -> np.ndarray:
    square = crop_square(img, crop) if crop is not None else pad_to_square(img)
    return to_model_input(square, size)
