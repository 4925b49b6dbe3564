"""Image buffers, disk IO, and the PSNR oracle.

An image everywhere in this package is a numpy array of shape (H, W, 3),
dtype uint8, sRGB channel order. Distortions compute in floating point
internally and quantize back to uint8 exactly once, so this type is the
stable interchange format between all stages.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

# Minimum side length for an image entering triplet rendering. Matches the
# default training crop so any rendered member can be cropped at full size.
MIN_RENDER_SIDE = 256

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def ensure_image(img: np.ndarray, *, what: str = "image") -> np.ndarray:
    """Validate the (H, W, 3) uint8 contract and return the array unchanged."""
    if not isinstance(img, np.ndarray):
        raise DataError(f"{what} must be a numpy array, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"{what} must have shape (H, W, 3), got {img.shape}")
    if img.dtype != np.uint8:
        raise DataError(f"{what} must be uint8, got {img.dtype}")
    return img


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 image to float64 in [0, 255]. Always copies."""
    return img.astype(np.float64)


def from_float(arr: np.ndarray) -> np.ndarray:
    """Clip to [0, 255] and quantize to uint8. The single rounding step."""
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def load_image(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as im:
        # np.array copies, so the result is writable (torch refuses otherwise)
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    ensure_image(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(path)


def list_corpus(images_dir: str | os.PathLike) -> list[tuple[str, Path]]:
    """(image_id, path) pairs for every image file in a directory, sorted by id.

    The image id is the filename stem; stems must therefore be unique within
    a corpus directory.
    """
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise DataError(f"corpus directory not found: {images_dir}")
    pairs: list[tuple[str, Path]] = []
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
            pairs.append((path.stem, path))
    if not pairs:
        raise DataError(f"no image files under {images_dir}")
    stems = [s for s, _ in pairs]
    if len(set(stems)) != len(stems):
        raise DataError(f"duplicate image ids (filename stems) under {images_dir}")
    return pairs


class ImageStore:
    """Maps image ids to pristine images; the corpus accessor used by training.

    Backed either by a directory of files or an in-memory dict. Loaded images
    are cached, so repeated triplet renders of one pristine are cheap.
    """

    def __init__(self, source: str | os.PathLike | dict[str, np.ndarray]):
        self._cache: dict[str, np.ndarray] = {}
        if isinstance(source, dict):
            for key, val in source.items():
                self._cache[key] = ensure_image(val, what=f"image {key!r}")
            self._paths: dict[str, Path] = {}
        else:
            self._paths = {image_id: path for image_id, path in list_corpus(source)}

    def ids(self) -> list[str]:
        ids = set(self._cache) | set(self._paths)
        return sorted(ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._cache or image_id in self._paths

    def get(self, image_id: str) -> np.ndarray:
        if image_id in self._cache:
            return self._cache[image_id]
        if image_id not in self._paths:
            raise DataError(f"image id not in corpus: {image_id!r}")
        img = load_image(self._paths[image_id])
        self._cache[image_id] = img
        return img


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over the 8-bit range.

    Returns math.inf for identical images (the zero-MSE sentinel).
    """
    ensure_image(ref, what="ref")
    ensure_image(test, what="test")
    if ref.shape != test.shape:
        raise DataError(f"psnr dimension mismatch: {ref.shape} vs {test.shape}")
    diff = ref.astype(np.float64) - test.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)
