"""Image containers, channel operators and 8-bit image I/O.

Images are numpy arrays laid out channels-last (H, W, C) with values in
[0, 1]. Torch code elsewhere in the package works on (N, C, H, W) tensors;
:func:`to_tensor` and :func:`from_tensor` convert between the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_EIGHT_BIT_MODES = {"L", "LA", "P", "PA", "RGB", "RGBA", "CMYK", "YCbCr"}


class ContractError(ValueError):
    """An input violated a documented shape or range precondition."""


class ImageIOError(OSError):
    """An image file could not be read or written."""


@dataclass(frozen=True)
class Decomposition:
    """Reflectance (H, W, 3) and illumination (H, W, 1), both in [0, 1]."""

    reflectance: np.ndarray
    illumination: np.ndarray

    def __post_init__(self):
        r, i = self.reflectance, self.illumination
        if r.ndim != 3 or r.shape[2] != 3:
            raise ContractError(f"reflectance must be HxWx3, got {r.shape}")
        if i.ndim != 3 or i.shape[2] != 1:
            raise ContractError(f"illumination must be HxWx1, got {i.shape}")
        if r.shape[:2] != i.shape[:2]:
            raise ContractError(
                f"reflectance {r.shape[:2]} and illumination {i.shape[:2]} differ in size")


def check_image(img: np.ndarray, channels=(1, 3, 4)) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in channels:
        raise ContractError(
            f"expected HxWxC image with C in {channels}, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ContractError(f"image has non-positive size {img.shape}")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/JPEG/BMP file as a float32 HxWx3 array of raw/255.

    Grayscale files are replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in _EIGHT_BIT_MODES:
                raise ImageIOError(f"{path}: unsupported image mode {im.mode!r} (8-bit only)")
            im = im.convert("RGB")
            data = np.asarray(im, dtype=np.uint8)
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnidentifiedImageError) as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    except ImageIOError:
        raise
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot decode image ({exc})") from exc
    return data.astype(np.float32) / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to bytes with ``round(v * 255)``."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write a 1- or 3-channel [0, 1] image as an 8-bit PNG."""
    img = check_image(img, channels=(1, 3))
    lo, hi = float(np.min(img)), float(np.max(img))
    if lo < -1e-6 or hi > 1 + 1e-6 or not np.isfinite(img).all():
        raise ContractError(f"image values must lie in [0, 1], got [{lo}, {hi}]")
    data = to_uint8(img)
    im = Image.fromarray(data[..., 0] if data.shape[2] == 1 else data)
    path = Path(path)
    try:
        im.save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def max_channel(img: np.ndarray) -> np.ndarray:
    """Per-pixel maximum over the RGB channels, shape HxWx1."""
    img = check_image(img, channels=(3,))
    return img.max(axis=2, keepdims=True)


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB image, shape HxWx1."""
    img = check_image(img, channels=(3,))
    r, g, b = LUMA_WEIGHTS
    return (r * img[..., 0:1] + g * img[..., 1:2] + b * img[..., 2:3]).astype(img.dtype)


def to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWxC array -> 1xCxHxW tensor."""
    img = check_image(img)
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """1xCxHxW (or CxHxW) tensor -> HxWxC float array."""
    t = t.detach().cpu()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ContractError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    return np.ascontiguousarray(t.numpy().transpose(1, 2, 0))
