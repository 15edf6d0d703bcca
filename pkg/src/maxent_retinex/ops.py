"""Image operators used by the loss: gradients, TV, histogram equalization and
the structure-aware weighting map.

Differentiable operators take torch tensors shaped (..., C, H, W). The
histogram-equalization target is a fixed data transform and works on numpy.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .core import ContractError


class GradientPair(NamedTuple):
    horizontal: torch.Tensor
    vertical: torch.Tensor


def grad(img: torch.Tensor) -> GradientPair:
    """Forward differences along width (horizontal) and height (vertical).

    The trailing column/row is replicate-padded, so its difference is zero
    and both maps keep the input shape.
    """
    if img.dim() < 2:
        raise ContractError(f"grad needs at least 2 spatial dims, got shape {tuple(img.shape)}")
    dh = img[..., :, 1:] - img[..., :, :-1]
    dv = img[..., 1:, :] - img[..., :-1, :]
    # zero difference at the trailing edge == replicate padding of img
    dh = F.pad(dh, (0, 1))
    dv = F.pad(dv, (0, 0, 0, 1))
    return GradientPair(dh, dv)


def tv_l1(img: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of ``|horizontal| + |vertical|``."""
    g = grad(img)
    return (g.horizontal.abs() + g.vertical.abs()).mean()


def structure_weight(reflectance_grad: GradientPair, lambda3: float) -> GradientPair:
    """``exp(-lambda3 * mean_c |grad R|)`` per direction, collapsed to one channel."""
    h, v = reflectance_grad
    if h.dim() < 3 or h.shape[-3] != 3:
        raise ContractError(f"reflectance gradient must have 3 channels, got {tuple(h.shape)}")
    wh = torch.exp(-lambda3 * h.abs().mean(dim=-3, keepdim=True))
    wv = torch.exp(-lambda3 * v.abs().mean(dim=-3, keepdim=True))
    return GradientPair(wh, wv)


def equalization_lut(bins: np.ndarray) -> np.ndarray:
    """Lookup table mapping each of the 256 bins through the normalized CDF.

    ``bins`` holds the quantized (uint8) pixel values. A single occupied bin
    maps everything to 0.
    """
    bins = np.asarray(bins)
    if bins.size == 0:
        raise ContractError("cannot equalize an empty image")
    hist = np.bincount(bins.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = cdf[-1]
    cdf_min = cdf[int(bins.min())]
    if n == cdf_min:
        return np.zeros(256, dtype=np.float64)
    lut = (cdf - cdf_min) / float(n - cdf_min)
    return np.clip(lut, 0.0, 1.0)


def hist_equalize(channel: np.ndarray) -> np.ndarray:
    """Histogram-equalize a single-channel [0, 1] image over 256 bins.

    Accepts HxW or HxWx1 input and returns the same shape. Float64 input
    stays float64; anything else comes back as float32.
    """
    channel = np.asarray(channel)
    if channel.ndim == 3 and channel.shape[2] != 1:
        raise ContractError(f"hist_equalize takes one channel, got shape {channel.shape}")
    if channel.ndim not in (2, 3):
        raise ContractError(f"hist_equalize takes HxW or HxWx1, got shape {channel.shape}")
    if channel.size == 0:
        raise ContractError("cannot equalize an empty image")
    if channel.dtype == np.uint8:
        bins = channel
    else:
        bins = np.clip(np.rint(channel.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    lut = equalization_lut(bins)
    dtype = np.float64 if channel.dtype == np.float64 else np.float32
    return lut[bins].astype(dtype)
