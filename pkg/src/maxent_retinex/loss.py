"""Maximum-entropy Retinex objective.

All inputs are torch tensors shaped (N, C, H, W): the observed image ``S``
and reflectance ``R`` have 3 channels, the illumination ``I`` has one. Every
L1 norm is a mean over elements so the weights do not depend on resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import ContractError
from .ops import grad, hist_equalize, structure_weight, tv_l1


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1   # reflectance (max-entropy) term
    lambda2: float = 0.1   # structure-aware illumination smoothness
    lambda3: float = 10.0  # edge sharpness of the structure weight
    lambda4: float = 0.01  # reflectance TV

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass
class LossBreakdown:
    reconstruction: torch.Tensor
    reflectance: torch.Tensor
    illumination: torch.Tensor
    reflectance_tv: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in
                ("total", "reconstruction", "reflectance", "illumination", "reflectance_tv")}


def _check(t: torch.Tensor, channels: int, name: str):
    if t.dim() < 3 or t.shape[-3] != channels:
        raise ContractError(f"{name} must have {channels} channel(s) in dim -3, got {tuple(t.shape)}")


def _check_spatial(*tensors):
    ref = tensors[0].shape[-2:]
    for t in tensors[1:]:
        if t.shape[-2:] != ref or t.shape[:-3] != tensors[0].shape[:-3]:
            raise ContractError(
                f"shape mismatch: {[tuple(x.shape) for x in tensors]}")


def he_target(S: torch.Tensor) -> torch.Tensor:
    """Histogram-equalized max channel of each image in ``S`` (no gradient)."""
    _check(S, 3, "S")
    m = S.detach().amax(dim=-3).cpu().numpy()
    flat = m.reshape(-1, *m.shape[-2:])
    out = np.stack([hist_equalize(x.astype(np.float64)) for x in flat])
    out = out.reshape(m.shape)
    return torch.from_numpy(out).to(device=S.device, dtype=S.dtype).unsqueeze(-3)


def recon_loss(S: torch.Tensor, R: torch.Tensor, I: torch.Tensor) -> torch.Tensor:
    """Mean ``|S - R * I|`` with the illumination broadcast over RGB."""
    _check(S, 3, "S")
    _check(R, 3, "R")
    _check(I, 1, "I")
    _check_spatial(S, R, I)
    return (S - R * I).abs().mean()


def reflectance_loss(R: torch.Tensor, S: torch.Tensor | None = None,
                     target: torch.Tensor | None = None) -> torch.Tensor:
    """Mean ``|max_c R - F(max_c S)|``.

    Pass ``target`` to reuse a precomputed equalized map (e.g. a crop of the
    full-image target used during training); otherwise it is derived from S.
    """
    _check(R, 3, "R")
    if target is None:
        if S is None:
            raise ContractError("reflectance_loss needs S or a precomputed target")
        _check_spatial(R, S)
        target = he_target(S)
    _check(target, 1, "target")
    _check_spatial(R, target)
    return (R.amax(dim=-3, keepdim=True) - target.detach()).abs().mean()


def illumination_loss(I: torch.Tensor, R: torch.Tensor, lambda3: float = 10.0) -> torch.Tensor:
    """Structure-aware smoothness: mean of ``|grad I| * exp(-lambda3 |grad R|)``
    summed over both directions."""
    _check(I, 1, "I")
    _check(R, 3, "R")
    _check_spatial(I, R)
    gi = grad(I)
    w = structure_weight(grad(R), lambda3)
    return (gi.horizontal.abs() * w.horizontal + gi.vertical.abs() * w.vertical).mean()


def total_loss(S: torch.Tensor, R: torch.Tensor, I: torch.Tensor,
               weights: LossWeights = LossWeights(),
               target: torch.Tensor | None = None) -> LossBreakdown:
    rec = recon_loss(S, R, I)
    refl = reflectance_loss(R, S, target=target)
    illum = illumination_loss(I, R, weights.lambda3)
    tv = tv_l1(R)
    total = rec + weights.lambda1 * refl + weights.lambda2 * illum + weights.lambda4 * tv
    return LossBreakdown(rec, refl, illum, tv, total)
