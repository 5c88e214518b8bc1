"""Training-time augmentation: flips, in-plane rotations, light affine."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F


def augment_batch(
    x: torch.Tensor,
    generator: torch.Generator,
    max_angle_deg: float = 10.0,
    scale_range: tuple[float, float] = (0.9, 1.1),
    max_translate: float = 0.05,
) -> torch.Tensor:
    """Randomly flip, rotate and rescale each sample of (N, C, D, H, W).

    Flips are exact axis reversals; rotation/scale/translation resample
    in-plane with one bilinear grid_sample (the mask channel comes out
    soft, which is fine for augmentation only).
    """
    n = x.shape[0]
    out = x.clone()

    flip_w = torch.rand(n, generator=generator) < 0.5
    flip_h = torch.rand(n, generator=generator) < 0.5
    if flip_w.any():
        out[flip_w] = torch.flip(out[flip_w], dims=[-1])
    if flip_h.any():
        out[flip_h] = torch.flip(out[flip_h], dims=[-2])

    angles = (torch.rand(n, generator=generator) * 2 - 1) * math.radians(max_angle_deg)
    scales = scale_range[0] + torch.rand(n, generator=generator) * (scale_range[1] - scale_range[0])
    shifts = (torch.rand(n, 2, generator=generator) * 2 - 1) * max_translate

    theta = torch.zeros(n, 3, 4, dtype=x.dtype)
    cos, sin = torch.cos(angles) / scales, torch.sin(angles) / scales
    theta[:, 0, 0] = cos
    theta[:, 0, 1] = -sin
    theta[:, 1, 0] = sin
    theta[:, 1, 1] = cos
    theta[:, 0, 3] = shifts[:, 0]
    theta[:, 1, 3] = shifts[:, 1]
    theta[:, 2, 2] = 1.0  # depth axis untouched

    grid = F.affine_grid(theta, list(out.shape), align_corners=False)
    return F.grid_sample(out, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
