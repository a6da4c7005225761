"""Radiance-field evaluation with externally supplied weights.

The field maps a 3D position (no view direction) to color and volume
density.  Parameters arrive as a flat vector from the hypernetwork, so
evaluation is functional: layers are sliced out of the flat tensor and
applied directly, which keeps gradients flowing back to whatever produced
the vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .hypernet import FieldWeights


def encoded_dim(bands: int) -> int:
    return 3 + 6 * bands


def positional_encode(p: torch.Tensor, bands: int) -> torch.Tensor:
    """Fourier features [p, sin(2^0 pi p), cos(2^0 pi p), ..., cos(2^(B-1) pi p)].

    bands = 0 returns the raw coordinates.  Output dim is 3 + 6 * bands.
    """
    if bands < 0:
        raise ValueError("bands must be >= 0")
    if bands == 0:
        return p
    freqs = (2.0 ** torch.arange(bands, dtype=p.dtype, device=p.device)) * torch.pi
    angles = p[..., None, :] * freqs[:, None]            # (..., bands, 3)
    feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    return torch.cat([p, feats.flatten(start_dim=-2)], dim=-1)


@dataclass
class FeatureVolume:
    """Regular grid of feature vectors over [-1, 1]^3, trilinearly sampled."""

    grid: torch.Tensor  # (V, V, V, F)

    def __post_init__(self):
        if self.grid.ndim != 4 or len({self.grid.shape[0], self.grid.shape[1], self.grid.shape[2]}) != 1:
            raise ValueError(f"grid must be (V, V, V, F), got {tuple(self.grid.shape)}")
        if not torch.isfinite(self.grid).all():
            raise ValueError("feature grid contains non-finite values")

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.grid.shape[3]


def trilinear_sample(volume: FeatureVolume, positions: torch.Tensor) -> torch.Tensor:
    """Interpolate grid features at positions in [-1, 1]^3; (M, 3) -> (M, F).

    Grid vertex g sits at linspace(-1, 1, V)[g] per axis; querying exactly at
    a vertex returns that vertex's feature.
    """
    v = volume.resolution
    grid = volume.grid
    # Map [-1, 1] to continuous index [0, V-1].
    idx = (positions.clamp(-1.0, 1.0) + 1.0) * 0.5 * (v - 1)
    i0 = idx.floor().long().clamp(0, v - 2)
    frac = idx - i0.to(idx.dtype)
    i1 = i0 + 1

    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]

    c000 = grid[x0, y0, z0]
    c100 = grid[x1, y0, z0]
    c010 = grid[x0, y1, z0]
    c001 = grid[x0, y0, z1]
    c110 = grid[x1, y1, z0]
    c101 = grid[x1, y0, z1]
    c011 = grid[x0, y1, z1]
    c111 = grid[x1, y1, z1]

    return (
        c000 * (1 - fx) * (1 - fy) * (1 - fz)
        + c100 * fx * (1 - fy) * (1 - fz)
        + c010 * (1 - fx) * fy * (1 - fz)
        + c001 * (1 - fx) * (1 - fy) * fz
        + c110 * fx * fy * (1 - fz)
        + c101 * fx * (1 - fy) * fz
        + c011 * (1 - fx) * fy * fz
        + c111 * fx * fy * fz
    )


def eval_field(positions: torch.Tensor, weights: FieldWeights,
               volume: FeatureVolume | None = None) -> torch.Tensor:
    """Evaluate the field at (M, 3) positions inside [-1, 1]^3.

    Returns (M, 4): sigmoid-squashed rgb in [0, 1] and softplus density >= 0.
    There is deliberately no view-direction input.
    """
    arch = weights.arch
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError(f"positions must be (M, 3), got {tuple(positions.shape)}")
    x = positional_encode(positions, arch.pe_bands)
    if arch.feature_dim > 0:
        if volume is None:
            raise ValueError("architecture expects voxel features but none were given")
        if volume.feature_dim != arch.feature_dim:
            raise ValueError(
                f"feature volume has {volume.feature_dim} channels, arch expects {arch.feature_dim}"
            )
        x = torch.cat([x, trilinear_sample(volume, positions)], dim=-1)
    elif volume is not None:
        raise ValueError("feature volume given but architecture has feature_dim = 0")

    layers = weights.layers()
    h = x.to(weights.flat.dtype)
    for w, b in layers[:-1]:
        h = F.relu(F.linear(h, w, b))
    w, b = layers[-1]
    raw = F.linear(h, w, b)
    rgb = torch.sigmoid(raw[:, :3])
    sigma = F.softplus(raw[:, 3:4])
    return torch.cat([rgb, sigma], dim=-1)


def as_field_fn(weights: FieldWeights, volume: FeatureVolume | None = None):
    """Close over weights, producing positions -> (M, 4)."""
    def fn(positions: torch.Tensor) -> torch.Tensor:
        return eval_field(positions, weights, volume)
    return fn


def voxelize_cloud(positions: torch.Tensor, colors: torch.Tensor, resolution: int) -> torch.Tensor:
    """Scatter a colored cloud into a (4, V, V, V) grid: occupancy + mean rgb."""
    v = resolution
    idx = ((positions.clamp(-1.0, 1.0) + 1.0) * 0.5 * (v - 1)).round().long().clamp(0, v - 1)
    flat = (idx[:, 0] * v + idx[:, 1]) * v + idx[:, 2]
    count = torch.zeros(v * v * v, dtype=positions.dtype)
    count.scatter_add_(0, flat, torch.ones_like(flat, dtype=positions.dtype))
    rgb = torch.zeros(v * v * v, 3, dtype=positions.dtype)
    rgb.scatter_add_(0, flat[:, None].expand(-1, 3), colors.to(positions.dtype))
    occupied = count > 0
    rgb[occupied] = rgb[occupied] / count[occupied, None]
    grid = torch.cat([occupied[:, None].to(positions.dtype), rgb], dim=1)
    return grid.T.reshape(4, v, v, v)


class VoxelFeatureExtractor(nn.Module):
    """Small 3D conv stack turning a voxelized cloud into a feature volume.

    Single-volume simplification of slim-volume feature extraction; applied
    only when the field architecture asks for voxel features.
    """

    def __init__(self, feature_dim: int = 8, resolution: int = 16, hidden: int = 16):
        super().__init__()
        self.resolution = resolution
        self.feature_dim = feature_dim
        self.net = nn.Sequential(
            nn.Conv3d(4, hidden, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv3d(hidden, hidden, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv3d(hidden, feature_dim, kernel_size=3, padding=1),
        )

    def forward(self, positions: torch.Tensor, colors: torch.Tensor) -> FeatureVolume:
        vox = voxelize_cloud(positions, colors, self.resolution)
        feats = self.net(vox[None])[0]           # (F, V, V, V)
        return FeatureVolume(feats.permute(1, 2, 3, 0))
