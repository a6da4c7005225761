"""Variational point cloud encoders.

A PointNet-like backbone lifts each colored point (xyz + rgb) through a
shared per-point MLP and max-pools into a single feature; heads map that
feature to a diagonal Gaussian over the latent space (or a plain code for
the deterministic encoder used on the existing part in completion mode).
Max pooling makes the encoding exactly permutation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .geometry import ColoredPointCloud

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class EncoderConfig:
    latent_dim: int = 256
    widths: tuple = (64, 128, 256)
    n_points: int = 2048

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not self.widths:
            raise ValueError("widths must be nonempty")

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim, "widths": list(self.widths),
                "n_points": self.n_points}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(latent_dim=int(d["latent_dim"]), widths=tuple(d["widths"]),
                   n_points=int(d["n_points"]))


@dataclass
class GaussianLatent:
    """Diagonal Gaussian over the latent space: mean and log-variance."""

    mean: torch.Tensor    # (D,)
    logvar: torch.Tensor  # (D,), clamped to [LOGVAR_MIN, LOGVAR_MAX]

    def __post_init__(self):
        if not (torch.isfinite(self.mean).all() and torch.isfinite(self.logvar).all()):
            raise ValueError("latent statistics contain non-finite values")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def detach(self) -> "GaussianLatent":
        return GaussianLatent(self.mean.detach(), self.logvar.detach())


class PointNetEncoder(nn.Module):
    """Shared per-point MLP, max pool, latent head.

    variational=True emits (mean, logvar); False emits a plain code and is
    used for the deterministic existing-part encoder.
    """

    def __init__(self, cfg: EncoderConfig, variational: bool = True):
        super().__init__()
        self.cfg = cfg
        self.variational = variational
        layers = []
        last = 6  # xyz + rgb
        for width in cfg.widths:
            layers.append(nn.Linear(last, width))
            layers.append(nn.ReLU())
            last = width
        self.point_mlp = nn.Sequential(*layers)
        out = 2 * cfg.latent_dim if variational else cfg.latent_dim
        self.head = nn.Sequential(
            nn.Linear(last, last),
            nn.ReLU(),
            nn.Linear(last, out),
        )

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """(N, 6) or (B, N, 6) -> (.., D) or (.., 2D)."""
        feats = self.point_mlp(points)
        pooled = feats.max(dim=-2).values
        return self.head(pooled)


def prepare_points(cloud: ColoredPointCloud, n_points: int, seed: int = 0,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Subsample or pad (resample with replacement) to n_points and stack
    xyz + rgb into an (n_points, 6) tensor."""
    rng = np.random.default_rng(seed)
    n = len(cloud)
    if n == n_points:
        idx = np.arange(n)
    else:
        idx = rng.choice(n, size=n_points, replace=n < n_points)
    stacked = np.concatenate([cloud.positions[idx], cloud.colors[idx]], axis=1)
    return torch.from_numpy(stacked).to(dtype)


def encode(model: PointNetEncoder, points: torch.Tensor) -> GaussianLatent:
    """Run the variational encoder on prepared (N, 6) points."""
    if not model.variational:
        raise ValueError("encode() needs a variational encoder; use model(points) directly")
    if points.ndim != 2 or points.shape[1] != 6:
        raise ValueError(f"points must be (N, 6), got {tuple(points.shape)}")
    if not torch.isfinite(points).all():
        raise ValueError("input points contain non-finite values")
    out = model(points)
    d = model.cfg.latent_dim
    mean = out[:d]
    logvar = out[d:].clamp(LOGVAR_MIN, LOGVAR_MAX)
    return GaussianLatent(mean, logvar)


def encode_cloud(model: PointNetEncoder, cloud: ColoredPointCloud,
                 seed: int = 0) -> GaussianLatent:
    """Convenience wrapper: prepare to the configured input count, then encode."""
    points = prepare_points(cloud, model.cfg.n_points, seed=seed,
                            dtype=next(model.parameters()).dtype)
    return encode(model, points)


def reparameterize(g: GaussianLatent, generator: torch.Generator | int) -> torch.Tensor:
    """Sample z = mean + exp(logvar / 2) * eta with eta ~ N(0, I)."""
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    eta = torch.randn(g.mean.shape, generator=generator, dtype=g.mean.dtype)
    return g.mean + torch.exp(0.5 * g.logvar) * eta


class DualEncoder(nn.Module):
    """Two parameter-independent encoders for the completion framework.

    The existing-part encoder is deterministic (its code is used only for
    reconstruction); the missing-part encoder is variational and its latent
    is pushed toward the standard Gaussian prior.
    """

    def __init__(self, cfg_existing: EncoderConfig, cfg_missing: EncoderConfig):
        super().__init__()
        self.existing = PointNetEncoder(cfg_existing, variational=False)
        self.missing = PointNetEncoder(cfg_missing, variational=True)

    @property
    def latent_dim(self) -> int:
        return self.existing.cfg.latent_dim + self.missing.cfg.latent_dim

    def encode_existing(self, points: torch.Tensor) -> torch.Tensor:
        return self.existing(points)

    def encode_missing(self, points: torch.Tensor) -> GaussianLatent:
        return encode(self.missing, points)


def encode_pair(dual: DualEncoder, existing: ColoredPointCloud,
                missing: ColoredPointCloud, seed: int = 0):
    """(z_existing, gaussian over z_missing) for the two parts."""
    if len(existing) < 1 or len(missing) < 1:
        raise ValueError("both parts must be nonempty")
    dtype = next(dual.parameters()).dtype
    pts_e = prepare_points(existing, dual.existing.cfg.n_points, seed=seed, dtype=dtype)
    pts_m = prepare_points(missing, dual.missing.cfg.n_points, seed=seed + 1, dtype=dtype)
    z_e = dual.encode_existing(pts_e)
    g_m = dual.encode_missing(pts_m)
    return z_e, g_m
