"""Hypernetwork mapping a latent code to the flat weight vector of the
radiance-field MLP.

The target MLP never owns trainable parameters of its own: its complete
parameter vector (weights and biases of every layer) is emitted by
``HyperNetwork.forward`` and carried around as a :class:`FieldWeights`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class ConfigurationError(ValueError):
    """Hypernetwork heads do not match the requested field architecture."""


@dataclass(frozen=True)
class FieldArchitecture:
    """Shape of the radiance-field MLP: position (plus optional Fourier
    features and voxel features) in, (r, g, b, density) out."""

    hidden: int = 64
    depth: int = 4            # total number of linear layers
    pe_bands: int = 6         # Fourier feature bands; 0 = raw coordinates
    feature_dim: int = 0      # appended voxel-feature channels, 0 = off
    out_dim: int = 4

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.out_dim != 4:
            raise ValueError("field output is fixed to (r, g, b, density)")
        if self.pe_bands < 0 or self.feature_dim < 0:
            raise ValueError("pe_bands and feature_dim must be >= 0")

    @property
    def in_dim(self) -> int:
        return 3 + 6 * self.pe_bands + self.feature_dim

    def layer_shapes(self):
        """[(fan_in, fan_out)] for each linear layer, input to output."""
        dims = [self.in_dim] + [self.hidden] * (self.depth - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "depth": self.depth,
            "pe_bands": self.pe_bands,
            "feature_dim": self.feature_dim,
            "out_dim": self.out_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldArchitecture":
        return cls(**d)


def weight_count(arch: FieldArchitecture) -> int:
    """Exact parameter count of the field MLP: sum of fan_in*fan_out + fan_out."""
    return sum(fi * fo + fo for fi, fo in arch.layer_shapes())


@dataclass
class FieldWeights:
    """Flat parameter vector plus the architecture it instantiates."""

    flat: torch.Tensor  # (P,)
    arch: FieldArchitecture

    def __post_init__(self):
        expected = weight_count(self.arch)
        if self.flat.ndim != 1 or self.flat.shape[0] != expected:
            raise ValueError(
                f"flat vector has {tuple(self.flat.shape)} entries, "
                f"architecture needs ({expected},)"
            )

    def layers(self):
        """Views (W, b) per layer; W is (fan_out, fan_in)."""
        out = []
        offset = 0
        for fan_in, fan_out in self.arch.layer_shapes():
            w = self.flat[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = self.flat[offset:offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def detach(self) -> "FieldWeights":
        return FieldWeights(self.flat.detach(), self.arch)


def flatten_layers(layers, arch: FieldArchitecture) -> FieldWeights:
    """Inverse of FieldWeights.layers(); used to round-trip shape soundness."""
    chunks = []
    for w, b in layers:
        chunks.append(w.reshape(-1))
        chunks.append(b.reshape(-1))
    return FieldWeights(torch.cat(chunks), arch)


@dataclass(frozen=True)
class HypernetConfig:
    trunk_widths: tuple = (256, 512)

    def to_dict(self) -> dict:
        return {"trunk_widths": list(self.trunk_widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "HypernetConfig":
        return cls(trunk_widths=tuple(d["trunk_widths"]))


class HyperNetwork(nn.Module):
    """Shared trunk plus one linear head per target layer.

    Heads are initialized so that the emitted vector at init reproduces the
    statistics of a conventionally initialized MLP: head weights are scaled
    near zero and head biases hold a fan-in-scaled random draw.  Without
    this the generated field is degenerate at step 0.
    """

    def __init__(self, latent_dim: int, arch: FieldArchitecture,
                 cfg: HypernetConfig = HypernetConfig(), seed: int = 0):
        super().__init__()
        self.latent_dim = latent_dim
        self.arch = arch
        self.cfg = cfg

        trunk = []
        last = latent_dim
        for width in cfg.trunk_widths:
            trunk.append(nn.Linear(last, width))
            trunk.append(nn.ReLU())
            last = width
        self.trunk = nn.Sequential(*trunk)

        gen = torch.Generator().manual_seed(seed)
        heads = []
        for fan_in, fan_out in arch.layer_shapes():
            head = nn.Linear(last, fan_in * fan_out + fan_out)
            with torch.no_grad():
                # Near-zero map from latent, so init output is dominated by bias.
                nn.init.kaiming_normal_(head.weight, nonlinearity="relu")
                head.weight.mul_(1e-2)
                bound = 1.0 / math.sqrt(fan_in)
                head.bias.uniform_(-bound, bound, generator=gen)
            heads.append(head)
        self.heads = nn.ModuleList(heads)

    @property
    def output_size(self) -> int:
        return weight_count(self.arch)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """Map latent(s) to flat field parameters; (D,) -> (P,) or (B, D) -> (B, P)."""
        h = self.trunk(z)
        return torch.cat([head(h) for head in self.heads], dim=-1)


def generate_weights(hyper: HyperNetwork, z: torch.Tensor,
                     arch: FieldArchitecture | None = None) -> FieldWeights:
    """Emit the field parameter vector for a single latent code."""
    if arch is not None and arch != hyper.arch:
        raise ConfigurationError(
            f"hypernetwork emits weights for {hyper.arch}, caller asked for {arch}"
        )
    if not torch.isfinite(z).all():
        raise ValueError("latent code contains non-finite values")
    if z.ndim != 1:
        raise ValueError("generate_weights takes a single latent (D,)")
    if z.shape[0] != hyper.latent_dim:
        raise ConfigurationError(
            f"latent dim {z.shape[0]} does not match hypernetwork input {hyper.latent_dim}"
        )
    return FieldWeights(hyper(z), hyper.arch)
