"""Generation and completion trainers.

Both trainers minimize the rendering loss plus a KL regularizer and update
only the encoder(s) and hypernetwork: the radiance-field MLP itself is
never an optimizer variable, its weights are re-emitted from the latent at
every step.  All randomness flows from one torch generator whose state is
checkpointed, so runs are bit-reproducible and resumable in deterministic
mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .encoder import (DualEncoder, EncoderConfig, GaussianLatent,
                      PointNetEncoder, encode, prepare_points, reparameterize)
from .field import VoxelFeatureExtractor, as_field_fn
from .geometry import EmptyPartError, random_split_plane, rays_for_camera, split_by_plane
from .hypernet import FieldArchitecture, FieldWeights, HypernetConfig, HyperNetwork
from .renderer import OccupancyGrid, RenderConfig, render_rays

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a diagnostic snapshot was written if possible."""


class CheckpointKindError(ValueError):
    """Checkpoint kind (generation vs completion) does not fit the operation."""


def require_kind(ckpt: "Checkpoint", kind: str):
    if ckpt.kind != kind:
        raise CheckpointKindError(f"operation needs a {kind} checkpoint, got {ckpt.kind}")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    weight_decay: float = 1e-2
    rays_per_step: int = 400
    kl_weight: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    occupancy_interval: int = 16
    grid_resolution: int = 64
    kl_mode: str = "missing"            # completion: 'missing' or 'concat'
    log_every: int = 10
    deterministic: bool = True
    split_max_offset: float = 0.3       # completion plane sampling
    encoder: EncoderConfig = EncoderConfig()
    encoder_missing: EncoderConfig = EncoderConfig(latent_dim=128)
    arch: FieldArchitecture = FieldArchitecture()
    hypernet: HypernetConfig = HypernetConfig()
    render: RenderConfig = RenderConfig()

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.rays_per_step < 1:
            raise ValueError("rays_per_step must be >= 1")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.kl_mode not in ("missing", "concat"):
            raise ValueError("kl_mode must be 'missing' or 'concat'")

    @classmethod
    def for_completion(cls, **kwargs) -> "TrainConfig":
        """Defaults with two 128-dim part encoders (concatenated latent 256)."""
        kwargs.setdefault("encoder", EncoderConfig(latent_dim=128))
        kwargs.setdefault("encoder_missing", EncoderConfig(latent_dim=128))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "lr": self.lr,
            "weight_decay": self.weight_decay, "rays_per_step": self.rays_per_step,
            "kl_weight": self.kl_weight, "grad_clip": self.grad_clip,
            "seed": self.seed, "occupancy_interval": self.occupancy_interval,
            "grid_resolution": self.grid_resolution, "kl_mode": self.kl_mode,
            "log_every": self.log_every, "deterministic": self.deterministic,
            "split_max_offset": self.split_max_offset,
            "encoder": self.encoder.to_dict(),
            "encoder_missing": self.encoder_missing.to_dict(),
            "arch": self.arch.to_dict(),
            "hypernet": self.hypernet.to_dict(),
            "render": self.render.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        d["encoder_missing"] = EncoderConfig.from_dict(d["encoder_missing"])
        d["arch"] = FieldArchitecture.from_dict(d["arch"])
        d["hypernet"] = HypernetConfig.from_dict(d["hypernet"])
        d["render"] = RenderConfig.from_dict(d["render"])
        return cls(**d)


def color_loss(rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the squared L2 pixel error (mean, not sum, so the
    learning rate does not depend on rays_per_step)."""
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(rendered.shape)} vs {tuple(target.shape)}")
    return ((rendered - target) ** 2).sum(dim=-1).mean()


def kl_loss(g: GaussianLatent) -> torch.Tensor:
    """Closed-form KL(N(mean, diag exp(logvar)) || N(0, I))."""
    return 0.5 * (torch.exp(g.logvar) + g.mean ** 2 - 1.0 - g.logvar).sum()


class _VolumeMixin:
    """Optional voxel-feature conditioning, shared by both models.

    Active only when the field architecture declares feature channels; the
    extractor's parameters then train jointly and live in the checkpoint.
    """

    def _init_extractor(self, cfg: TrainConfig):
        if cfg.arch.feature_dim > 0:
            self.extractor = VoxelFeatureExtractor(
                cfg.arch.feature_dim, cfg.feature_volume_resolution)
        else:
            self.extractor = None

    def make_volume(self, points: torch.Tensor):
        """FeatureVolume from prepared (N, 6) conditioning points, or None."""
        if self.extractor is None:
            return None
        return self.extractor(points[:, :3], points[:, 3:])

    def field_closure(self, z: torch.Tensor, points: torch.Tensor):
        """Callable field for latent z conditioned (optionally) on points."""
        return as_field_fn(self.field_weights(z), self.make_volume(points))


class GenerationModel(_VolumeMixin, nn.Module):
    kind = "generation"

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = PointNetEncoder(cfg.encoder, variational=True)
        self.hyper = HyperNetwork(cfg.encoder.latent_dim, cfg.arch, cfg.hypernet,
                                  seed=cfg.seed)
        self._init_extractor(cfg)

    @property
    def latent_dim(self) -> int:
        return self.cfg.encoder.latent_dim

    def encode_points(self, points: torch.Tensor) -> GaussianLatent:
        return encode(self.encoder, points)

    def field_weights(self, z: torch.Tensor) -> FieldWeights:
        return FieldWeights(self.hyper(z), self.cfg.arch)


class CompletionModel(_VolumeMixin, nn.Module):
    kind = "completion"

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        self.dual = DualEncoder(cfg.encoder, cfg.encoder_missing)
        self.hyper = HyperNetwork(self.dual.latent_dim, cfg.arch, cfg.hypernet,
                                  seed=cfg.seed)
        self._init_extractor(cfg)

    @property
    def latent_dim(self) -> int:
        return self.dual.latent_dim

    @property
    def missing_dim(self) -> int:
        return self.dual.missing.cfg.latent_dim

    def field_weights(self, z: torch.Tensor) -> FieldWeights:
        return FieldWeights(self.hyper(z), self.cfg.arch)


@dataclass
class Checkpoint:
    """Self-describing training snapshot: everything needed to resume or to
    run inference, with no external configuration."""

    kind: str                     # 'generation' or 'completion'
    config: TrainConfig
    model_state: dict
    step: int = 0
    optimizer_state: dict | None = None
    grid_values: torch.Tensor | None = None   # (n_scenes, G, G, G)
    grid_binary: torch.Tensor | None = None
    rng_state: torch.Tensor | None = None

    def manifest(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": self.kind,
                "step": self.step, "config": self.config.to_dict()}

    def build_model(self) -> nn.Module:
        model = (GenerationModel(self.config) if self.kind == "generation"
                 else CompletionModel(self.config))
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path):
    payload = {
        "manifest": json.dumps(ckpt.manifest()),
        "model": ckpt.model_state,
        "optimizer": ckpt.optimizer_state,
        "grid_values": ckpt.grid_values,
        "grid_binary": ckpt.grid_binary,
        "rng_state": ckpt.rng_state,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, weights_only=True)
    manifest = json.loads(payload["manifest"])
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    return Checkpoint(
        kind=manifest["kind"],
        config=TrainConfig.from_dict(manifest["config"]),
        model_state=payload["model"],
        step=manifest["step"],
        optimizer_state=payload["optimizer"],
        grid_values=payload["grid_values"],
        grid_binary=payload["grid_binary"],
        rng_state=payload["rng_state"],
    )


class _JsonlLogger:
    def __init__(self, path):
        self.file = open(path, "a") if path is not None else None

    def write(self, row: dict):
        if self.file is not None:
            self.file.write(json.dumps(row) + "\n")
            self.file.flush()

    def close(self):
        if self.file is not None:
            self.file.close()


def _draw_seed(gen: torch.Generator) -> int:
    return int(torch.randint(0, 2 ** 31 - 1, (1,), generator=gen))


def _scene_tensors(scene):
    """Precompute per-view ray origins/directions and flattened target pixels."""
    origins, directions, pixels = [], [], []
    for cam, img in zip(scene.cameras, scene.images):
        bundle = rays_for_camera(cam)
        origins.append(torch.from_numpy(bundle.origins).float())
        directions.append(torch.from_numpy(bundle.directions).float())
        pixels.append(torch.from_numpy(img.reshape(-1, 3)).float())
    return origins, directions, pixels


def _psnr_probe(rendered: torch.Tensor, target: torch.Tensor) -> float:
    mse = float(((rendered - target) ** 2).mean())
    return 99.0 if mse == 0 else min(99.0, -10.0 * math.log10(mse))


class _TrainState:
    """Shared plumbing for both trainers."""

    def __init__(self, model: nn.Module, cfg: TrainConfig, n_scenes: int,
                 resume: Checkpoint | None):
        self.cfg = cfg
        self.model = model
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                           weight_decay=cfg.weight_decay)
        self.generator = torch.Generator().manual_seed(cfg.seed)
        self.grids = [OccupancyGrid(cfg.grid_resolution, cfg.render.tau_sigma,
                                    cfg.render.ema_decay) for _ in range(n_scenes)]
        self.start_step = 0
        if resume is not None:
            model.load_state_dict(resume.model_state)
            if resume.optimizer_state is not None:
                self.optimizer.load_state_dict(resume.optimizer_state)
            if resume.grid_values is not None:
                for i, grid in enumerate(self.grids):
                    grid.values = resume.grid_values[i].clone()
                    grid.binary = resume.grid_binary[i].clone()
            if resume.rng_state is not None:
                self.generator.set_state(resume.rng_state)
            self.start_step = resume.step

    def maybe_update_grid(self, step: int, scene_idx: int, field_fn):
        if step % self.cfg.occupancy_interval == 0:
            grid = self.grids[scene_idx]
            grid.update(field_fn, probes=self.cfg.render.occupancy_probes,
                        generator=self.generator)
            if not bool(grid.binary.any()):
                # A fully culled grid would starve training of samples forever.
                grid.reset_full()

    def checkpoint(self, kind: str, step: int) -> Checkpoint:
        return Checkpoint(
            kind=kind, config=self.cfg, model_state=self.model.state_dict(),
            step=step, optimizer_state=self.optimizer.state_dict(),
            grid_values=torch.stack([g.values for g in self.grids]),
            grid_binary=torch.stack([g.binary for g in self.grids]),
            rng_state=self.generator.get_state(),
        )

    def step_optimizer(self, loss: torch.Tensor):
        self.optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()


def _check_finite(loss, state, kind, step, log_path):
    if torch.isfinite(loss):
        return
    snapshot = None
    if log_path is not None:
        snapshot = Path(log_path).with_suffix(".diverged.ckpt")
        save_checkpoint(state.checkpoint(kind, step), snapshot)
    raise TrainingDiverged(
        f"non-finite loss {float(loss.detach())} at step {step}"
        + (f"; snapshot saved to {snapshot}" if snapshot else ""))


def train_generation(scenes, cfg: TrainConfig, log_path=None,
                     resume: Checkpoint | None = None) -> Checkpoint:
    """Joint training of the variational encoder and hypernetwork on full
    clouds: encode, sample the latent, emit field weights, render a random
    ray batch from a random view, and descend color + KL loss."""
    if not scenes:
        raise ValueError("need at least one scene")
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    model = GenerationModel(cfg)
    state = _TrainState(model, cfg, len(scenes), resume)
    per_scene = [_scene_tensors(s) for s in scenes]
    logger = _JsonlLogger(log_path)
    gen = state.generator

    try:
        for step in range(state.start_step, cfg.iterations):
            i = int(torch.randint(len(scenes), (1,), generator=gen))
            origins, directions, pixels = per_scene[i]

            points = prepare_points(scenes[i].cloud, cfg.encoder.n_points,
                                    seed=_draw_seed(gen))
            g = model.encode_points(points)
            z = reparameterize(g, gen)
            weights = model.field_weights(z)
            field_fn = as_field_fn(weights)

            state.maybe_update_grid(step, i, field_fn)

            v = int(torch.randint(len(origins), (1,), generator=gen))
            n_pix = origins[v].shape[0]
            idx = torch.randperm(n_pix, generator=gen)[:cfg.rays_per_step]
            out = render_rays(origins[v][idx], directions[v][idx], field_fn,
                              state.grids[i], cfg.render, gen)

            loss_color = color_loss(out["rgb"], pixels[v][idx])
            loss_kl = kl_loss(g)
            loss = loss_color + cfg.kl_weight * loss_kl
            _check_finite(loss, state, "generation", step, log_path)
            state.step_optimizer(loss)

            if step % cfg.log_every == 0 or step == cfg.iterations - 1:
                logger.write({"step": step, "loss_color": float(loss_color.detach()),
                              "loss_kl": float(loss_kl.detach()),
                              "psnr_probe": _psnr_probe(out["rgb"].detach(), pixels[v][idx])})
    finally:
        logger.close()
    return state.checkpoint("generation", cfg.iterations)


def _split_with_retries(cloud, gen: torch.Generator, max_offset: float,
                        retries: int = 8):
    for _ in range(retries):
        rng = np.random.default_rng(_draw_seed(gen))
        plane = random_split_plane(rng, max_offset=max_offset)
        try:
            return split_by_plane(cloud, plane)
        except EmptyPartError:
            continue
    return None


def train_completion(scenes, cfg: TrainConfig, log_path=None,
                     resume: Checkpoint | None = None) -> Checkpoint:
    """Completion training: each step splits the cloud by a random plane,
    encodes the parts with independent encoders (existing part deterministic,
    missing part variational), concatenates the codes, and supervises renders
    of the full object.  KL applies to the missing code by default; the
    'concat' mode also pulls the deterministic existing code toward zero."""
    if not scenes:
        raise ValueError("need at least one scene")
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    model = CompletionModel(cfg)
    state = _TrainState(model, cfg, len(scenes), resume)
    per_scene = [_scene_tensors(s) for s in scenes]
    logger = _JsonlLogger(log_path)
    gen = state.generator

    try:
        for step in range(state.start_step, cfg.iterations):
            i = int(torch.randint(len(scenes), (1,), generator=gen))
            origins, directions, pixels = per_scene[i]

            parts = _split_with_retries(scenes[i].cloud, gen, cfg.split_max_offset)
            if parts is None:
                continue  # pathological cloud; skip this step
            existing, missing = parts
            pts_e = prepare_points(existing, cfg.encoder.n_points, seed=_draw_seed(gen))
            pts_m = prepare_points(missing, cfg.encoder_missing.n_points,
                                   seed=_draw_seed(gen))
            z_e = model.dual.encode_existing(pts_e)
            g_m = model.dual.encode_missing(pts_m)
            z = torch.cat([z_e, reparameterize(g_m, gen)])
            weights = model.field_weights(z)
            field_fn = as_field_fn(weights)

            state.maybe_update_grid(step, i, field_fn)

            v = int(torch.randint(len(origins), (1,), generator=gen))
            n_pix = origins[v].shape[0]
            idx = torch.randperm(n_pix, generator=gen)[:cfg.rays_per_step]
            out = render_rays(origins[v][idx], directions[v][idx], field_fn,
                              state.grids[i], cfg.render, gen)

            loss_color = color_loss(out["rgb"], pixels[v][idx])
            loss_kl = kl_loss(g_m)
            if cfg.kl_mode == "concat":
                # Literal reading: regularize the whole concatenated code.
                loss_kl = loss_kl + 0.5 * (z_e ** 2).sum()
            loss = loss_color + cfg.kl_weight * loss_kl
            _check_finite(loss, state, "completion", step, log_path)
            state.step_optimizer(loss)

            if step % cfg.log_every == 0 or step == cfg.iterations - 1:
                logger.write({"step": step, "loss_color": float(loss_color.detach()),
                              "loss_kl": float(loss_kl.detach()),
                              "psnr_probe": _psnr_probe(out["rgb"].detach(), pixels[v][idx])})
    finally:
        logger.close()
    return state.checkpoint("completion", cfg.iterations)
