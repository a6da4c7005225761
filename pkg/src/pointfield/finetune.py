"""Per-scene optimization on top of a pretrained checkpoint.

All entry points here treat the trained networks as a frozen decoder and
move only latent codes (auto-decoder style), unless 'latent+hypernet' mode
is requested explicitly.  Zero-view inference, sparse-view latent
refinement, completion fine-tuning of the missing code, latent
interpolation and part stitching all funnel through the same machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .encoder import prepare_points
from .field import as_field_fn
from .geometry import ColoredPointCloud, rays_for_camera
from .hypernet import FieldWeights
from .renderer import OccupancyGrid, render_rays
from .training import Checkpoint, color_loss, require_kind


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "latent"          # 'latent' or 'latent+hypernet'
    lr: float = 0.01
    hypernet_lr: float = 1e-4
    iterations: int = 200
    rays_per_step: int = 256
    seed: int = 0
    eval_every: int = 50          # full-supervision checks for best tracking
    grid_refresh: int = 16

    def __post_init__(self):
        if self.mode not in ("latent", "latent+hypernet"):
            raise ValueError("mode must be 'latent' or 'latent+hypernet'")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0 (0 = pure inference)")


@dataclass
class FinetuneResult:
    z: torch.Tensor
    weights: FieldWeights
    initial_loss: float | None = None
    final_loss: float | None = None
    best_losses: list = field(default_factory=list)  # running best at each eval


def infer_zero_view(cloud: ColoredPointCloud, ckpt: Checkpoint) -> FieldWeights:
    """Field weights straight from the encoder mean; consumes no images."""
    require_kind(ckpt, "generation")
    model = ckpt.build_model()
    with torch.no_grad():
        points = prepare_points(cloud, ckpt.config.encoder.n_points, seed=0)
        g = model.encode_points(points)
        return model.field_weights(g.mean).detach()


def _view_tensors(views):
    origins, directions, pixels = [], [], []
    for cam, img in views:
        bundle = rays_for_camera(cam)
        origins.append(torch.from_numpy(bundle.origins).float())
        directions.append(torch.from_numpy(bundle.directions).float())
        pixels.append(torch.from_numpy(np.asarray(img).reshape(-1, 3)).float())
    return origins, directions, pixels


def _full_loss(field_fn, tensors, grid, render_cfg) -> float:
    """Color loss over every pixel of every supervision view (no sampling)."""
    origins, directions, pixels = tensors
    total, count = 0.0, 0
    with torch.no_grad():
        for o, d, p in zip(origins, directions, pixels):
            for lo in range(0, o.shape[0], 4096):
                hi = min(lo + 4096, o.shape[0])
                out = render_rays(o[lo:hi], d[lo:hi], field_fn, grid, render_cfg)
                total += float(((out["rgb"] - p[lo:hi]) ** 2).sum())
                count += hi - lo
    return total / max(count, 1)


def _optimize_latent(make_z, apply_z, views, ckpt: Checkpoint, cfg: FinetuneConfig):
    """Shared loop: gradient-descend a latent against rendering loss.

    make_z produces the initial leaf tensor; apply_z maps the current latent
    to FieldWeights (closing over whatever parts stay frozen).
    """
    render_cfg = ckpt.config.render
    tensors = _view_tensors(views)
    gen = torch.Generator().manual_seed(cfg.seed)

    z = make_z().detach().clone().requires_grad_(True)
    grid = OccupancyGrid.from_field(as_field_fn(apply_z(z).detach()),
                                    ckpt.config.grid_resolution,
                                    render_cfg.tau_sigma, seed=cfg.seed)

    best_z = z.detach().clone()
    initial = _full_loss(as_field_fn(apply_z(z).detach()), tensors, grid, render_cfg)
    best_loss = initial
    best_trace = [best_loss]

    params = [{"params": [z], "lr": cfg.lr}]
    opt = torch.optim.Adam(params)
    origins, directions, pixels = tensors

    for it in range(cfg.iterations):
        if it > 0 and it % cfg.grid_refresh == 0:
            grid = OccupancyGrid.from_field(as_field_fn(apply_z(z).detach()),
                                            ckpt.config.grid_resolution,
                                            render_cfg.tau_sigma, seed=cfg.seed)
        v = int(torch.randint(len(origins), (1,), generator=gen))
        n_pix = origins[v].shape[0]
        idx = torch.randperm(n_pix, generator=gen)[:cfg.rays_per_step]
        weights = apply_z(z)
        out = render_rays(origins[v][idx], directions[v][idx],
                          as_field_fn(weights), grid, render_cfg, gen)
        loss = color_loss(out["rgb"], pixels[v][idx])
        opt.zero_grad()
        loss.backward()
        opt.step()

        if (it + 1) % cfg.eval_every == 0 or it == cfg.iterations - 1:
            current = _full_loss(as_field_fn(apply_z(z).detach()), tensors,
                                 grid, render_cfg)
            if current < best_loss:
                best_loss = current
                best_z = z.detach().clone()
            best_trace.append(best_loss)

    weights = apply_z(best_z).detach()
    return FinetuneResult(best_z, weights, initial_loss=initial,
                          final_loss=best_loss, best_losses=best_trace)


def finetune_latent(cloud: ColoredPointCloud, views, ckpt: Checkpoint,
                    cfg: FinetuneConfig = FinetuneConfig()) -> FinetuneResult:
    """Auto-decoder refinement: start from the encoder mean and optimize the
    latent on the provided posed images with the hypernetwork frozen.

    With no views (or zero iterations) this reduces to zero-view inference.
    The returned latent is the best found under full-supervision loss, so
    the final loss never exceeds the initial one.
    """
    require_kind(ckpt, "generation")
    model = ckpt.build_model()
    if cfg.mode == "latent":
        for p in model.parameters():
            p.requires_grad_(False)

    with torch.no_grad():
        points = prepare_points(cloud, ckpt.config.encoder.n_points, seed=0)
        z0 = model.encode_points(points).mean.detach()

    if not views or cfg.iterations == 0:
        weights = model.field_weights(z0).detach()
        return FinetuneResult(z0, weights)

    return _optimize_latent(lambda: z0, lambda z: model.field_weights(z),
                            views, ckpt, cfg)


def finetune_completion(existing: ColoredPointCloud, views, ckpt: Checkpoint,
                        cfg: FinetuneConfig = FinetuneConfig(),
                        z_init_seed: int | None = None) -> FinetuneResult:
    """Optimize only the missing-part code against captured frames.

    The existing-part code is frozen at its encoder output; the missing code
    starts from a seeded standard-normal draw, matching how completions are
    sampled at inference time.  Returned result carries the missing code.
    """
    require_kind(ckpt, "completion")
    model = ckpt.build_model()
    if cfg.mode == "latent":
        for p in model.parameters():
            p.requires_grad_(False)

    with torch.no_grad():
        pts_e = prepare_points(existing, ckpt.config.encoder.n_points, seed=0)
        z_e = model.dual.encode_existing(pts_e).detach()

    seed = cfg.seed if z_init_seed is None else z_init_seed
    z_m0 = torch.randn(model.missing_dim,
                       generator=torch.Generator().manual_seed(seed))

    def apply(z_m):
        return model.field_weights(torch.cat([z_e, z_m]))

    if not views or cfg.iterations == 0:
        return FinetuneResult(z_m0, apply(z_m0).detach())

    return _optimize_latent(lambda: z_m0, apply, views, ckpt, cfg)


def sample_completion(existing: ColoredPointCloud, ckpt: Checkpoint,
                      seed: int) -> FieldWeights:
    """One prior-sampled completion: existing code from the encoder, missing
    code drawn from N(0, I)."""
    require_kind(ckpt, "completion")
    res = finetune_completion(existing, [], ckpt,
                              FinetuneConfig(iterations=0), z_init_seed=seed)
    return res.weights


def interpolate_latents(z_a: torch.Tensor, z_b: torch.Tensor, steps: int,
                        ckpt_or_hyper) -> list:
    """Fields along the straight line between two latents.

    Endpoints use the input latents verbatim, so the emitted weight vectors
    at t = 0 and t = 1 match the inputs' fields bit for bit.
    """
    if z_a.shape != z_b.shape:
        raise ValueError(f"latent dims differ: {tuple(z_a.shape)} vs {tuple(z_b.shape)}")
    if steps < 2:
        raise ValueError("steps must be >= 2 (the two endpoints)")
    hyper = (ckpt_or_hyper.build_model().hyper
             if isinstance(ckpt_or_hyper, Checkpoint) else ckpt_or_hyper)
    arch = hyper.arch
    out = []
    with torch.no_grad():
        for k in range(steps):
            t = k / (steps - 1)
            if k == 0:
                z = z_a
            elif k == steps - 1:
                z = z_b
            else:
                z = (1.0 - t) * z_a + t * z_b
            out.append(FieldWeights(hyper(z).detach(), arch))
    return out


def stitch_parts(part_a: ColoredPointCloud, part_b: ColoredPointCloud,
                 ckpt: Checkpoint) -> FieldWeights:
    """Fuse two parts into one field: existing-encoder code for part A
    concatenated with the missing-encoder mean for part B."""
    require_kind(ckpt, "completion")
    model = ckpt.build_model()
    with torch.no_grad():
        pts_a = prepare_points(part_a, ckpt.config.encoder.n_points, seed=0)
        pts_b = prepare_points(part_b, ckpt.config.encoder_missing.n_points, seed=0)
        z_e = model.dual.encode_existing(pts_a)
        g_m = model.dual.encode_missing(pts_b)
        z = torch.cat([z_e, g_m.mean])
        return model.field_weights(z).detach()
