"""Volume rendering along camera rays.

Two render paths live here on purpose.  The fast path marches rays with an
occupancy grid, skipping empty space, and is differentiable with respect to
whatever produces the field values.  The slow path (`reference_render`)
integrates analytic density/color functions with dense uniform quadrature
and no culling; it is the ground-truth oracle the fast path is tested
against and the source of dataset images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .geometry import Camera, Ray, RayBundle, rays_for_camera
from .hypernet import FieldWeights

EVAL_CHUNK = 65536
RAY_CHUNK = 1024


@dataclass(frozen=True)
class RenderConfig:
    step_size: float = 0.01
    near: float = 0.0
    far: float = math.inf
    background: tuple = (0.0, 0.0, 0.0)
    tau_sigma: float = 0.01
    ema_decay: float = 0.95
    occupancy_probes: int = 1
    stratified: bool = True

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0 <= self.near < self.far):
            raise ValueError("require 0 <= near < far")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "step_size", "near", "tau_sigma", "ema_decay", "occupancy_probes", "stratified")}
        d["far"] = self.far if math.isfinite(self.far) else None
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        d = dict(d)
        if d.get("far") is None:
            d["far"] = math.inf
        d["background"] = tuple(d["background"])
        return cls(**d)


class OccupancyGrid:
    """Binary voxel grid over [-1, 1]^3 marking cells with density above
    tau_sigma, maintained as an exponential moving maximum of probes."""

    def __init__(self, resolution: int = 64, tau_sigma: float = 0.01,
                 ema_decay: float = 0.95):
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        self.resolution = resolution
        self.tau_sigma = tau_sigma
        self.ema_decay = ema_decay
        self.values = torch.zeros(resolution, resolution, resolution)
        # Optimistic before the first update so fresh fields get sampled.
        self.binary = torch.ones(resolution, resolution, resolution, dtype=torch.bool)

    @classmethod
    def full(cls, resolution: int = 64, tau_sigma: float = 0.01,
             ema_decay: float = 0.95) -> "OccupancyGrid":
        return cls(resolution, tau_sigma, ema_decay)

    @classmethod
    def from_field(cls, field_fn, resolution: int = 64, tau_sigma: float = 0.01,
                   probes: int = 4, seed: int = 0) -> "OccupancyGrid":
        """One-shot grid for a frozen field (no EMA history)."""
        grid = cls(resolution, tau_sigma)
        grid.values.zero_()
        grid.update(field_fn, probes=probes,
                    generator=torch.Generator().manual_seed(seed))
        return grid

    @property
    def fraction_occupied(self) -> float:
        return float(self.binary.float().mean())

    def cell_index(self, positions: torch.Tensor) -> torch.Tensor:
        g = self.resolution
        return ((positions + 1.0) * 0.5 * g).floor_().long().clamp_(0, g - 1)

    def occupied_at(self, positions: torch.Tensor) -> torch.Tensor:
        idx = self.cell_index(positions.detach().clone())
        return self.binary[idx[:, 0], idx[:, 1], idx[:, 2]]

    def reset_full(self):
        self.binary.fill_(True)
        self.values.zero_()

    def update(self, field_fn, probes: int | None = None,
               generator: torch.Generator | None = None):
        """Probe each cell at `probes` random positions and refresh occupancy:
        values <- max(values * decay, max sigma probed), binary = values >= tau."""
        field_fn = _resolve_field_fn(field_fn)
        probes = probes or 1
        g = self.resolution
        cell = 2.0 / g
        corners = torch.stack(torch.meshgrid(
            torch.arange(g), torch.arange(g), torch.arange(g), indexing="ij"
        ), dim=-1).reshape(-1, 3).float() * cell - 1.0
        probe_max = torch.full((g ** 3,), -math.inf)
        with torch.no_grad():
            for _ in range(probes):
                jitter = torch.rand(corners.shape, generator=generator)
                pts = corners + jitter * cell
                sigma = torch.empty(g ** 3)
                for lo in range(0, g ** 3, EVAL_CHUNK):
                    hi = min(lo + EVAL_CHUNK, g ** 3)
                    sigma[lo:hi] = field_fn(pts[lo:hi])[:, 3]
                probe_max = torch.maximum(probe_max, sigma)
        self.values = torch.maximum(self.values * self.ema_decay,
                                    probe_max.reshape(g, g, g))
        self.binary = self.values >= self.tau_sigma
        return self


def update_occupancy(grid: OccupancyGrid, field_fn, cfg: RenderConfig,
                     generator: torch.Generator | None = None) -> OccupancyGrid:
    return grid.update(field_fn, probes=cfg.occupancy_probes, generator=generator)


def ray_box_intersect(origins: torch.Tensor, directions: torch.Tensor,
                      near: float = 0.0, far: float = math.inf):
    """Entry/exit parameters of rays against the [-1, 1]^3 box, clipped to
    [near, far].  Returns (t0, t1); a miss has t1 <= t0."""
    safe_dir = torch.where(directions.abs() < 1e-12,
                           torch.full_like(directions, 1e-12), directions)
    ta = (-1.0 - origins) / safe_dir
    tb = (1.0 - origins) / safe_dir
    t0 = torch.minimum(ta, tb).max(dim=-1).values
    t1 = torch.maximum(ta, tb).min(dim=-1).values
    t0 = t0.clamp(min=near)
    if math.isfinite(far):
        t1 = t1.clamp(max=far)
    return t0, t1


@dataclass
class RaySamples:
    positions: torch.Tensor  # (S, 3)
    deltas: torch.Tensor     # (S,)
    ts: torch.Tensor         # (S,)

    def __len__(self):
        return self.positions.shape[0]


def _march_dense(origins: torch.Tensor, directions: torch.Tensor,
                 grid: OccupancyGrid, cfg: RenderConfig,
                 generator: torch.Generator | None = None):
    """Stratified samples along all rays as dense (R, S) tensors plus a
    validity mask; invalid slots have zero delta and are compositing no-ops."""
    step = cfg.step_size
    t0, t1 = ray_box_intersect(origins, directions, cfg.near, cfg.far)
    span = (t1 - t0).clamp(min=0.0)
    counts = torch.ceil(span / step).long()
    s_max = int(counts.max()) if counts.numel() else 0
    r = origins.shape[0]
    if s_max == 0:
        empty = torch.zeros(r, 0)
        return empty.reshape(r, 0, 3), empty, empty, empty.bool()

    i = torch.arange(s_max).expand(r, s_max)
    seg_start = t0[:, None] + i * step
    seg_end = torch.minimum(seg_start + step, t1[:, None])
    deltas = (seg_end - seg_start).clamp(min=0.0)
    in_segment = i < counts[:, None]
    if cfg.stratified:
        u = torch.rand((r, s_max), generator=generator)
    else:
        u = torch.full((r, s_max), 0.5)
    ts = seg_start + u * deltas
    positions = origins[:, None, :] + ts[..., None] * directions[:, None, :]
    positions = positions.clamp(-1.0, 1.0)

    occupied = grid.occupied_at(positions.reshape(-1, 3)).reshape(r, s_max)
    valid = in_segment & occupied & (deltas > 0)
    deltas = torch.where(valid, deltas, torch.zeros_like(deltas))
    return positions, deltas, ts, valid


def march_ray(ray: Ray, grid: OccupancyGrid, cfg: RenderConfig,
              generator: torch.Generator | None = None) -> RaySamples:
    """Sample positions and interval lengths along one ray, restricted to
    occupied cells.  An empty grid yields an empty sample list."""
    origins = torch.from_numpy(np.asarray(ray.origin)).float()[None]
    directions = torch.from_numpy(np.asarray(ray.direction)).float()[None]
    near = max(cfg.near, ray.near)
    far = min(cfg.far, ray.far)
    positions, deltas, ts, valid = _march_dense(
        origins, directions, grid, replace(cfg, near=near, far=far), generator)
    keep = valid[0]
    return RaySamples(positions[0][keep], deltas[0][keep], ts[0][keep])


def composite_batch(rgb: torch.Tensor, sigma: torch.Tensor, deltas: torch.Tensor,
                    ts: torch.Tensor, background) -> tuple:
    """Emission-absorption compositing over (R, S) sample grids.

    alpha_i = 1 - exp(-sigma_i * delta_i); T_i = prod_{j<i} (1 - alpha_j);
    pixel = sum T_i alpha_i c_i + T_final * background.  Zero-delta entries
    are exact no-ops, so padded/culled slots need no special casing.
    """
    bg = torch.as_tensor(background, dtype=rgb.dtype)
    alpha = 1.0 - torch.exp(-sigma * deltas)
    lead = torch.ones(alpha.shape[0], 1, dtype=alpha.dtype)
    trans = torch.cumprod(torch.cat([lead, 1.0 - alpha], dim=1), dim=1)
    t_final = trans[:, -1]
    weights = trans[:, :-1] * alpha
    pixel = (weights[..., None] * rgb).sum(dim=1) + t_final[:, None] * bg
    opacity = 1.0 - t_final
    depth = (weights * ts).sum(dim=1) / opacity.clamp(min=1e-10)
    return pixel, opacity, depth


def composite(rgb: torch.Tensor, sigma: torch.Tensor, deltas: torch.Tensor,
              ts: torch.Tensor | None = None, background=(0.0, 0.0, 0.0)) -> tuple:
    """Single-ray compositing; returns (pixel rgb (3,), opacity, depth)."""
    if ts is None:
        ts = torch.cumsum(deltas, dim=0) - deltas / 2
    pixel, opacity, depth = composite_batch(
        rgb[None], sigma[None], deltas[None], ts[None], background)
    return pixel[0], opacity[0], depth[0]


def render_rays(origins: torch.Tensor, directions: torch.Tensor, field_fn,
                grid: OccupancyGrid, cfg: RenderConfig,
                generator: torch.Generator | None = None) -> dict:
    """March + field eval + composite for a batch of rays (torch end to end).

    The field is evaluated only at samples that survive occupancy culling.
    Returns {'rgb': (R, 3), 'opacity': (R,), 'depth': (R,)}.
    """
    r = origins.shape[0]
    positions, deltas, ts, valid = _march_dense(origins, directions, grid, cfg, generator)
    s_max = positions.shape[1]
    if s_max == 0 or not bool(valid.any()):
        bg = torch.as_tensor(cfg.background, dtype=origins.dtype)
        return {"rgb": bg.expand(r, 3).clone(), "opacity": torch.zeros(r),
                "depth": torch.zeros(r)}

    flat_idx = valid.reshape(-1).nonzero(as_tuple=True)[0]
    out = field_fn(positions.reshape(-1, 3)[flat_idx])
    rgbsigma = torch.zeros(r * s_max, 4, dtype=out.dtype)
    rgbsigma = rgbsigma.index_copy(0, flat_idx, out)
    rgbsigma = rgbsigma.reshape(r, s_max, 4)
    pixel, opacity, depth = composite_batch(
        rgbsigma[..., :3], rgbsigma[..., 3], deltas.to(out.dtype),
        ts.to(out.dtype), cfg.background)
    return {"rgb": pixel, "opacity": opacity, "depth": depth}


@dataclass
class RenderedView:
    rgb: np.ndarray      # (H, W, 3) in [0, 1]
    opacity: np.ndarray  # (H, W)
    depth: np.ndarray    # (H, W)


def _resolve_field_fn(field_like):
    if isinstance(field_like, FieldWeights):
        from .field import as_field_fn
        return as_field_fn(field_like)
    if callable(field_like):
        return field_like
    raise TypeError(f"expected FieldWeights or callable, got {type(field_like)!r}")


def render_view(cam: Camera, field_like, grid: OccupancyGrid, cfg: RenderConfig,
                seed: int = 0) -> RenderedView:
    """Render a full camera view; deterministic given (field, grid, cfg, seed)."""
    field_fn = _resolve_field_fn(field_like)
    bundle = rays_for_camera(cam)
    generator = torch.Generator().manual_seed(seed)
    n = len(bundle)
    rgb = np.empty((n, 3), dtype=np.float64)
    opacity = np.empty(n, dtype=np.float64)
    depth = np.empty(n, dtype=np.float64)
    with torch.no_grad():
        for lo in range(0, n, RAY_CHUNK):
            hi = min(lo + RAY_CHUNK, n)
            origins = torch.from_numpy(bundle.origins[lo:hi]).float()
            directions = torch.from_numpy(bundle.directions[lo:hi]).float()
            out = render_rays(origins, directions, field_fn, grid, cfg, generator)
            rgb[lo:hi] = out["rgb"].numpy()
            opacity[lo:hi] = out["opacity"].numpy()
            depth[lo:hi] = out["depth"].numpy()
    h, w = cam.height, cam.width
    return RenderedView(rgb.reshape(h, w, 3), opacity.reshape(h, w), depth.reshape(h, w))


def render_image(cam: Camera, field_like, grid: OccupancyGrid, cfg: RenderConfig,
                 seed: int = 0) -> np.ndarray:
    """H x W x 3 image of the field from the given camera."""
    return render_view(cam, field_like, grid, cfg, seed).rgb


def _ray_sphere_clip(origins, directions, radius):
    """Parameters where rays enter/leave the bounding sphere; miss -> t1 <= t0."""
    b = np.einsum("ij,ij->i", origins, directions)
    c = np.einsum("ij,ij->i", origins, origins) - radius ** 2
    disc = b ** 2 - c
    ok = disc > 0
    sqrt_disc = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.where(ok, -b - sqrt_disc, 0.0)
    t1 = np.where(ok, -b + sqrt_disc, 0.0)
    return t0, t1


def reference_render(cam: Camera, density_fn, color_fn, cfg: RenderConfig,
                     bounds_radius: float | None = None) -> np.ndarray:
    """Ground-truth render of analytic density/color functions.

    Dense midpoint quadrature at step_size / 16, no occupancy culling.  An
    optional bounding-sphere radius skips regions the caller guarantees have
    exactly zero density; this changes nothing mathematically.
    """
    step = cfg.step_size / 16.0
    bundle = rays_for_camera(cam)
    origins = bundle.origins.astype(np.float32)
    directions = bundle.directions.astype(np.float32)
    t0t, t1t = ray_box_intersect(torch.from_numpy(origins),
                                 torch.from_numpy(directions), cfg.near, cfg.far)
    t0 = t0t.numpy()
    t1 = t1t.numpy()
    if bounds_radius is not None:
        s0, s1 = _ray_sphere_clip(origins.astype(np.float64),
                                  directions.astype(np.float64), bounds_radius)
        t0 = np.maximum(t0, s0.astype(np.float32))
        t1 = np.minimum(t1, s1.astype(np.float32))

    n = len(bundle)
    bg = np.asarray(cfg.background, dtype=np.float32)
    image = np.tile(bg, (n, 1))
    span = np.clip(t1 - t0, 0.0, None)
    counts = np.ceil(span / step).astype(np.int64)

    for lo in range(0, n, 512):
        hi = min(lo + 512, n)
        s_max = int(counts[lo:hi].max()) if hi > lo else 0
        if s_max == 0:
            continue
        i = np.arange(s_max, dtype=np.float32)[None, :]
        seg_start = t0[lo:hi, None] + i * np.float32(step)
        seg_end = np.minimum(seg_start + np.float32(step), t1[lo:hi, None])
        deltas = np.clip(seg_end - seg_start, 0.0, None)
        ts = seg_start + deltas / 2
        pts = origins[lo:hi, None, :] + ts[..., None] * directions[lo:hi, None, :]
        flat = pts.reshape(-1, 3)
        sigma = np.clip(density_fn(flat), 0.0, None).astype(np.float32)
        sigma = sigma.reshape(hi - lo, s_max)
        sigma = np.where(deltas > 0, sigma, np.float32(0.0))
        rgb = np.clip(color_fn(flat), 0.0, 1.0).astype(np.float32)
        rgb = rgb.reshape(hi - lo, s_max, 3)
        alpha = 1.0 - np.exp(-sigma * deltas)
        trans = np.cumprod(np.concatenate(
            [np.ones((hi - lo, 1), dtype=np.float32), 1.0 - alpha], axis=1), axis=1)
        weights = trans[:, :-1] * alpha
        image[lo:hi] = (weights[..., None] * rgb).sum(axis=1) + trans[:, -1:] * bg
    return image.reshape(cam.height, cam.width, 3).astype(np.float64)
