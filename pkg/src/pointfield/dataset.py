"""Procedural synthetic scenes.

Analytic colored shapes (sphere, box, union of two) with exact signed
distance functions stand in for mesh datasets: surface points are sampled
exactly, and ground-truth images come from the reference renderer run
against the shape's analytic density, so every stored image has a
recomputable oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (Camera, ColoredPointCloud, load_cameras_json,
                       load_cloud_ply, save_cameras_json, save_cloud_ply)
from .renderer import RenderConfig, reference_render

SHAPE_BOX_LIMIT = 0.8          # shapes must fit inside [-0.8, 0.8]^3
DEFAULT_DENSITY = 40.0         # solid-interior volume density
DEFAULT_FALLOFF = 0.015        # boundary softness of the density profile
DENSITY_CUTOFF_FALLOFFS = 12.0 # density is exactly zero beyond this many falloffs
DATASET_STEP = 0.048           # reference quadrature base step for scene images


class SceneFormatError(ValueError):
    """A scene directory is missing files or internally inconsistent."""


class AnalyticShape:
    """Base for exact-SDF colored primitives.

    Subclasses provide sdf(), color_at(), surface area, an axis-aligned
    bound, and exact surface sampling.  The volume density used for
    rendering is sigma_max * logistic(-sdf / falloff), truncated to exactly
    zero outside a known bound so bounding-sphere ray clipping is lossless.
    """

    kind = "abstract"

    def sdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def color_at(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def surface_area(self) -> float:
        raise NotImplementedError

    def aabb(self):
        """Axis-aligned bounds as (lo, hi) 3-vectors."""
        raise NotImplementedError

    def bounding_radius(self) -> float:
        lo, hi = self.aabb()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def sample_surface(self, n: int, rng: np.random.Generator):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_fits(self):
        lo, hi = self.aabb()
        if max(np.abs(lo).max(), np.abs(hi).max()) > SHAPE_BOX_LIMIT + 1e-9:
            raise ValueError("shape exceeds the [-0.8, 0.8]^3 budget")

    def density_fn(self, sigma_max: float = DEFAULT_DENSITY,
                   falloff: float = DEFAULT_FALLOFF):
        cutoff = DENSITY_CUTOFF_FALLOFFS * falloff

        def density(p: np.ndarray) -> np.ndarray:
            d = self.sdf(np.asarray(p, dtype=np.float64))
            x = np.clip(d / falloff, -60.0, 60.0)
            sigma = sigma_max / (1.0 + np.exp(x))
            return np.where(d > cutoff, 0.0, sigma)

        return density

    def color_fn(self):
        def color(p: np.ndarray) -> np.ndarray:
            return self.color_at(np.asarray(p, dtype=np.float64))
        return color

    def density_bound(self, falloff: float = DEFAULT_FALLOFF) -> float:
        """Radius outside which the truncated density is exactly zero."""
        return self.bounding_radius() + DENSITY_CUTOFF_FALLOFFS * falloff

    def sample_cloud(self, n: int, rng: np.random.Generator) -> ColoredPointCloud:
        positions, colors = self.sample_surface(n, rng)
        return ColoredPointCloud(positions, colors)


def _two_tone(points, center, axis, base, second):
    base = np.asarray(base, dtype=np.float64)
    if second is None:
        return np.tile(base, (len(points), 1))
    second = np.asarray(second, dtype=np.float64)
    below = (points[:, axis] - center[axis]) < 0
    return np.where(below[:, None], second, base)


@dataclass(frozen=True)
class Sphere(AnalyticShape):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    color: tuple = (0.8, 0.2, 0.2)
    second_color: tuple | None = None
    tone_axis: int = 2

    kind = "sphere"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self._check_fits()

    def _c(self):
        return np.asarray(self.center, dtype=np.float64)

    def sdf(self, p):
        return np.linalg.norm(p - self._c(), axis=-1) - self.radius

    def color_at(self, p):
        return _two_tone(p, self._c(), self.tone_axis, self.color, self.second_color)

    def surface_area(self):
        return 4.0 * np.pi * self.radius ** 2

    def aabb(self):
        c = self._c()
        return c - self.radius, c + self.radius

    def sample_surface(self, n, rng):
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pos = self._c() + self.radius * dirs
        return pos, self.color_at(pos)

    def to_dict(self):
        return {"kind": "sphere", "center": list(self.center), "radius": self.radius,
                "color": list(self.color),
                "second_color": None if self.second_color is None else list(self.second_color),
                "tone_axis": self.tone_axis}


@dataclass(frozen=True)
class Box(AnalyticShape):
    center: tuple = (0.0, 0.0, 0.0)
    half_extents: tuple = (0.4, 0.4, 0.4)
    color: tuple = (0.2, 0.4, 0.8)
    second_color: tuple | None = None
    tone_axis: int = 2

    kind = "box"

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("half_extents must be positive")
        self._check_fits()

    def _c(self):
        return np.asarray(self.center, dtype=np.float64)

    def _h(self):
        return np.asarray(self.half_extents, dtype=np.float64)

    def sdf(self, p):
        q = np.abs(p - self._c()) - self._h()
        outside = np.linalg.norm(np.clip(q, 0.0, None), axis=-1)
        inside = np.clip(q.max(axis=-1), None, 0.0)
        return outside + inside

    def color_at(self, p):
        return _two_tone(p, self._c(), self.tone_axis, self.color, self.second_color)

    def surface_area(self):
        a, b, c = self._h() * 2.0
        return 2.0 * (a * b + b * c + c * a)

    def aabb(self):
        return self._c() - self._h(), self._c() + self._h()

    def sample_surface(self, n, rng):
        h = self._h()
        full = 2.0 * h
        face_areas = np.array([full[1] * full[2], full[1] * full[2],
                               full[0] * full[2], full[0] * full[2],
                               full[0] * full[1], full[0] * full[1]])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        pos = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = faces // 2
        sign = np.where(faces % 2 == 0, 1.0, -1.0)
        pos[np.arange(n), axis] = sign * h[axis]
        pos = pos + self._c()
        return pos, self.color_at(pos)

    def to_dict(self):
        return {"kind": "box", "center": list(self.center),
                "half_extents": list(self.half_extents), "color": list(self.color),
                "second_color": None if self.second_color is None else list(self.second_color),
                "tone_axis": self.tone_axis}


@dataclass(frozen=True)
class UnionShape(AnalyticShape):
    """Union of two primitives; surface points interior to the other part
    are rejected so samples lie exactly on the union's boundary."""

    first: AnalyticShape = field(default_factory=Sphere)
    second: AnalyticShape = field(default_factory=Box)

    kind = "union"

    def __post_init__(self):
        self._check_fits()

    def sdf(self, p):
        return np.minimum(self.first.sdf(p), self.second.sdf(p))

    def color_at(self, p):
        a = self.first.sdf(p)
        b = self.second.sdf(p)
        return np.where((a <= b)[:, None], self.first.color_at(p), self.second.color_at(p))

    def surface_area(self):
        # Upper bound; only used for sampling proportions.
        return self.first.surface_area() + self.second.surface_area()

    def aabb(self):
        lo1, hi1 = self.first.aabb()
        lo2, hi2 = self.second.aabb()
        return np.minimum(lo1, lo2), np.maximum(hi1, hi2)

    def sample_surface(self, n, rng):
        parts = (self.first, self.second)
        others = (self.second, self.first)
        areas = np.array([p.surface_area() for p in parts])
        weights = areas / areas.sum()
        chunks_pos, chunks_col = [], []
        need = n
        for _ in range(64):
            if need <= 0:
                break
            draw = max(need * 2, 128)
            counts = rng.multinomial(draw, weights)
            for part, other, count in zip(parts, others, counts):
                if count == 0:
                    continue
                pos, col = part.sample_surface(int(count), rng)
                keep = other.sdf(pos) >= -1e-12
                chunks_pos.append(pos[keep])
                chunks_col.append(col[keep])
            need = n - sum(len(c) for c in chunks_pos)
        pos = np.concatenate(chunks_pos)[:n]
        col = np.concatenate(chunks_col)[:n]
        if len(pos) < n:
            raise RuntimeError("union surface sampling failed to converge")
        return pos, col

    def to_dict(self):
        return {"kind": "union", "first": self.first.to_dict(),
                "second": self.second.to_dict()}


def shape_from_dict(d: dict) -> AnalyticShape:
    kind = d.get("kind")
    if kind == "sphere":
        return Sphere(center=tuple(d["center"]), radius=d["radius"],
                      color=tuple(d["color"]),
                      second_color=None if d.get("second_color") is None else tuple(d["second_color"]),
                      tone_axis=d.get("tone_axis", 2))
    if kind == "box":
        return Box(center=tuple(d["center"]), half_extents=tuple(d["half_extents"]),
                   color=tuple(d["color"]),
                   second_color=None if d.get("second_color") is None else tuple(d["second_color"]),
                   tone_axis=d.get("tone_axis", 2))
    if kind == "union":
        return UnionShape(shape_from_dict(d["first"]), shape_from_dict(d["second"]))
    raise SceneFormatError(f"unknown shape kind {kind!r}")


@dataclass
class Scene:
    """A colored cloud, posed cameras, their reference images, and the
    analytic shape they came from (when synthetic)."""

    cloud: ColoredPointCloud
    cameras: list
    images: list          # (H, W, 3) float arrays in [0, 1]
    shape: AnalyticShape | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise SceneFormatError(
                f"{len(self.cameras)} cameras but {len(self.images)} images")
        sizes = {img.shape for img in self.images}
        if len(sizes) > 1:
            raise SceneFormatError(f"images disagree on resolution: {sizes}")

    @property
    def n_views(self) -> int:
        return len(self.cameras)


def hemisphere_cameras(n_views: int, radius: float = 1.5, width: int = 200,
                       height: int = 200, focal: float | None = None,
                       seed: int = 0) -> list:
    """n cameras on the upper hemisphere at the given radius, all looking at
    the origin.  A Fibonacci spiral spreads them evenly; the seed only
    rotates the spiral."""
    if radius <= 1.0:
        raise ValueError("cameras must sit outside the unit object box (radius > 1)")
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phase = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi)
    cams = []
    for k in range(n_views):
        z = (k + 0.5) / n_views
        rho = np.sqrt(1.0 - z * z)
        theta = golden * k + phase
        pos = radius * np.array([rho * np.cos(theta), rho * np.sin(theta), z])
        cams.append(Camera.look_at(pos, width=width, height=height, focal=focal))
    return cams


def make_scene(shape: AnalyticShape, n_points: int = 16384, n_views: int = 100,
               radius: float = 1.5, resolution: int = 200, seed: int = 0,
               render_cfg: RenderConfig | None = None) -> Scene:
    """Sample a surface cloud and render ground-truth views of the shape."""
    if radius <= 1.0:
        raise ValueError("radius must exceed 1 so cameras sit outside the object box")
    rng = np.random.default_rng(seed)
    cloud = shape.sample_cloud(n_points, rng)
    cams = hemisphere_cameras(n_views, radius=radius, width=resolution,
                              height=resolution, seed=seed)
    cfg = render_cfg or RenderConfig(step_size=DATASET_STEP)
    density = shape.density_fn()
    color = shape.color_fn()
    bound = shape.density_bound()
    images = [reference_render(cam, density, color, cfg, bounds_radius=bound)
              for cam in cams]
    meta = {"seed": seed, "n_points": n_points, "n_views": n_views,
            "radius": radius, "resolution": resolution}
    return Scene(cloud, cams, images, shape=shape, meta=meta)


def make_desk_scene(shape: AnalyticShape, seed: int = 0, n_views: int = 20,
                    resolution: int = 64) -> Scene:
    """Small preset sized so a full training run stays desk-scale."""
    return make_scene(shape, n_points=16384, n_views=n_views, radius=1.5,
                      resolution=resolution, seed=seed)


def save_png(path, image: np.ndarray):
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_scene(scene: Scene, path):
    """Directory layout: cloud.ply, cameras.json, images/view_###.png, meta.json."""
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    save_cloud_ply(path / "cloud.ply", scene.cloud)
    save_cameras_json(path / "cameras.json", scene.cameras)
    for i, img in enumerate(scene.images):
        save_png(path / "images" / f"view_{i:03d}.png", img)
    meta = dict(scene.meta)
    meta["shape"] = scene.shape.to_dict() if scene.shape is not None else None
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=1)


def load_scene(path) -> Scene:
    path = Path(path)
    for required in ("cloud.ply", "cameras.json", "meta.json"):
        if not (path / required).exists():
            raise SceneFormatError(f"{path}: missing {required}")
    cloud = load_cloud_ply(path / "cloud.ply")
    try:
        cameras = load_cameras_json(path / "cameras.json")
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise SceneFormatError(f"{path}: malformed cameras.json ({exc})") from exc
    image_paths = sorted((path / "images").glob("view_*.png"))
    if len(image_paths) != len(cameras):
        raise SceneFormatError(
            f"{path}: {len(cameras)} cameras but {len(image_paths)} images")
    images = [load_png(p) for p in image_paths]
    with open(path / "meta.json") as f:
        meta = json.load(f)
    shape_dict = meta.pop("shape", None)
    shape = shape_from_dict(shape_dict) if shape_dict else None
    return Scene(cloud, cameras, images, shape=shape, meta=meta)
