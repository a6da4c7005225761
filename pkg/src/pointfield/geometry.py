"""Core spatial types and deterministic operations on them.

Colored point clouds, split planes, pinhole cameras and rays, plus the
operations the rest of the library builds on: normalization into the
[-1, 1]^3 working box, plane splitting into existing/missing parts,
per-pixel ray generation and seeded subsampling.  Everything here is
plain numpy and free of learned state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

WORLD_BOX_HALF_EXTENT = 1.0


class DegenerateCloudError(ValueError):
    """All points coincide; the cloud has no extent to normalize."""


class EmptyPartError(ValueError):
    """A plane split left one side without any points."""


class PlyParseError(ValueError):
    """A PLY file is malformed or truncated."""


@dataclass(frozen=True)
class ColoredPointCloud:
    """N points with positions and RGB colors in [0, 1]."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray     # (N, 3) float64 in [0, 1]

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        colors = np.asarray(self.colors, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {positions.shape}")
        if colors.shape != positions.shape:
            raise ValueError(
                f"colors shape {colors.shape} does not match positions {positions.shape}"
            )
        if positions.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if not np.isfinite(positions).all():
            raise ValueError("positions contain non-finite values")
        if colors.min() < -1e-9 or colors.max() > 1 + 1e-9:
            raise ValueError("colors must lie in [0, 1]")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "colors", np.clip(colors, 0.0, 1.0))

    def __len__(self):
        return self.positions.shape[0]

    def concatenate(self, other: "ColoredPointCloud") -> "ColoredPointCloud":
        return ColoredPointCloud(
            np.concatenate([self.positions, other.positions], axis=0),
            np.concatenate([self.colors, other.colors], axis=0),
        )


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale followed by translation: apply(p) = p * scale + translation.

    `normalize` returns the transform mapping normalized coordinates back to
    the original frame.
    """

    scale: float
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return np.asarray(positions, dtype=np.float64) * self.scale + self.translation

    def inverse(self) -> "SimilarityTransform":
        return SimilarityTransform(1.0 / self.scale, -self.translation / self.scale)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.zeros(3))


@dataclass(frozen=True)
class SplitPlane:
    """Oriented plane {p : normal . p = offset}; the non-negative side is 'existing'."""

    normal: np.ndarray  # unit (3,)
    offset: float = 0.0

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        if normal.shape != (3,):
            raise ValueError("normal must be a 3-vector")
        norm = float(np.linalg.norm(normal))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"normal must be unit length, |n| = {norm}")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_direction(cls, direction, offset: float = 0.0) -> "SplitPlane":
        direction = np.asarray(direction, dtype=np.float64)
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ValueError("direction must be nonzero")
        return cls(direction / norm, offset)

    def signed_distance(self, positions: np.ndarray) -> np.ndarray:
        return np.asarray(positions, dtype=np.float64) @ self.normal - self.offset

    def flipped(self) -> "SplitPlane":
        return SplitPlane(-self.normal, -self.offset)


def random_split_plane(rng: np.random.Generator, max_offset: float = 0.3) -> SplitPlane:
    """Random plane through the neighborhood of the origin; offset keeps both
    sides of a centered object plausibly non-empty."""
    direction = rng.normal(size=3)
    offset = float(rng.uniform(-max_offset, max_offset))
    return SplitPlane.from_direction(direction, offset)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking along its local -Z axis, +X right, +Y up."""

    width: int
    height: int
    focal: float
    cx: float
    cy: float
    c2w: np.ndarray  # (4, 4) camera-to-world, orthonormal rotation block

    def __post_init__(self):
        c2w = np.asarray(self.c2w, dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError("c2w must be a 4x4 matrix")
        rot = c2w[:3, :3]
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= 1e-6:
            raise ValueError(f"rotation block not orthonormal, max error {err}")
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        object.__setattr__(self, "c2w", c2w)

    @property
    def center(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3]

    @classmethod
    def look_at(
        cls,
        position,
        target=(0.0, 0.0, 0.0),
        up=(0.0, 0.0, 1.0),
        width: int = 200,
        height: int = 200,
        focal: float | None = None,
    ) -> "Camera":
        """Camera at `position` with -Z pointing toward `target`."""
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        z_axis = position - target
        norm = np.linalg.norm(z_axis)
        if norm < 1e-12:
            raise ValueError("camera position coincides with target")
        z_axis = z_axis / norm
        x_axis = np.cross(up, z_axis)
        if np.linalg.norm(x_axis) < 1e-8:
            # Up is parallel to the view axis; pick any perpendicular.
            alt = np.array([1.0, 0.0, 0.0])
            if abs(z_axis @ alt) > 0.9:
                alt = np.array([0.0, 1.0, 0.0])
            x_axis = np.cross(alt, z_axis)
        x_axis = x_axis / np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        c2w = np.eye(4)
        c2w[:3, 0] = x_axis
        c2w[:3, 1] = y_axis
        c2w[:3, 2] = z_axis
        c2w[:3, 3] = position
        if focal is None:
            focal = float(width)
        return cls(width, height, float(focal), width / 2.0, height / 2.0, c2w)

    def ray_direction(self, u, v) -> np.ndarray:
        """World-space unit direction through continuous pixel coords (u, v)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        dirs = np.stack(
            [
                (u - self.cx) / self.focal,
                -(v - self.cy) / self.focal,
                -np.ones_like(u),
            ],
            axis=-1,
        )
        world = dirs @ self.rotation.T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def project(self, points: np.ndarray):
        """Project world points to pixel coords.

        Returns (uv, depth): uv is (M, 2) continuous pixel coordinates and
        depth the euclidean distance from the camera center (comparable to
        rendered expected-termination depth).  Points behind the camera get
        negative depth.
        """
        points = np.asarray(points, dtype=np.float64)
        rel = points - self.center
        cam = rel @ self.rotation  # components in camera frame
        z = cam[..., 2]
        dist = np.linalg.norm(rel, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.focal * cam[..., 0] / (-z)
            v = self.cy - self.focal * cam[..., 1] / (-z)
        depth = np.where(z < 0, dist, -dist)
        return np.stack([u, v], axis=-1), depth

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
            "cx": self.cx,
            "cy": self.cy,
            "c2w": [float(x) for x in self.c2w.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        c2w = np.asarray(d["c2w"], dtype=np.float64).reshape(4, 4)
        return cls(int(d["width"]), int(d["height"]), float(d["focal"]),
                   float(d["cx"]), float(d["cy"]), c2w)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray     # (3,)
    direction: np.ndarray  # unit (3,)
    near: float = 0.0
    far: float = math.inf

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        direction = np.asarray(self.direction, dtype=np.float64)
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction must be unit length, got |d| = {norm}")
        if not (0 <= self.near < self.far):
            raise ValueError("require 0 <= near < far")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t):
        return self.origin + np.asarray(t)[..., None] * self.direction


@dataclass(frozen=True)
class RayBundle:
    """Vectorized set of rays sharing near/far bounds."""

    origins: np.ndarray     # (M, 3)
    directions: np.ndarray  # (M, 3), rows unit
    near: float = 0.0
    far: float = math.inf

    def __post_init__(self):
        origins = np.asarray(self.origins, dtype=np.float64)
        directions = np.asarray(self.directions, dtype=np.float64)
        if origins.shape != directions.shape or origins.ndim != 2 or origins.shape[1] != 3:
            raise ValueError("origins/directions must both be (M, 3)")
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "directions", directions)

    def __len__(self):
        return self.origins.shape[0]

    def __getitem__(self, i) -> Ray:
        return Ray(self.origins[i], self.directions[i], self.near, self.far)

    def select(self, indices) -> "RayBundle":
        return RayBundle(self.origins[indices], self.directions[indices], self.near, self.far)


def rays_for_camera(cam: Camera, near: float = 0.0, far: float = math.inf) -> RayBundle:
    """One ray per pixel through the pixel center, row-major (v, u) order."""
    u = np.arange(cam.width, dtype=np.float64) + 0.5
    v = np.arange(cam.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)  # (H, W)
    dirs = cam.ray_direction(uu.reshape(-1), vv.reshape(-1))
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return RayBundle(origins, dirs, near, far)


def normalize(cloud: ColoredPointCloud):
    """Center the cloud at its bounding-box center and scale to max |coord| = 1.

    Returns the normalized cloud and the SimilarityTransform mapping
    normalized coordinates back to the original frame.
    """
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    center = (lo + hi) / 2.0
    half_extent = float((hi - lo).max() / 2.0)
    if half_extent <= 0.0:
        raise DegenerateCloudError("all points identical; cannot normalize zero extent")
    scale = WORLD_BOX_HALF_EXTENT / half_extent
    normalized = ColoredPointCloud((cloud.positions - center) * scale, cloud.colors)
    back = SimilarityTransform(half_extent, center)
    return normalized, back


def split_by_plane(cloud: ColoredPointCloud, plane: SplitPlane):
    """Partition into (existing, missing) by plane side; points exactly on the
    plane go to existing.  Colors travel with their points."""
    if len(cloud) < 2:
        raise ValueError("need at least two points to split")
    side = plane.signed_distance(cloud.positions) >= 0.0
    n_existing = int(side.sum())
    if n_existing == 0 or n_existing == len(cloud):
        raise EmptyPartError(
            f"plane leaves one side empty ({n_existing} of {len(cloud)} points on existing side)"
        )
    existing = ColoredPointCloud(cloud.positions[side], cloud.colors[side])
    missing = ColoredPointCloud(cloud.positions[~side], cloud.colors[~side])
    return existing, missing


def subsample(cloud: ColoredPointCloud, k: int, seed: int) -> ColoredPointCloud:
    """Draw k points, without replacement when k <= N, else with replacement."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(cloud)
    replace = k > n
    idx = rng.choice(n, size=k, replace=replace)
    return ColoredPointCloud(cloud.positions[idx], cloud.colors[idx])


# ---------------------------------------------------------------------------
# Persistence: binary little-endian PLY for colored clouds, JSON for cameras.
# ---------------------------------------------------------------------------

_PLY_PROPS = b"""property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
"""


def save_cloud_ply(path, cloud: ColoredPointCloud):
    """Binary little-endian PLY: x,y,z float32 and red,green,blue uint8."""
    n = len(cloud)
    header = (
        b"ply\nformat binary_little_endian 1.0\n"
        + f"element vertex {n}\n".encode()
        + _PLY_PROPS
        + b"end_header\n"
    )
    rec = np.empty(
        n,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    pos = cloud.positions.astype(np.float32)
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def load_cloud_ply(path) -> ColoredPointCloud:
    with open(path, "rb") as f:
        data = f.read()
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if not data.startswith(b"ply") or end < 0:
        raise PlyParseError(f"{path}: not a PLY file (no header terminator)")
    header = data[:end].decode("ascii", errors="replace")
    if "binary_little_endian" not in header:
        raise PlyParseError(f"{path}: only binary_little_endian PLY is supported")
    n = None
    props = []
    for line in header.splitlines():
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            props.append((parts[1], parts[2]))
    if n is None:
        raise PlyParseError(f"{path}: missing 'element vertex' declaration")
    expected = [("float", p) for p in ("x", "y", "z")] + [
        ("uchar", c) for c in ("red", "green", "blue")
    ]
    if props != expected:
        raise PlyParseError(f"{path}: unexpected vertex properties {props}")
    body_offset = end + len(end_marker)
    stride = 3 * 4 + 3
    need = n * stride
    have = len(data) - body_offset
    if have < need:
        raise PlyParseError(
            f"{path}: truncated at byte {len(data)}; need {need} body bytes "
            f"from offset {body_offset}, have {have}"
        )
    rec = np.frombuffer(
        data, count=n, offset=body_offset,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    return ColoredPointCloud(positions, colors)


def save_cameras_json(path, cameras):
    with open(path, "w") as f:
        json.dump([cam.to_dict() for cam in cameras], f, indent=1)


def load_cameras_json(path):
    with open(path) as f:
        records = json.load(f)
    return [Camera.from_dict(d) for d in records]
