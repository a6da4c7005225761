"""Colored triangle meshes from trained fields.

Density is sampled on a regular grid, marching cubes extracts the iso
surface, and vertices take their color from the most frontal rendered view
that actually sees them (depth-buffer checked), falling back to a direct
field query for occluded vertices.  Surface resampling turns the mesh back
into a cloud for up-sampling and hole-filling outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from skimage import measure

from .geometry import Camera, ColoredPointCloud
from .renderer import OccupancyGrid, RenderConfig, _resolve_field_fn, render_view

DEFAULT_ISO = 0.01        # matches the occupancy threshold tau_sigma
DEGENERATE_AREA = 1e-12


class EmptyMeshError(ValueError):
    """The density grid contains no crossing of the iso level."""


@dataclass
class TriangleMesh:
    vertices: np.ndarray            # (V, 3)
    faces: np.ndarray               # (F, 3) int
    colors: np.ndarray | None = None    # (V, 3) in [0, 1]
    normals: np.ndarray | None = None   # (V, 3)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def boundary_edge_count(mesh: TriangleMesh) -> int:
    """Edges used by exactly one face; zero for a watertight surface."""
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int((counts == 1).sum())


def sample_density_grid(field_like, resolution: int) -> np.ndarray:
    """Density on an axis-aligned grid of points linspace(-1, 1, R)^3."""
    field_fn = _resolve_field_fn(field_like)
    axis = np.linspace(-1.0, 1.0, resolution)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    sigma = np.empty(len(pts))
    with torch.no_grad():
        for lo in range(0, len(pts), 65536):
            hi = min(lo + 65536, len(pts))
            chunk = torch.from_numpy(pts[lo:hi]).float()
            sigma[lo:hi] = field_fn(chunk)[:, 3].numpy()
    return sigma.reshape(resolution, resolution, resolution)


def extract_mesh(field_like, resolution: int = 64,
                 iso_level: float | None = DEFAULT_ISO) -> TriangleMesh:
    """Marching cubes over the density grid; colorless output mesh.

    iso_level None picks the midpoint of the sampled density range (floored
    at the default threshold), which tracks the solid surface of trained
    fields without per-field calibration.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    grid = sample_density_grid(field_like, resolution)
    if iso_level is None:
        iso_level = max(DEFAULT_ISO, 0.5 * float(grid.min() + grid.max()))
    if grid.max() <= iso_level or grid.min() >= iso_level:
        raise EmptyMeshError(
            f"density range [{grid.min():.4g}, {grid.max():.4g}] never crosses "
            f"iso level {iso_level}")
    spacing = 2.0 / (resolution - 1)
    verts, faces, normals, _ = measure.marching_cubes(
        grid, level=iso_level, spacing=(spacing, spacing, spacing))
    verts = verts - 1.0  # grid index 0 sits at coordinate -1
    mesh = TriangleMesh(verts, faces, normals=normals)
    keep = mesh.face_areas() > DEGENERATE_AREA
    if not keep.all():
        mesh = TriangleMesh(mesh.vertices, mesh.faces[keep], normals=mesh.normals)
    if mesh.n_faces == 0:
        raise EmptyMeshError("all extracted faces were degenerate")
    return mesh


def icosphere_cameras(radius: float = 1.5, width: int = 64, height: int = 64,
                      focal: float | None = None) -> list:
    """26 novel poses: the 3 x 3 x 3 direction stencil minus the center."""
    cams = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                d = np.array([dx, dy, dz], dtype=np.float64)
                d /= np.linalg.norm(d)
                cams.append(Camera.look_at(d * radius, width=width,
                                           height=height, focal=focal))
    return cams


def _vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    if mesh.normals is not None:
        n = np.asarray(mesh.normals, dtype=np.float64)
    else:
        n = np.zeros_like(mesh.vertices)
        fa = mesh.vertices[mesh.faces]
        fn = np.cross(fa[:, 1] - fa[:, 0], fa[:, 2] - fa[:, 0])
        for k in range(3):
            np.add.at(n, mesh.faces[:, k], fn)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.clip(norms, 1e-12, None)


def _bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x = np.clip(uv[:, 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(uv[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(int).clip(0, w - 2)
    y0 = np.floor(y).astype(int).clip(0, h - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    c00 = image[y0, x0]
    c10 = image[y0, x0 + 1]
    c01 = image[y0 + 1, x0]
    c11 = image[y0 + 1, x0 + 1]
    return (c00 * (1 - fx) * (1 - fy) + c10 * fx * (1 - fy)
            + c01 * (1 - fx) * fy + c11 * fx * fy)


def color_vertices(mesh: TriangleMesh, field_like, cameras=None,
                   render_cfg: RenderConfig | None = None,
                   grid: OccupancyGrid | None = None,
                   depth_tolerance: float = 0.05) -> TriangleMesh:
    """Color each vertex from the most frontal camera that sees it.

    Every camera view is rendered once (color + depth buffer).  A vertex is
    visible in a view when it projects in-bounds, faces the camera, and its
    distance does not exceed the rendered depth by more than the tolerance.
    Vertices visible nowhere fall back to the field's own color and are
    counted in the returned mesh via direct query (logged by caller if
    needed).
    """
    if cameras is None:
        cameras = icosphere_cameras()
    if not cameras:
        raise ValueError("need at least one camera")
    field_fn = _resolve_field_fn(field_like)
    cfg = render_cfg or RenderConfig(step_size=0.01, stratified=False)
    if grid is None:
        grid = OccupancyGrid.from_field(field_fn, 32, cfg.tau_sigma)

    views = [render_view(cam, field_fn, grid, cfg) for cam in cameras]
    normals = _vertex_normals(mesh)
    n_verts = mesh.n_vertices
    best_score = np.full(n_verts, -np.inf)
    colors = np.zeros((n_verts, 3))
    seen = np.zeros(n_verts, dtype=bool)

    for cam, view in zip(cameras, views):
        uv, depth = cam.project(mesh.vertices)
        inside = ((depth > 0)
                  & (uv[:, 0] >= 0.5) & (uv[:, 0] <= cam.width - 0.5)
                  & (uv[:, 1] >= 0.5) & (uv[:, 1] <= cam.height - 0.5))
        if not inside.any():
            continue
        view_dir = mesh.vertices - cam.center
        view_dir /= np.clip(np.linalg.norm(view_dir, axis=1, keepdims=True), 1e-12, None)
        # Extracted normals may point either way; score frontality unsigned
        # and let the depth buffer decide actual visibility.
        frontal = np.abs((normals * view_dir).sum(axis=1))
        px = np.clip(np.floor(uv[inside]).astype(int), 0,
                     [cam.width - 1, cam.height - 1])
        buf = view.depth[px[:, 1], px[:, 0]]
        visible = np.zeros(n_verts, dtype=bool)
        visible[inside] = depth[inside] <= buf + depth_tolerance
        better = visible & (frontal > best_score)
        if better.any():
            sampled = _bilinear(view.rgb, uv[better])
            colors[better] = sampled
            best_score[better] = frontal[better]
            seen |= better

    if not seen.all():
        missing = np.nonzero(~seen)[0]
        with torch.no_grad():
            q = field_fn(torch.from_numpy(mesh.vertices[missing]).float())
        colors[missing] = q[:, :3].numpy()

    return TriangleMesh(mesh.vertices, mesh.faces,
                        colors=np.clip(colors, 0.0, 1.0), normals=mesh.normals)


def color_vertices_from_field(mesh: TriangleMesh, field_like) -> TriangleMesh:
    """Cheap coloring path: query the field directly at each vertex."""
    field_fn = _resolve_field_fn(field_like)
    with torch.no_grad():
        out = []
        for lo in range(0, mesh.n_vertices, 65536):
            hi = min(lo + 65536, mesh.n_vertices)
            chunk = torch.from_numpy(mesh.vertices[lo:hi]).float()
            out.append(field_fn(chunk)[:, :3].numpy())
    colors = np.clip(np.concatenate(out), 0.0, 1.0)
    return TriangleMesh(mesh.vertices, mesh.faces, colors=colors,
                        normals=mesh.normals)


def sample_mesh_surface(mesh: TriangleMesh, n_points: int,
                        rng: np.random.Generator):
    """Uniform-by-area barycentric samples; returns (points, face index, bary)."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise EmptyMeshError("mesh has no positive-area faces")
    faces = rng.choice(mesh.n_faces, size=n_points, p=areas / total)
    r1 = rng.random(n_points)
    r2 = rng.random(n_points)
    sqrt_r1 = np.sqrt(r1)
    u = 1.0 - sqrt_r1
    v = sqrt_r1 * (1.0 - r2)
    w = sqrt_r1 * r2
    bary = np.stack([u, v, w], axis=1)
    tri = mesh.vertices[mesh.faces[faces]]          # (n, 3, 3)
    points = (bary[..., None] * tri).sum(axis=1)
    return points, faces, bary


def resample_cloud(field_like, n_points: int, seed: int = 0,
                   resolution: int = 64, iso_level: float = DEFAULT_ISO,
                   color_mode: str = "views", cameras=None,
                   render_cfg: RenderConfig | None = None,
                   mesh: TriangleMesh | None = None) -> ColoredPointCloud:
    """Extract the surface and resample it as a colored cloud.

    color_mode 'views' projects colors from rendered novel views (the full
    pipeline); 'field' queries the field directly and is much cheaper when
    only geometry matters downstream.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if mesh is None:
        mesh = extract_mesh(field_like, resolution=resolution, iso_level=iso_level)
    if mesh.colors is None:
        if color_mode == "views":
            mesh = color_vertices(mesh, field_like, cameras=cameras,
                                  render_cfg=render_cfg)
        elif color_mode == "field":
            mesh = color_vertices_from_field(mesh, field_like)
        else:
            raise ValueError("color_mode must be 'views' or 'field'")
    rng = np.random.default_rng(seed)
    points, faces, bary = sample_mesh_surface(mesh, n_points, rng)
    vcols = mesh.colors[mesh.faces[faces]]          # (n, 3, 3)
    colors = (bary[..., None] * vcols).sum(axis=1)
    return ColoredPointCloud(points, np.clip(colors, 0.0, 1.0))


def save_mesh_ply(path, mesh: TriangleMesh):
    """Binary little-endian PLY with per-vertex colors (white if uncolored)."""
    colors = mesh.colors if mesh.colors is not None else np.ones((mesh.n_vertices, 3))
    rgb = np.clip(np.rint(colors * 255.0), 0, 255).astype(np.uint8)
    header = (
        b"ply\nformat binary_little_endian 1.0\n"
        + f"element vertex {mesh.n_vertices}\n".encode()
        + b"property float x\nproperty float y\nproperty float z\n"
        + b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
        + f"element face {mesh.n_faces}\n".encode()
        + b"property list uchar int vertex_indices\nend_header\n"
    )
    vrec = np.empty(mesh.n_vertices,
                    dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                           ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    pos = mesh.vertices.astype(np.float32)
    vrec["x"], vrec["y"], vrec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    vrec["red"], vrec["green"], vrec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    frec = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    frec["n"] = 3
    frec["idx"] = mesh.faces.astype(np.int32)
    with open(path, "wb") as f:
        f.write(header)
        f.write(vrec.tobytes())
        f.write(frec.tobytes())
