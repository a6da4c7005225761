"""Meshing: extraction accuracy, watertightness, vertex coloring, resampling."""

import numpy as np
import pytest
import torch

from pointfield.dataset import Sphere
from pointfield.mesher import (EmptyMeshError, TriangleMesh, boundary_edge_count,
                               color_vertices, color_vertices_from_field,
                               extract_mesh, icosphere_cameras, resample_cloud,
                               sample_mesh_surface, save_mesh_ply)
from pointfield.renderer import RenderConfig

SIGMA_MAX = 30.0
FALLOFF = 0.01  # sharp


def analytic_field(shape, sigma_max=SIGMA_MAX, falloff=FALLOFF):
    density = shape.density_fn(sigma_max=sigma_max, falloff=falloff)
    color = shape.color_fn()

    def fn(positions):
        p = positions.detach().numpy().astype(np.float64)
        sigma = torch.from_numpy(np.asarray(density(p))).float()
        rgb = torch.from_numpy(np.asarray(color(p))).float()
        return torch.cat([rgb, sigma[:, None]], dim=1)

    return fn


@pytest.fixture(scope="module")
def sphere_field():
    return analytic_field(Sphere(radius=0.5, color=(1.0, 0.0, 0.0),
                                 second_color=(0.0, 0.0, 1.0)))


@pytest.fixture(scope="module")
def sphere_mesh(sphere_field):
    return extract_mesh(sphere_field, resolution=64, iso_level=SIGMA_MAX / 2)


class TestExtractMesh:
    def test_sphere_vertex_radii(self, sphere_mesh):
        radii = np.linalg.norm(sphere_mesh.vertices, axis=1)
        assert np.abs(radii - 0.5).max() < 2.0 / 64

    def test_vertices_inside_world_box(self, sphere_mesh):
        assert np.abs(sphere_mesh.vertices).max() <= 1.0

    def test_watertight(self, sphere_mesh):
        assert boundary_edge_count(sphere_mesh) == 0

    def test_zero_density_raises(self):
        def empty(positions):
            out = torch.zeros(positions.shape[0], 4)
            return out
        with pytest.raises(EmptyMeshError):
            extract_mesh(empty, resolution=16)

    def test_refinement_improves_accuracy(self, sphere_field):
        def mean_err(res):
            mesh = extract_mesh(sphere_field, resolution=res,
                                iso_level=SIGMA_MAX / 2)
            return np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).mean()
        coarse, fine = mean_err(24), mean_err(48)
        assert coarse / fine >= 1.5

    def test_resolution_validated(self, sphere_field):
        with pytest.raises(ValueError):
            extract_mesh(sphere_field, resolution=4)


class TestColorVertices:
    def test_uniform_color_field(self):
        field = analytic_field(Sphere(radius=0.5, color=(1.0, 0.0, 0.0)))
        mesh = extract_mesh(field, resolution=32, iso_level=SIGMA_MAX / 2)
        cams = icosphere_cameras(width=48, height=48)
        colored = color_vertices(mesh, field, cameras=cams,
                                 render_cfg=RenderConfig(step_size=0.02,
                                                         stratified=False))
        assert np.abs(colored.colors - [1.0, 0.0, 0.0]).max() < 0.02

    def test_two_tone_hemisphere_membership(self, sphere_field):
        mesh = extract_mesh(sphere_field, resolution=32, iso_level=SIGMA_MAX / 2)
        cams = icosphere_cameras(width=48, height=48)
        colored = color_vertices(mesh, sphere_field, cameras=cams,
                                 render_cfg=RenderConfig(step_size=0.02,
                                                         stratified=False))
        # Skip a band near the seam where bilinear sampling mixes tones.
        off_seam = np.abs(colored.vertices[:, 2]) > 0.05
        is_red = colored.colors[:, 0] > colored.colors[:, 2]
        expect_red = colored.vertices[:, 2] >= 0
        agree = (is_red == expect_red)[off_seam]
        assert agree.mean() >= 0.95

    def test_single_camera_with_fallback(self, sphere_field):
        mesh = extract_mesh(sphere_field, resolution=24, iso_level=SIGMA_MAX / 2)
        cam = icosphere_cameras(width=32, height=32)[0]
        colored = color_vertices(mesh, sphere_field, cameras=[cam],
                                 render_cfg=RenderConfig(step_size=0.03,
                                                         stratified=False))
        # Everything gets a color; occluded side comes from the field query.
        assert colored.colors.shape == (mesh.n_vertices, 3)
        assert np.isfinite(colored.colors).all()

    def test_field_query_coloring(self, sphere_field):
        mesh = extract_mesh(sphere_field, resolution=24, iso_level=SIGMA_MAX / 2)
        colored = color_vertices_from_field(mesh, sphere_field)
        north = colored.vertices[:, 2] > 0.1
        assert (colored.colors[north, 0] > 0.9).all()


class TestResampleCloud:
    def test_points_lie_on_triangles(self, sphere_mesh, sphere_field):
        mesh = color_vertices_from_field(sphere_mesh, sphere_field)
        rng = np.random.default_rng(0)
        points, faces, bary = sample_mesh_surface(mesh, 500, rng)
        tri = mesh.vertices[mesh.faces[faces]]
        recon = (bary[..., None] * tri).sum(axis=1)
        assert np.abs(points - recon).max() < 1e-9
        assert np.abs(bary.sum(axis=1) - 1.0).max() < 1e-12

    def test_seed_determinism(self, sphere_field):
        a = resample_cloud(sphere_field, 200, seed=4, resolution=24,
                           iso_level=SIGMA_MAX / 2, color_mode="field")
        b = resample_cloud(sphere_field, 200, seed=4, resolution=24,
                           iso_level=SIGMA_MAX / 2, color_mode="field")
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.colors, b.colors)

    def test_single_point(self, sphere_field):
        cloud = resample_cloud(sphere_field, 1, seed=0, resolution=24,
                               iso_level=SIGMA_MAX / 2, color_mode="field")
        assert len(cloud) == 1
        assert abs(np.linalg.norm(cloud.positions[0]) - 0.5) < 0.1

    def test_upsample_density(self, sphere_field):
        cloud = resample_cloud(sphere_field, 3000, seed=1, resolution=32,
                               iso_level=SIGMA_MAX / 2, color_mode="field")
        radii = np.linalg.norm(cloud.positions, axis=1)
        assert np.abs(radii - 0.5).max() < 2.0 / 32 + 1e-6


class TestMeshIO:
    def test_ply_written_with_colors_and_faces(self, sphere_field, tmp_path):
        mesh = extract_mesh(sphere_field, resolution=16, iso_level=SIGMA_MAX / 2)
        mesh = color_vertices_from_field(mesh, sphere_field)
        path = tmp_path / "mesh.ply"
        save_mesh_ply(path, mesh)
        data = path.read_bytes()
        assert data.startswith(b"ply")
        assert f"element vertex {mesh.n_vertices}".encode() in data
        assert f"element face {mesh.n_faces}".encode() in data

    def test_face_index_validation(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))
