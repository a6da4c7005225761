"""Synthetic scenes: shape sampling, hemisphere poses, persistence round trips."""

import json

import numpy as np
import pytest

from pointfield.dataset import (Box, Scene, SceneFormatError, Sphere,
                                UnionShape, hemisphere_cameras, load_png,
                                load_scene, make_scene, save_png, save_scene,
                                shape_from_dict)
from pointfield.metrics import psnr
from pointfield.renderer import RenderConfig, reference_render


class TestShapes:
    def test_sphere_surface_sampling_exact(self, rng):
        sph = Sphere(radius=0.5)
        pos, col = sph.sample_surface(4096, rng)
        radii = np.linalg.norm(pos, axis=1)
        assert np.abs(radii - 0.5).max() < 1e-6
        assert col.shape == (4096, 3)

    def test_two_tone_coloring(self, rng):
        sph = Sphere(radius=0.4, color=(1, 0, 0), second_color=(0, 0, 1), tone_axis=2)
        pos, col = sph.sample_surface(512, rng)
        below = pos[:, 2] < 0
        assert np.allclose(col[below], [0, 0, 1])
        assert np.allclose(col[~below], [1, 0, 0])

    def test_box_sampling_on_faces(self, rng):
        box = Box(half_extents=(0.3, 0.4, 0.5))
        pos, _ = box.sample_surface(2048, rng)
        h = np.array([0.3, 0.4, 0.5])
        on_face = np.isclose(np.abs(pos), h, atol=1e-12).any(axis=1)
        assert on_face.all()
        assert np.abs(box.sdf(pos)).max() < 1e-9

    def test_box_sdf_signs(self):
        box = Box(half_extents=(0.5, 0.5, 0.5))
        inside = np.array([[0.0, 0.0, 0.0]])
        outside = np.array([[1.0, 0.0, 0.0]])
        assert box.sdf(inside)[0] < 0
        assert box.sdf(outside)[0] == pytest.approx(0.5)

    def test_union_samples_on_union_boundary(self, rng):
        shape = UnionShape(Sphere(center=(-0.3, 0, 0), radius=0.3),
                           Sphere(center=(0.3, 0, 0), radius=0.3))
        pos, _ = shape.sample_surface(1024, rng)
        # On the union boundary: distance zero, never strictly interior.
        assert np.abs(shape.sdf(pos)).max() < 1e-9

    def test_shape_budget_enforced(self):
        with pytest.raises(ValueError):
            Sphere(radius=0.9)
        with pytest.raises(ValueError):
            Box(center=(0.5, 0, 0), half_extents=(0.5, 0.2, 0.2))

    def test_density_truncation_is_exact(self):
        sph = Sphere(radius=0.5)
        density = sph.density_fn()
        far = np.array([[0.99, 0.0, 0.0]])
        assert density(far)[0] == 0.0

    def test_shape_dict_round_trip(self):
        shape = UnionShape(Sphere(radius=0.3, color=(0.1, 0.2, 0.3)),
                           Box(half_extents=(0.2, 0.3, 0.2)))
        back = shape_from_dict(shape.to_dict())
        assert back == shape


class TestHemisphereCameras:
    def test_radius_and_upper_half(self):
        cams = hemisphere_cameras(50, radius=1.5, width=16, height=16)
        centers = np.array([c.center for c in cams])
        assert np.abs(np.linalg.norm(centers, axis=1) - 1.5).max() < 1e-6
        assert (centers[:, 2] >= 0).all()

    def test_cameras_look_at_origin(self):
        for cam in hemisphere_cameras(5, radius=1.5, width=8, height=8):
            optical_axis = -cam.rotation[:, 2]
            to_origin = -cam.center / np.linalg.norm(cam.center)
            assert np.allclose(optical_axis, to_origin, atol=1e-9)

    def test_radius_must_exceed_object_box(self):
        with pytest.raises(ValueError):
            hemisphere_cameras(5, radius=0.9)


class TestMakeScene:
    def test_counts_and_determinism(self, two_tone_sphere):
        a = make_scene(two_tone_sphere, n_points=512, n_views=3, resolution=16, seed=3)
        b = make_scene(two_tone_sphere, n_points=512, n_views=3, resolution=16, seed=3)
        assert len(a.cameras) == len(a.images) == 3
        assert np.array_equal(a.cloud.positions, b.cloud.positions)
        assert np.array_equal(a.images[0], b.images[0])

    def test_cloud_colors_match_shape(self, two_tone_sphere):
        scene = make_scene(two_tone_sphere, n_points=256, n_views=1,
                           resolution=8, seed=0)
        expected = two_tone_sphere.color_at(scene.cloud.positions)
        assert np.abs(scene.cloud.colors - expected).max() < 1e-9

    def test_images_have_content(self, small_scene):
        img = small_scene.images[0]
        assert img.shape == (32, 32, 3)
        assert img.max() > 0.3          # object visible
        assert img.min() == 0.0         # black background

    def test_camera_count_mismatch_rejected(self, small_scene):
        with pytest.raises(SceneFormatError):
            Scene(small_scene.cloud, small_scene.cameras[:2], small_scene.images)


class TestScenePersistence:
    def test_round_trip(self, small_scene, tmp_path):
        save_scene(small_scene, tmp_path / "scene")
        back = load_scene(tmp_path / "scene")
        assert np.abs(back.cloud.positions - small_scene.cloud.positions).max() < 1e-6
        assert len(back.cameras) == small_scene.n_views
        for a, b in zip(back.images, small_scene.images):
            assert np.abs(a - b).max() <= 0.5 / 255 + 1e-9  # 8-bit quantization
        assert back.shape == small_scene.shape
        assert back.meta["seed"] == small_scene.meta["seed"]

    def test_stored_images_match_reference_rerender(self, small_scene, tmp_path):
        save_scene(small_scene, tmp_path / "scene")
        back = load_scene(tmp_path / "scene")
        density = back.shape.density_fn()
        color = back.shape.color_fn()
        cfg = RenderConfig(step_size=0.048)
        for cam, stored in list(zip(back.cameras, back.images))[:2]:
            fresh = reference_render(cam, density, color, cfg,
                                     bounds_radius=back.shape.density_bound())
            assert psnr(stored, fresh) > 50.0

    def test_missing_file_error(self, small_scene, tmp_path):
        save_scene(small_scene, tmp_path / "scene")
        (tmp_path / "scene" / "cloud.ply").unlink()
        with pytest.raises(SceneFormatError, match="cloud.ply"):
            load_scene(tmp_path / "scene")

    def test_malformed_cameras_json(self, small_scene, tmp_path):
        save_scene(small_scene, tmp_path / "scene")
        (tmp_path / "scene" / "cameras.json").write_text("{not json")
        with pytest.raises(SceneFormatError, match="cameras.json"):
            load_scene(tmp_path / "scene")

    def test_count_mismatch_error(self, small_scene, tmp_path):
        save_scene(small_scene, tmp_path / "scene")
        images = sorted((tmp_path / "scene" / "images").glob("view_*.png"))
        images[-1].unlink()
        with pytest.raises(SceneFormatError, match="cameras but"):
            load_scene(tmp_path / "scene")

    def test_png_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, (9, 7, 3))
        save_png(tmp_path / "x.png", img)
        back = load_png(tmp_path / "x.png")
        assert back.shape == (9, 7, 3)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9
