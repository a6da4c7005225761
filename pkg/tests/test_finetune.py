"""Per-scene optimization: zero-view inference, latent refinement, completion
fine-tuning, interpolation, stitching."""

import hashlib

import numpy as np
import pytest
import torch

from pointfield.finetune import (FinetuneConfig, finetune_completion,
                                 finetune_latent, infer_zero_view,
                                 interpolate_latents, sample_completion,
                                 stitch_parts)
from pointfield.geometry import SplitPlane, split_by_plane
from pointfield.training import CheckpointKindError


def model_digest(ckpt):
    h = hashlib.sha256()
    for k in sorted(ckpt.model_state):
        h.update(ckpt.model_state[k].numpy().tobytes())
    return h.hexdigest()


class TestInferZeroView:
    def test_deterministic(self, small_scene, micro_gen_checkpoint):
        a = infer_zero_view(small_scene.cloud, micro_gen_checkpoint)
        b = infer_zero_view(small_scene.cloud, micro_gen_checkpoint)
        assert torch.equal(a.flat, b.flat)

    def test_unseen_cloud_gives_finite_field(self, micro_gen_checkpoint, rng):
        from pointfield.dataset import Sphere
        other = Sphere(radius=0.35, color=(0.2, 0.8, 0.3))
        cloud = other.sample_cloud(512, rng)
        weights = infer_zero_view(cloud, micro_gen_checkpoint)
        assert torch.isfinite(weights.flat).all()
        from pointfield.field import eval_field
        out = eval_field(torch.rand(64, 3) * 2 - 1, weights)
        assert torch.isfinite(out).all()

    def test_wrong_kind_rejected(self, small_scene, micro_completion_checkpoint):
        with pytest.raises(CheckpointKindError):
            infer_zero_view(small_scene.cloud, micro_completion_checkpoint)


class TestFinetuneLatent:
    def test_zero_iterations_equals_inference(self, small_scene, micro_gen_checkpoint):
        views = [(small_scene.cameras[0], small_scene.images[0])]
        result = finetune_latent(small_scene.cloud, views, micro_gen_checkpoint,
                                 FinetuneConfig(iterations=0))
        baseline = infer_zero_view(small_scene.cloud, micro_gen_checkpoint)
        assert torch.equal(result.weights.flat, baseline.flat)

    def test_no_views_equals_inference(self, small_scene, micro_gen_checkpoint):
        result = finetune_latent(small_scene.cloud, [], micro_gen_checkpoint,
                                 FinetuneConfig(iterations=50))
        baseline = infer_zero_view(small_scene.cloud, micro_gen_checkpoint)
        assert torch.equal(result.weights.flat, baseline.flat)

    def test_loss_never_worse_and_best_monotone(self, small_scene,
                                                micro_gen_checkpoint):
        views = [(small_scene.cameras[0], small_scene.images[0])]
        result = finetune_latent(small_scene.cloud, views, micro_gen_checkpoint,
                                 FinetuneConfig(iterations=60, rays_per_step=96,
                                                eval_every=20, seed=0))
        assert result.final_loss <= result.initial_loss
        trace = result.best_losses
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_hypernet_untouched_in_latent_mode(self, small_scene, micro_gen_checkpoint):
        digest_before = model_digest(micro_gen_checkpoint)
        views = [(small_scene.cameras[0], small_scene.images[0])]
        finetune_latent(small_scene.cloud, views, micro_gen_checkpoint,
                        FinetuneConfig(iterations=20, rays_per_step=64))
        assert model_digest(micro_gen_checkpoint) == digest_before


class TestFinetuneCompletion:
    def split(self, scene):
        return split_by_plane(scene.cloud, SplitPlane(np.array([1.0, 0, 0]), 0.0))

    def test_distinct_prior_samples_give_distinct_completions(
            self, small_union_scene, micro_completion_checkpoint):
        existing, _ = self.split(small_union_scene)
        w1 = sample_completion(existing, micro_completion_checkpoint, seed=1)
        w2 = sample_completion(existing, micro_completion_checkpoint, seed=2)
        assert not torch.equal(w1.flat, w2.flat)

    def test_loss_decreases_on_frames(self, small_union_scene,
                                      micro_completion_checkpoint):
        existing, _ = self.split(small_union_scene)
        views = list(zip(small_union_scene.cameras[:2], small_union_scene.images[:2]))
        result = finetune_completion(existing, views, micro_completion_checkpoint,
                                     FinetuneConfig(iterations=40, rays_per_step=96,
                                                    eval_every=20))
        assert result.final_loss <= result.initial_loss

    def test_only_missing_code_returned(self, small_union_scene,
                                        micro_completion_checkpoint):
        existing, _ = self.split(small_union_scene)
        result = finetune_completion(existing, [], micro_completion_checkpoint)
        model = micro_completion_checkpoint.build_model()
        assert result.z.shape == (model.missing_dim,)

    def test_wrong_kind_rejected(self, small_scene, micro_gen_checkpoint):
        with pytest.raises(CheckpointKindError):
            finetune_completion(small_scene.cloud, [], micro_gen_checkpoint)


class TestInterpolate:
    def test_endpoints_bitwise_exact(self, small_scene, micro_gen_checkpoint):
        model = micro_gen_checkpoint.build_model()
        gen = torch.Generator().manual_seed(0)
        za = torch.randn(model.latent_dim, generator=gen)
        zb = torch.randn(model.latent_dim, generator=gen)
        fields = interpolate_latents(za, zb, 5, micro_gen_checkpoint)
        assert len(fields) == 5
        with torch.no_grad():
            wa = model.hyper(za)
            wb = model.hyper(zb)
        assert torch.equal(fields[0].flat, wa)
        assert torch.equal(fields[-1].flat, wb)

    def test_two_steps_are_exactly_endpoints(self, micro_gen_checkpoint):
        model = micro_gen_checkpoint.build_model()
        za = torch.zeros(model.latent_dim)
        zb = torch.ones(model.latent_dim)
        fields = interpolate_latents(za, zb, 2, micro_gen_checkpoint)
        assert len(fields) == 2

    def test_dim_mismatch(self, micro_gen_checkpoint):
        with pytest.raises(ValueError):
            interpolate_latents(torch.zeros(4), torch.zeros(5), 3,
                                micro_gen_checkpoint)

    def test_midpoint_is_between(self, micro_gen_checkpoint):
        model = micro_gen_checkpoint.build_model()
        za = torch.zeros(model.latent_dim)
        zb = torch.ones(model.latent_dim)
        fields = interpolate_latents(za, zb, 3, micro_gen_checkpoint)
        with torch.no_grad():
            mid = model.hyper(0.5 * za + 0.5 * zb)
        assert torch.allclose(fields[1].flat, mid)


class TestStitch:
    def test_self_stitch_runs(self, small_union_scene, micro_completion_checkpoint):
        existing, missing = split_by_plane(
            small_union_scene.cloud, SplitPlane(np.array([1.0, 0, 0]), 0.0))
        weights = stitch_parts(existing, missing, micro_completion_checkpoint)
        assert torch.isfinite(weights.flat).all()

    def test_swapping_roles_changes_field(self, small_union_scene,
                                          micro_completion_checkpoint):
        existing, missing = split_by_plane(
            small_union_scene.cloud, SplitPlane(np.array([1.0, 0, 0]), 0.0))
        a = stitch_parts(existing, missing, micro_completion_checkpoint)
        b = stitch_parts(missing, existing, micro_completion_checkpoint)
        assert not torch.equal(a.flat, b.flat)

    def test_density_continuous_across_seam(self, small_union_scene,
                                            micro_completion_checkpoint):
        # Probe pairs straddling the seam plane; an MLP field must not jump.
        existing, missing = split_by_plane(
            small_union_scene.cloud, SplitPlane(np.array([1.0, 0, 0]), 0.0))
        weights = stitch_parts(existing, missing, micro_completion_checkpoint)
        from pointfield.field import eval_field
        rng = np.random.default_rng(0)
        yz = rng.uniform(-0.6, 0.6, (200, 2))
        eps = 1e-3
        left = np.column_stack([np.full(200, -eps), yz])
        right = np.column_stack([np.full(200, eps), yz])
        with torch.no_grad():
            s_left = eval_field(torch.from_numpy(left).float(), weights)[:, 3]
            s_right = eval_field(torch.from_numpy(right).float(), weights)[:, 3]
        assert float((s_left - s_right).abs().max()) < 1.0

    def test_wrong_kind_rejected(self, small_scene, micro_gen_checkpoint):
        with pytest.raises(CheckpointKindError):
            stitch_parts(small_scene.cloud, small_scene.cloud, micro_gen_checkpoint)
