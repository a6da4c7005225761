"""Shared fixtures: tiny scenes and micro training runs for unit tests.

Desk-scale fixtures used by the acceptance suite live in
test_acceptance.py; everything here is sized to run in seconds.
"""

import numpy as np
import pytest
import torch

from pointfield.dataset import Sphere, UnionShape, Box, make_scene
from pointfield.encoder import EncoderConfig
from pointfield.hypernet import FieldArchitecture
from pointfield.renderer import RenderConfig
from pointfield.training import TrainConfig, train_generation, train_completion

torch.set_num_threads(1)


def micro_train_config(kind="generation", **overrides) -> TrainConfig:
    """Small-everything config so training tests run in seconds."""
    base = dict(
        iterations=40,
        rays_per_step=128,
        grid_resolution=16,
        occupancy_interval=8,
        log_every=5,
        encoder=EncoderConfig(latent_dim=32, widths=(32, 64), n_points=256),
        encoder_missing=EncoderConfig(latent_dim=16, widths=(32, 64), n_points=256),
        arch=FieldArchitecture(hidden=32, pe_bands=4),
        render=RenderConfig(step_size=0.04),
    )
    base.update(overrides)
    if kind == "completion":
        return TrainConfig.for_completion(**{k: v for k, v in base.items()
                                             if k not in ("encoder", "encoder_missing")},
                                          encoder=base["encoder"],
                                          encoder_missing=base["encoder_missing"])
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def two_tone_sphere():
    return Sphere(radius=0.5, color=(0.9, 0.15, 0.1), second_color=(0.1, 0.2, 0.9))


@pytest.fixture(scope="session")
def small_scene(two_tone_sphere):
    """One sphere scene, 4 views at 32x32; enough for smoke training."""
    return make_scene(two_tone_sphere, n_points=2048, n_views=4, resolution=32,
                      seed=7)


@pytest.fixture(scope="session")
def small_union_scene():
    shape = UnionShape(
        Sphere(center=(-0.35, 0.0, 0.0), radius=0.3, color=(0.9, 0.2, 0.1)),
        Box(center=(0.35, 0.0, 0.0), half_extents=(0.25, 0.25, 0.25),
            color=(0.1, 0.6, 0.9)))
    return make_scene(shape, n_points=2048, n_views=4, resolution=32, seed=9)


@pytest.fixture(scope="session")
def micro_gen_checkpoint(small_scene, tmp_path_factory):
    log = tmp_path_factory.mktemp("microgen") / "train.jsonl"
    return train_generation([small_scene], micro_train_config(iterations=60),
                            log_path=log)


@pytest.fixture(scope="session")
def micro_completion_checkpoint(small_union_scene, tmp_path_factory):
    log = tmp_path_factory.mktemp("microcomp") / "train.jsonl"
    return train_completion([small_union_scene],
                            micro_train_config("completion", iterations=60),
                            log_path=log)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
