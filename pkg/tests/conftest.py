"""Shared fixtures: fixed scenes, measurements and trained toy models.

Everything is deterministic; session-scoped fixtures cache the few trainings
the suite needs so individual test modules stay fast.
"""

import numpy as np
import pytest

from latvid.codec import TrainingConfig, make_linear_codec, train_codec
from latvid.geometry import double_reproject
from latvid.masks import (default_mask_training_config,
                          latent_mask_training_free, train_mask_encoder)
from latvid.synthdata import (LayerSpec, SceneSpec, default_intrinsics,
                              gen_moving_shapes, random_scene,
                              scene_trajectory)

DIMS = (8, 32, 32)   # frames, height, width


@pytest.fixture(scope="session")
def linear_codec():
    return make_linear_codec(2, 4, 12)


@pytest.fixture(scope="session")
def slow_scene():
    """Gently moving scene used for warp fixtures."""
    scene = random_scene(3, height=32, width=32)
    video, depth = gen_moving_shapes(scene, *DIMS)
    return video, depth


@pytest.fixture(scope="session")
def fast_scene():
    """Fast-motion fixture: layers move ~2 px/frame, stressing the
    temporal-AND binary mask."""
    spec = SceneSpec(seed=7, layers=[
        LayerSpec(depth=1.2, shape="rectangle", color=(0.9, 0.2, 0.2),
                  center=(9.0, 9.0), size=3.0, velocity=(1.8, 0.6)),
        LayerSpec(depth=2.0, shape="disk", color=(0.2, 0.4, 0.9),
                  center=(22.0, 16.0), size=4.0, velocity=(-1.5, 0.8)),
    ], background="checker")
    video, depth = gen_moving_shapes(spec, *DIMS)
    return video, depth


@pytest.fixture(scope="session")
def fast_measurement(fast_scene):
    video, depth = fast_scene
    intr = default_intrinsics(32, 32)
    traj = scene_trajectory("arc_left", 0.18, DIMS[0], depth, intr)
    y, m = double_reproject(video, depth, traj)
    return video, y, m


@pytest.fixture(scope="session")
def zoom_measurement(slow_scene):
    video, depth = slow_scene
    intr = default_intrinsics(32, 32)
    traj = scene_trajectory("zoom_in", 0.25, DIMS[0], depth, intr)
    y, m = double_reproject(video, depth, traj)
    return video, y, m


@pytest.fixture(scope="session")
def video_bank():
    """Ten deterministic scenes: 8 train + 2 held out."""
    videos = []
    for seed in range(10):
        scene = random_scene(seed, height=32, width=32)
        video, _ = gen_moving_shapes(scene, *DIMS)
        videos.append(video)
    return videos[:8], videos[8:]


@pytest.fixture(scope="session")
def trained_codec(video_bank):
    train, _ = video_bank
    cfg = TrainingConfig(epochs=60, batch_size=256, lr=3e-3, seed=0)
    return train_codec(train, cfg)


@pytest.fixture(scope="session")
def mask_pairs(linear_codec):
    """(y, m, h_gt) triples from double reprojection: 6 train + 2 held out."""
    intr = default_intrinsics(32, 32)
    pairs = []
    for i in range(8):
        scene = random_scene(100 + i, height=32, width=32, max_speed=2.0)
        video, depth = gen_moving_shapes(scene, *DIMS)
        kind = ["zoom_in", "arc_left"][i % 2]
        traj = scene_trajectory(kind, 0.2, DIMS[0], depth, intr)
        y, m = double_reproject(video, depth, traj)
        h_gt = latent_mask_training_free(video, m, linear_codec)
        pairs.append((y, m, h_gt))
    return pairs[:6], pairs[6:]


@pytest.fixture(scope="session")
def trained_mask_encoder(mask_pairs):
    train, _ = mask_pairs
    cfg = default_mask_training_config(epochs=100, seed=0)
    return train_mask_encoder(train, cfg, rt=2, rs=4, channels=12)
