import numpy as np
import pytest
from hypothesis import settings

from g2s.synth import SceneConfig, build_scene

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def tiny_config(seed=0, frames=3, **kw):
    """16x12 drive scene used for gradient checks."""
    return SceneConfig.random_drive(seed, width=16, height=12, fx=12.0, fy=12.0,
                                    frames=frames, **kw)


@pytest.fixture(scope="session")
def tiny_scene():
    return build_scene(tiny_config(0, frames=4), seed=0)


@pytest.fixture(scope="session")
def lateral_scene():
    """Integer-pixel sideways motion: rendering is exactly self-consistent."""
    return build_scene(SceneConfig.random_plane(3), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def triplet_at(scene, t, depth_scale=1.0, jitter=0.0, seed=0):
    """Triplet around frame ``t`` with (optionally perturbed) true depth and poses.

    Returns ``(triplet, depth, (rotation (2, 3), translation (2, 3)))``.
    """
    from g2s.geo import relative_displacement
    from g2s.losses import ImageTriplet

    rng = np.random.default_rng(seed)
    depth = depth_scale * scene.depths[t] * np.exp(jitter * rng.uniform(-1, 1, scene.depths[t].shape))
    poses = [scene.relative_pose(t, t - 1), scene.relative_pose(t, t + 1)]
    rot = np.array([p.rotation for p in poses]) + rng.normal(scale=0.01 * jitter, size=(2, 3))
    trans = depth_scale * np.array([p.translation for p in poses])
    trans = trans * (1 + rng.normal(scale=jitter, size=(2, 3)))
    gps = [relative_displacement(scene.gps, t - 1, t), relative_displacement(scene.gps, t + 1, t)]
    trip = ImageTriplet(scene.images[t - 1], scene.images[t], scene.images[t + 1], scene.K, gps)
    return trip, depth, (rot, trans)
