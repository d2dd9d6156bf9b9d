import numpy as np
import pytest

from descry.core import Image, Rng


@pytest.fixture
def rng():
    return Rng(1234)


def noise_image(width=32, height=32, seed=0, channels=3):
    g = np.random.Generator(np.random.PCG64(seed))
    return Image(g.uniform(0.0, 1.0, size=(height, width, channels)).astype(np.float32))


def smooth_image(width=64, height=64, seed=0):
    """Low-frequency texture: photometrically stable under subpixel resampling."""
    from descry.scenegen import value_noise

    return Image(value_noise(height, width, Rng(seed), cells=5))


@pytest.fixture
def small_image():
    return noise_image(32, 32, seed=7)
