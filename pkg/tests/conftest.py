import numpy as np
import pytest
from skimage import color, data

from diffvmaf.model import load_model


def gray(img):
    img = np.asarray(img)
    if img.ndim == 3:
        return color.rgb2gray(img[..., :3]) * 255.0
    return img.astype(np.float64)


def natural(name: str) -> np.ndarray:
    return gray(getattr(data, name)())


def crop(img, r, c, size):
    return np.ascontiguousarray(img[r:r + size, c:c + size])


@pytest.fixture(scope="session")
def demo_model():
    return load_model("demo")


@pytest.fixture(scope="session")
def camera():
    return natural("camera")


@pytest.fixture(scope="session")
def textured64(camera):
    return crop(camera, 200, 200, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
