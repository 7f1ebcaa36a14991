import numpy as np
import pytest

from sedfosgd.problems import write_idx


def make_synthetic_digits(n=1250, classes=10, side=28, seed=99, noise=60.0):
    """Class-prototype images with additive pixel noise; learnable by a tiny MLP."""
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0, 1, size=(classes, side, side))
    labels = rng.integers(0, classes, size=n)
    imgs = protos[labels] * 255 * 0.6 + rng.normal(0, noise, size=(n, side, side))
    return np.clip(imgs, 0, 255).astype(np.uint8), labels.astype(np.uint8)


@pytest.fixture(scope="session")
def synthetic_idx(tmp_path_factory):
    """Paths to a synthetic IDX image/label pair shared across tests."""
    d = tmp_path_factory.mktemp("idxdata")
    images, labels = make_synthetic_digits()
    ip, lp = str(d / "images.idx"), str(d / "labels.idx")
    write_idx(ip, lp, images, labels)
    return ip, lp
