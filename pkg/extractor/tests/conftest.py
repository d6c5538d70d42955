import numpy as np
import pytest
from PIL import Image

from hdff_extractor import save_demo_checkpoint


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    return save_demo_checkpoint(tmp_path_factory.mktemp("ckpt") / "tiny.pt", seed=7)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Four 8x8 RGB images in two class directories, deterministic pixels."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(123)
    for cls in ("cat", "dog"):
        cdir = root / cls
        cdir.mkdir()
        for k in range(2):
            pixels = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(pixels, mode="RGB").save(cdir / f"img_{k}.png")
    return root


@pytest.fixture(scope="session")
def flat_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("flat_images")
    rng = np.random.default_rng(5)
    for k in range(3):
        pixels = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        Image.fromarray(pixels, mode="RGB").save(root / f"img_{k}.png")
    return root
