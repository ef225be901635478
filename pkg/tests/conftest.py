import numpy as np
import pytest
from PIL import Image

from divmix.synth import builtin_object, child_like_views, generate_corpus


def write_png(path, array):
    """array: (h, w) uint8 gray or (h, w, 3) uint8 RGB."""
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array.astype(np.uint8), mode=mode).save(path, format="PNG")
    return path


@pytest.fixture()
def white_png(tmp_path):
    return write_png(tmp_path / "white.png", np.full((64, 64), 255))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Two-class rendered corpus: 40 child-like train + 20 canonical test per class."""
    out = tmp_path_factory.mktemp("small_corpus")
    objects = [builtin_object("ball"), builtin_object("brick")]
    manifest = generate_corpus(
        objects,
        {"train": child_like_views()},
        {"train": 40, "test": 20},
        out,
        seed=7,
        image_side=64,
    )
    return out, manifest
