"""Fixtures: a weightless backbone and tiny frame corpora.

The backbone is randomly initialized (no weight download); every property
tested here (pooling arithmetic, determinism, output format) is independent
of the weight values.
"""

import numpy as np
import pytest
from PIL import Image

from affect_exporter.backbone import Backbone


@pytest.fixture(scope="session")
def backbone():
    return Backbone.random_init(seed=0)


def write_frame(path, seed=0, size=(40, 56), color=None):
    if color is not None:
        img = Image.new("RGB", size, color)
    else:
        r = np.random.default_rng(seed)
        arr = r.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        img = Image.fromarray(arr)
    img.save(path)


@pytest.fixture
def corpus(tmp_path):
    """Two videos, three frames each, distinct pixels per frame."""
    root = tmp_path / "frames"
    for v, video in enumerate(("vidA", "vidB")):
        d = root / video
        d.mkdir(parents=True)
        for f in range(3):
            write_frame(d / f"{f:04d}.png", seed=10 * v + f)
    return root
