import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from saliencybench import Image, RngStream, SaliencyMap


@pytest.fixture
def rng():
    return RngStream(20240817)


@pytest.fixture
def small_image():
    vals = RngStream(101).uniforms(12 * 10 * 3).reshape(12, 10, 3).astype(np.float32)
    return Image(vals)


@pytest.fixture
def frame_84():
    vals = RngStream(202).uniforms(84 * 84 * 4).reshape(84, 84, 4).astype(np.float32)
    return Image(vals)


def seeded_map(h, w, seed):
    return SaliencyMap(RngStream(seed).uniforms(h * w).reshape(h, w).astype(np.float32))


@pytest.fixture
def map_pair_84():
    return seeded_map(84, 84, 1), seeded_map(84, 84, 2)
