import numpy as np
import pytest

from braincascade.volume import Kind, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mask(data, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(data, dtype=np.uint8), spacing, Kind.MASK)


def prob(data, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(data, dtype=np.float32), spacing, Kind.PROBABILITY)


def intensity(data, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(data, dtype=np.float32), spacing, Kind.INTENSITY)


def random_mask(rng, dims, p=0.5) -> Volume:
    return mask(rng.random(dims) < p)
