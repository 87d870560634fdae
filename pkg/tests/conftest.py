import glob
import os

import numpy as np
import pytest

from terrascout.engine import Dataset
from terrascout.synth import FractalTerrain, generate_corpus


@pytest.fixture(scope="session")
def terrain():
    return FractalTerrain(seed=11)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, terrain):
    """3x3 LAZ tiles, enough density for patch reconstruction."""
    out = tmp_path_factory.mktemp("corpus_small")
    manifest = generate_corpus(str(out), n_tiles=9, points_per_tile=4000,
                               seed=11, point_format=2, chunk_size=250,
                               terrain=terrain)
    return str(out), manifest


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    path, _manifest = small_corpus
    return Dataset.scan(sorted(glob.glob(os.path.join(path, "*.laz"))))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
