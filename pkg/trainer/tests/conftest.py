import numpy as np
import pytest


@pytest.fixture()
def rng():
    return np.random.default_rng(99)


def random_batch(rng, n, with_rgb=True, res=96, out=64):
    inputs = rng.normal(0, 0.1, (n, 8, res, res)).astype(np.float32)
    if not with_rgb:
        inputs[:, 2:8] = 0.0
    targets = rng.normal(0, 0.1, (n, 4, out, out)).astype(np.float32)
    targets[:, 1:4] = rng.random((n, 3, out, out))
    masks = (rng.random((n, 4, out, out)) < 0.9).astype(np.float32)
    if not with_rgb:
        masks[:, 1:4] = 0.0
    return inputs, targets, masks
