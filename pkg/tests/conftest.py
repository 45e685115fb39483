import numpy as np
import pytest

from fleetslam import geometry as geo


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, scale=1.0):
    return geo.Pose(geo.random_rotation(rng), rng.normal(scale=scale, size=3))


def poses_close(a, b, atol=1e-9):
    return np.allclose(a.rotation, b.rotation, atol=atol) and np.allclose(
        a.translation, b.translation, atol=atol
    )


def graphs_equal(a, b, atol=1e-9):
    if len(a.measurements) != len(b.measurements):
        return False
    for ma, mb in zip(a.measurements, b.measurements):
        if (ma.key_from, ma.key_to, ma.kind) != (mb.key_from, mb.key_to, mb.kind):
            return False
        if not poses_close(ma.transform, mb.transform, atol):
            return False
        if not np.allclose([ma.kappa, ma.tau], [mb.kappa, mb.tau], rtol=1e-9):
            return False
    return True
