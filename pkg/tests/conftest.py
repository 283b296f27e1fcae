import numpy as np
import pytest

from shapefit.pdm import PointDistributionModel, train_pdm
from shapefit.synth import GeneratorSpec, make_training_shapes


@pytest.fixture(scope="session")
def generator_spec():
    return GeneratorSpec(seed=3)


@pytest.fixture(scope="session")
def training_corpus(generator_spec):
    return make_training_shapes(generator_spec, 300)


@pytest.fixture(scope="session")
def face_model(training_corpus):
    shapes, _ = training_corpus
    return train_pdm(shapes, variance_retained=0.95)


def random_model(n_points: int = 10, n_modes: int = 6, seed: int = 0) -> PointDistributionModel:
    """Small synthetic model with orthonormal combined basis and O(1) eigenvalues."""
    rng = np.random.default_rng(seed)
    two_n = 2 * n_points
    q, _ = np.linalg.qr(rng.standard_normal((two_n, 4 + n_modes)))
    eigs = np.sort(rng.uniform(0.5, 2.0, size=n_modes))[::-1]
    mean = rng.standard_normal(two_n)
    return PointDistributionModel(mean, q[:, :4], q[:, 4:], eigs)
