import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ergodiq.dynamics import Model, SolverConfig
from ergodiq.noise import CovarianceModel
from ergodiq.spectral import GalerkinBasis

settings.register_profile("ergodiq", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ergodiq")


@pytest.fixture(scope="session")
def ns():
    return GalerkinBasis.ns_torus(16)


@pytest.fixture(scope="session")
def cgl():
    return GalerkinBasis.cgl_dirichlet(64)


@pytest.fixture(params=["ns", "cgl"], scope="session")
def basis(request, ns, cgl):
    return ns if request.param == "ns" else cgl


@pytest.fixture(scope="session")
def ns_model(ns):
    return Model(ns, CovarianceModel.default(ns, 8), SolverConfig())


@pytest.fixture(scope="session")
def cgl_model(cgl):
    return Model(cgl, CovarianceModel.default(cgl, 8), SolverConfig(K=1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
