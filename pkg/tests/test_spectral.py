import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergodiq import oracles
from ergodiq.spectral import (GalerkinBasis, Projector, SpectralField, SubcriticalityError,
                              cgl_power_term, check_subcritical, grid_l2sq, h1sq, inner,
                              lp_power, ns_advection, ns_nonlinearity)


def test_lattice_sizes(ns):
    assert ns.size == 120
    assert ns.low_real_dim(8) == 44
    assert np.isclose(ns.mu[0], 4 * np.pi ** 2)
    assert np.all(np.diff(ns.mu) >= 0)


def test_cgl_eigenvalues(cgl):
    assert np.allclose(cgl.mu, (np.arange(1, 65) * np.pi) ** 2)


def test_parseval(basis, rng):
    u = basis.random(rng, 1000)
    err = np.abs(grid_l2sq(basis, u) - np.sum(np.abs(u) ** 2, axis=-1)) / np.sum(np.abs(u) ** 2, -1)
    assert err.max() < 1e-10


def test_projector_algebra(basis, rng):
    for N in (1, 3, 8):
        pr = Projector(basis, N)
        u = basis.random(rng, 1000)
        assert np.abs(pr.P(pr.P(u)) - pr.P(u)).max() < 1e-10
        assert np.abs(pr.P(u) + pr.Q(u) - u).max() < 1e-10
        assert np.abs(inner(pr.P(u), pr.Q(u))).max() < 1e-10


def test_spectral_gap(basis, rng):
    for N in (1, 4, 8):
        q = Projector(basis, N).Q(basis.random(rng, 1000))
        gap = basis.gap_eigenvalue(N)
        assert np.all(h1sq(basis, q) >= gap * np.sum(np.abs(q) ** 2, -1) * (1 - 1e-10))


def test_advection_orthogonal(ns, rng):
    u = ns.random(rng, 1000)
    assert np.abs(inner(u, ns_advection(ns, u))).max() < 1e-10


def test_advection_matches_convolution_small_grid(rng):
    b = GalerkinBasis.ns_torus(8)
    for _ in range(10):
        u = b.random(rng)
        assert np.abs(ns_advection(b, u) - oracles.ns_convolution(b, u)).max() < 1e-10


def test_single_mode_has_no_self_interaction(ns):
    for i in range(0, ns.size, 7):
        u = np.zeros(ns.size)
        u[i] = 1.3
        assert np.abs(ns_advection(ns, u)).max() < 1e-12


def test_zero_field(ns, cgl):
    assert not np.any(ns_advection(ns, ns.zeros()))
    assert not np.any(cgl_power_term(cgl, cgl.zeros(), 1.0))


@given(st.lists(st.floats(-3, 3), min_size=240, max_size=240))
def test_real_round_trip(vals):
    b = GalerkinBasis.cgl_dirichlet(120)
    x = np.asarray(vals)
    assert np.array_equal(b.to_real(b.from_real(x)), x)


@given(st.floats(0.1, 3.0))
def test_advection_is_quadratic(scale):
    b = GalerkinBasis.ns_torus(16)
    u = b.random(np.random.default_rng(1))
    assert np.allclose(ns_advection(b, scale * u), scale ** 2 * ns_advection(b, u), atol=1e-10)


def test_cgl_first_mode_cubic_coefficient(cgl):
    # the first sine mode projects onto itself with factor 3/2 under |u|^2 u
    for c in (1.0, 0.3 + 0.4j, -2j):
        e = np.zeros(cgl.size, complex)
        e[0] = c
        F = cgl_power_term(cgl, e, 1.0)
        assert abs(F[0] - 1.5 * abs(c) ** 2 * c) < 1e-12
        assert abs(F[1]) < 1e-12 and abs(F[2] - (-0.5 * abs(c) ** 2 * c)) < 1e-12


def test_cgl_power_matches_quadrature(cgl, rng):
    for sigma in (1.0, 0.5):
        u = np.zeros(cgl.size, complex)
        u[:10] = cgl.random(rng)[:10]
        ref = oracles.cgl_power_quadrature(u, sigma)
        tol = 1e-8 if sigma == 1.0 else 1e-3
        assert np.abs(cgl_power_term(cgl, u, sigma) - ref).max() < tol


def test_norms_of_first_sine_mode(cgl):
    e = np.zeros(cgl.size, complex)
    e[0] = 1.0
    assert np.isclose(np.sqrt(h1sq(cgl, e)), np.pi)
    assert np.isclose(lp_power(cgl, e, 4), 1.5)
    assert np.isclose(oracles.lp_quadrature(e[:4], 4), 1.5)


def test_subcriticality():
    check_subcritical(1.0)
    for bad in (2.0, 3.0, 0.0, -1.0):
        with pytest.raises(SubcriticalityError):
            check_subcritical(bad)


def test_field_size_checked(ns):
    with pytest.raises(ValueError):
        SpectralField(ns, np.zeros(7))
    u = SpectralField(ns, np.ones(ns.size))
    assert np.array_equal(ns_nonlinearity(u).coef, ns_advection(ns, u.coef))
    assert np.array_equal((u - u).coef, np.zeros(ns.size))
