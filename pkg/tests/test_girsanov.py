import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergodiq.dynamics import Model, SolverConfig
from ergodiq.girsanov import (NovikovAccumulator, anticipation_audit, binding_drift, calibrate_C,
                              constant_drift_moments, girsanov_log_density, importance_identity,
                              novikov_threshold, novikov_window, second_moment_table)
from ergodiq.noise import CovarianceModel
from ergodiq.spectral import SpectralField


@pytest.mark.parametrize("h", [0.0, 0.5, 1.0])
def test_exponential_martingale_moments(h, rng):
    r = constant_drift_moments(h, rng, samples=100_000)
    assert abs(r["mean"] - 1) <= 4 * r["mean_se"]
    assert abs(r["second"] - np.exp(h ** 2)) <= 4 * r["second_se"]
    assert r["second_exact"] == np.exp(h ** 2)


def test_importance_weighting_recovers_driftless_expectation(rng):
    out = importance_identity(0.8, lambda X: np.tanh(X[-1]) + (X.max(axis=0) > 1.0), rng,
                              samples=100_000)
    assert out["ok"]


def test_log_density_shapes():
    dW = np.random.default_rng(0).standard_normal((10, 4, 3))
    assert np.all(girsanov_log_density(np.zeros_like(dW), dW, 0.1) == 0)
    assert girsanov_log_density(np.zeros(10), np.ones(10), 0.1) == 0
    assert girsanov_log_density(np.zeros((10, 4, 3)), dW, 0.1).shape == (4,)
    with pytest.raises(ValueError):
        girsanov_log_density(np.zeros((10, 3)), np.zeros((9, 3)), 0.1)


@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(1e-3, 1.0))
def test_log_density_single_step(h, dw, dt):
    assert np.isclose(girsanov_log_density([h], [dw], dt), h * dw - 0.5 * h * h * dt)


@given(st.lists(st.floats(0, 50), min_size=1, max_size=200), st.floats(0.01, 5.0))
def test_novikov_integral_never_exceeds_threshold(hsq, theta):
    acc = NovikovAccumulator(0.0, theta)
    for j, x in enumerate(hsq):
        acc.offer(x, j * 0.01, 0.01)
    assert acc.integral <= theta
    if acc.tripped:
        j = int(round(float(acc.tau) / 0.01))
        assert acc.integral + hsq[j] * 0.01 > theta
        assert np.isclose(acc.integral, 0.01 * sum(hsq[:j]))
    else:
        assert np.isclose(acc.integral, 0.01 * sum(hsq))


def test_novikov_trip_time_and_statuses():
    dt = 1e-3
    acc = NovikovAccumulator(3.0, 0.1)
    out = novikov_window([1.0] * 1000, acc, dt)
    assert out["status"] == "tripped" and abs(out["tau"] - 3.1) <= dt + 1e-12
    done = novikov_window([0.0] * 100, NovikovAccumulator(0.0, 0.1), dt)
    assert done["status"] == "completed" and done["integral"] == 0
    mixed = NovikovAccumulator(0.0, np.array([0.05, 1.0]))
    for j in range(100):
        mixed.offer(np.array([1.0, 1.0]), j * dt, dt)
    assert list(mixed.tripped) == [True, False]


def test_threshold_schedule():
    th = novikov_threshold(1.0, np.log(2.0), np.arange(5), 1.0)
    assert np.allclose(th, 2.0 * 0.5 ** np.arange(5))
    assert np.all(novikov_threshold(1.0, 10.0, np.arange(5), 1.0, floor=0.3) >= 0.3)


def test_second_moment_table_respects_bound(rng):
    theta = 0.5
    # untripped windows: log density of a drift with integral exactly theta
    ld = np.sqrt(theta) * rng.standard_normal(20000) - 0.5 * theta
    rows = second_moment_table(ld, np.full(ld.size, theta), np.zeros(ld.size, bool),
                               np.zeros(ld.size, int))
    assert rows[0]["ok"] and np.isclose(rows[0]["bound"], np.exp(2 * theta))
    assert abs(rows[0]["second_moment"] - np.exp(theta)) < 5 * rows[0]["se"]


def test_calibrate_quantile():
    assert calibrate_C(np.arange(11.0), 0.9) == 9.0
    with pytest.raises(ValueError):
        calibrate_C([np.nan])


def test_binding_drift_is_non_anticipative(ns_model, rng):
    b = ns_model.basis
    u0, ut0 = b.random(rng, (), 1.0, 0.3), b.random(rng, (), 1.0, 0.3)
    xi = rng.standard_normal((60, b.real_dim))
    out = anticipation_audit(ns_model, u0, ut0, xi, 30, rng)
    assert out["first_difference"] is None or out["first_difference"] > 30


@given(st.floats(0.01, 10.0), st.sampled_from([1.0, 1e-3]), st.integers(0, 2 ** 32 - 1))
def test_cgl_drift_bounded_by_weight(scale, sep, seed):
    # |h|^2 <= C_N Z uniformly in amplitude; the ratio stays O(1e-2) at these defaults
    from ergodiq.spectral import GalerkinBasis
    b = GalerkinBasis.cgl_dirichlet(64)
    m = Model(b, CovarianceModel.default(b, 8), SolverConfig(K=1.0))
    r = np.random.default_rng(seed)
    u = b.random(r, 20, scale=scale)
    v = u + sep * b.random(r, 20, scale=scale)
    ratio = binding_drift(m, SpectralField(b, u), SpectralField(b, v))["ratio"]
    assert np.all(np.isfinite(ratio)) and ratio.max() < 1.0


def test_ns_drift_vanishes_without_gain(ns, rng):
    m = Model(ns, CovarianceModel.default(ns, 8), SolverConfig(K=0.0))
    u = SpectralField(ns, ns.random(rng))
    v = SpectralField(ns, ns.random(rng))
    assert binding_drift(m, u, v)["hsq"] == 0
