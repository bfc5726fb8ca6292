import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ergodiq.diagnostics import (EmpiricalMeasure, InsufficientData, envelope_dominates,
                                 exponential_tail_rate, fit_log_linear, fit_window,
                                 integrated_autocorr_time, lyapunov_envelope, permutation_control,
                                 reference_adequate, stopped_lyapunov_check, wasserstein_1d)
from ergodiq.rng import stream, streams, tag_code

samples = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60)


@given(samples, samples)
def test_w1_matches_scipy(a, b):
    assert np.isclose(wasserstein_1d(a, b), stats.wasserstein_distance(a, b), atol=1e-9)
    assert np.isclose(wasserstein_1d(a, b), wasserstein_1d(b, a), atol=1e-9)


def test_w1_closed_forms(rng):
    a = rng.standard_normal(1000)
    assert wasserstein_1d(a, a) == 0
    assert wasserstein_1d([0.0], [2.5]) == 2.5
    assert abs(wasserstein_1d(rng.standard_normal(100_000), 1 + rng.standard_normal(100_000)) - 1) < 0.05
    with pytest.raises(InsufficientData):
        EmpiricalMeasure([])
    with pytest.raises(ValueError):
        EmpiricalMeasure([np.nan])


def test_exact_exponential_is_recovered():
    t = np.linspace(0, 5, 51)
    f = fit_log_linear(t, means=np.exp(1.0 - 0.7 * t))
    assert np.isclose(f.rate, 0.7) and np.isclose(f.intercept, 1.0)
    assert f.method == "ols" and f.decaying
    assert envelope_dominates(f, t, np.exp(1.0 - 0.7 * t))


def test_bootstrap_band_coverage(rng):
    t = np.linspace(0, 2, 21)
    cover = 0
    for _ in range(100):
        X = np.exp(-1.5 * t)[:, None] * rng.lognormal(0, 0.3, (1, 200)) * rng.lognormal(0, 0.05, (21, 200))
        f = fit_log_linear(t, samples=X, bootstrap=200, rng=rng)
        cover += f.lo <= 1.5 <= f.hi
    assert cover >= 85


def test_degenerate_fit():
    t = np.linspace(0, 1, 11)
    f = fit_log_linear(t, means=np.zeros(11))
    assert f.degenerate and not f.decaying
    assert not envelope_dominates(f, t, np.zeros(11))


def test_resolved_span_cuts_at_floor():
    t = np.linspace(0, 10, 101)
    m = np.where(t <= 4, np.exp(-5 * t), 0.0)
    idx, t_lo = fit_window(t, m, discard=0.25, floor=1e-12, span="resolved")
    assert t[idx].max() <= 4 + 1e-12 and np.isclose(t_lo, 1.0)
    f = fit_log_linear(t, means=m, floor=1e-12, span="resolved")
    assert np.isclose(f.rate, 5.0)
    with pytest.raises(ValueError):
        fit_window(t, m, span="bogus")


def test_shuffled_series_has_no_rate(rng):
    t = np.linspace(0, 10, 201)
    rates = [permutation_control(t, np.exp(-0.5 * t), rng).rate for _ in range(50)]
    assert abs(np.mean(rates)) < 0.05


def test_exponential_tail_rate(rng):
    out = exponential_tail_rate(rng.exponential(0.5, 2000))
    assert out["lo"] <= 2.0 <= out["hi"] and out["ks_pvalue"] > 1e-3
    with pytest.raises(InsufficientData):
        exponential_tail_rate(np.zeros(20))


def test_autocorrelation_time_of_ar1(rng):
    phi, n = 0.8, 200_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    assert abs(integrated_autocorr_time(x) - (1 + phi) / (1 - phi)) < 0.6
    assert reference_adequate(x)["ok"]
    assert integrated_autocorr_time(np.ones(10)) == 1.0


def test_lyapunov_envelope():
    t = np.linspace(0, 1, 11)
    X = np.exp(-t)[:, None] * np.ones((1, 5)) + 0.1
    assert lyapunov_envelope(t, X, 1.0, 1.0, 0.2)["ok"]
    assert not lyapunov_envelope(t, 2 * X, 1.0, 1.0, 0.2)["ok"]


def test_stopped_lyapunov_uses_later_hits():
    t = np.arange(4.0)
    E = np.array([[5.0, 5.0], [1.0, 1.0], [3.0, 1.0], [1.0, 1.0]])
    rows = stopped_lyapunov_check(t, E, 5.0, 1.0, alphas=(1.0,), level=2.0)
    assert np.isclose(rows[0]["mean"], 0.5 * np.exp(-2.0) * 3.0) and rows[0]["ok"]


def test_streams_are_independent_and_reproducible():
    a = stream(7, 3, "w1").standard_normal(50_000)
    assert np.array_equal(a, stream(7, 3, "w1").standard_normal(50_000))
    for other in (stream(7, 4, "w1"), stream(7, 3, "u"), stream(8, 3, "w1")):
        b = other.standard_normal(50_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(a.size)
    assert len(streams(1, range(5), "x")) == 5
    assert tag_code("w1") != tag_code("w2")
