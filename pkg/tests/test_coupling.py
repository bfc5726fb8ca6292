import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ergodiq.coupling import (INF, CouplingLedger, CouplingSettings, DiscreteMeasure,
                              WindowStreams, advance_ladder, density_ratio_tv_bound,
                              gaussian_meet_probability, ladder_oracle, maximal_coupling_discrete,
                              maximal_coupling_gaussian_step, mixing_experiment,
                              overlap_lower_bound, reflection_coupling, replay, total_variation,
                              triplet_step)

probs = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6)


def _pair(a, b):
    n = min(len(a), len(b))
    a, b = np.asarray(a[:n]), np.asarray(b[:n])
    return DiscreteMeasure(a / a.sum()), DiscreteMeasure(b / b.sum())


# ------------------------------------------------------------- discrete laws
def test_textbook_example(rng):
    a, b = DiscreteMeasure([0.8, 0.2]), DiscreteMeasure([0.4, 0.6])
    z1, z2 = maximal_coupling_discrete(a, b, rng, 200_000)
    assert total_variation(a, b) == pytest.approx(0.4)
    assert abs(np.mean(z1 == z2) - 0.6) < 4 * np.sqrt(0.24 / z1.size)
    assert abs(np.mean((z1 == z2) & (z1 == 1)) - 0.2) < 0.01


def test_degenerate_pairs(rng):
    a = DiscreteMeasure([0.3, 0.7])
    z1, z2 = maximal_coupling_discrete(a, a, rng, 1000)
    assert np.array_equal(z1, z2)
    d1, d2 = maximal_coupling_discrete(DiscreteMeasure([1, 0]), DiscreteMeasure([0, 1]), rng, 1000)
    assert not np.any(d1 == d2)
    assert isinstance(maximal_coupling_discrete(a, a, rng)[0], int)


@given(probs, probs, st.integers(0, 2 ** 32 - 1))
def test_mismatch_rate_equals_tv(pa, pb, seed):
    a, b = _pair(pa, pb)
    z1, z2 = maximal_coupling_discrete(a, b, np.random.default_rng(seed), 20_000)
    tv = total_variation(a, b)
    se = np.sqrt(max(tv * (1 - tv), 1e-4) / z1.size)
    assert abs(np.mean(z1 != z2) - tv) < 5 * se


def test_marginals_pass_chi_square(rng):
    a = DiscreteMeasure([0.1, 0.2, 0.3, 0.4])
    b = DiscreteMeasure([0.4, 0.3, 0.2, 0.1])
    z1, z2 = maximal_coupling_discrete(a, b, rng, 100_000)
    for z, m in ((z1, a), (z2, b)):
        obs = np.bincount(z, minlength=4)
        assert stats.chisquare(obs, m.p * z.size).pvalue > 1e-3


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure([-0.1, 1.1])
    with pytest.raises(ValueError):
        total_variation(DiscreteMeasure([1.0]), DiscreteMeasure([0.5, 0.5]))


@given(probs, probs)
def test_squared_density_bounds_tv(pa, pb):
    a, b = _pair(pa, pb)
    second = float(np.sum(a.p ** 2 / b.p))
    assert total_variation(a, b) <= density_ratio_tv_bound(second) + 1e-12


@given(probs, probs, st.sets(st.integers(0, 5), min_size=1), st.sampled_from([2.0, 4.0]))
def test_overlap_lower_bound(pa, pb, event, p):
    a, b = _pair(pa, pb)
    ev = sorted(i for i in event if i < a.n) or [0]
    lhs, rhs, applies = overlap_lower_bound(a, b, ev, p)
    if applies:
        assert lhs >= rhs - 1e-12
    whole = overlap_lower_bound(a, b, range(a.n), p)
    assert whole[2] and whole[0] >= whole[1] - 1e-12


def test_overlap_bound_fails_outside_its_condition():
    lhs, rhs, applies = overlap_lower_bound(DiscreteMeasure([0.1, 0.9]),
                                            DiscreteMeasure([0.9, 0.1]), [0], 2.0)
    assert not applies and lhs < rhs


# ------------------------------------------------------------ Gaussian steps
@pytest.mark.parametrize("sep", np.linspace(0.2, 4.0, 10))
def test_gaussian_meet_probability(sep, rng):
    dt = 0.01
    m1 = np.array([sep * np.sqrt(dt), 0.0])
    x, y, met = maximal_coupling_gaussian_step(m1, np.zeros(2), dt, rng, size=100_000)
    assert abs(met.mean() - gaussian_meet_probability(m1, np.zeros(2), dt)) < 0.01
    assert np.all(x[met] == y[met])
    for z, m in ((x, m1), (y, np.zeros(2))):
        zs = (z - m) / np.sqrt(dt)
        assert np.all(np.abs(zs.mean(0)) < 4 / np.sqrt(zs.shape[0]))
        assert np.allclose(zs.var(0), 1, atol=0.02)


def test_two_sided_formula():
    assert gaussian_meet_probability([0.2], [0.0], 0.01) == pytest.approx(2 * stats.norm.cdf(-1))
    assert gaussian_meet_probability([0.3], [0.3], 0.01) == 1.0


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-20, 0))
def test_reflection_preserves_distance_to_mean(m1, xi, log_u):
    m1, xi = np.asarray(m1), np.asarray(xi)
    x, y, met = reflection_coupling(m1, np.zeros(3), 0.04, xi, np.float64(log_u))
    # either they meet or y is the mirror image of x across the bisecting plane
    assert met or np.isclose(np.linalg.norm(y), np.linalg.norm(x - m1))


def test_gaussian_step_rejects_anisotropic():
    with pytest.raises(ValueError):
        maximal_coupling_gaussian_step([0.0], [1.0], 0.01, np.random.default_rng(), var2=0.02)


# -------------------------------------------------------------------- ladder
FLAGS = list(itertools.product([False, True], repeat=6))


@pytest.mark.parametrize("glued", FLAGS)
def test_ladder_matches_definitions(glued):
    glued = list(glued)
    patterns = [[True] * 7, [False] * 7, [glued[0]] + glued, [not g for g in glued] + [True]]
    for ball in patterns:
        led, ref = replay(glued, ball), ladder_oracle(glued, ball)
        assert led.l0 == ref["l0"]
        assert led.delta == ref["delta"]
        assert led.sigma_full == ref["sigma"]
        assert led.k0 == ref["k0"] and led.l0_inf == ref["l0_inf"]


def test_ladder_worked_example():
    led = replay([True, True, True, False, True, True, True, True],
                 [True, True, True, True, False, True, True, True, True])
    assert led.l0 == [0, 0, 0, 0, INF, 5, 5, 5, 5]
    assert led.delta == [0, 5] and led.sigma_full == [4, INF]
    assert led.k0 == 1 and led.l0_inf == 5
    assert led.coupling_time == 4
    assert [e["held"] for e in led.entries(1)] == [False, True]


def test_ledger_closes_once():
    led = CouplingLedger(T=1.0, ball_radius=1.0)
    advance_ladder(led, True, 0.5)
    led.close(0.5)
    led.close(0.5)
    assert led.l0 == [0, 0]
    with pytest.raises(ValueError):
        advance_ladder(led, True, 0.5)
    with pytest.raises(ValueError):
        replay([True], [True])


# -------------------------------------------------------------------- engine
def test_settings_validation():
    CouplingSettings("increment", 0.0, 0.0)
    with pytest.raises(ValueError):
        CouplingSettings("bogus")
    with pytest.raises(ValueError):
        CouplingSettings("window", -1.0)


def test_streams_are_reproducible():
    a = WindowStreams.open(7, range(4))
    b = WindowStreams.open(7, range(4)).subset([1, 3])
    assert np.array_equal(a.w1[1].standard_normal(5), b.w1[0].standard_normal(5))


@pytest.mark.parametrize("mode", ["window", "increment", "forced"])
def test_identical_starts_stay_glued(ns_model, mode, rng):
    u = ns_model.basis.random(rng, (), 1.0, 0.3)
    st_ = CouplingSettings(mode, 5.0, 10.0)
    rep = mixing_experiment(ns_model, u, u, paths=4, windows=2, seed=1, settings=st_,
                            record_every=20, fit=True)
    assert np.max(rep.dist) == 0 and np.max(rep.dist_fine) == 0
    assert rep.glued.all() and rep.fit.degenerate


def test_triplet_window_marginal_drivers(ns_model, rng):
    b = ns_model.basis
    P = 6
    u1 = np.broadcast_to(b.random(rng, (), 1.0, 0.3), (P, b.size)).copy()
    u2 = np.broadcast_to(b.random(rng, (), 1.0, 0.3), (P, b.size)).copy()
    out = triplet_step(ns_model, u1, u2, np.full(P, 5.0), WindowStreams.open(3, range(P)),
                       mode="window")
    assert out["u2"].shape == (P, b.size)
    assert np.all(out["integral"] <= 5.0 + 1e-12)
    assert np.all(out["glued"] <= ~out["tripped"])
    glued = out["glued"]
    assert np.array_equal(out["ut"][glued], out["u2"][glued])


def test_chunking_does_not_change_results(ns_model, rng):
    b = ns_model.basis
    u1, u2 = b.random(rng, (), 1.0, 0.3), b.random(rng, (), 1.0, 0.3)
    st_ = CouplingSettings("increment", 5.0, 10.0)
    r1, r2 = (mixing_experiment(ns_model, u1, u2, paths=6, windows=2, seed=9, settings=st_,
                                fit=False, chunk_size=c) for c in (6, 4))
    assert np.array_equal(r1.dist, r2.dist) and np.array_equal(r1.glued, r2.glued)


def test_noise_off_distance_contracts_at_scheme_rate(ns_model, rng):
    b = ns_model.basis
    a, c = 1e-3 * b.random(rng), 1e-3 * b.random(rng)
    rep = mixing_experiment(ns_model, a, c, paths=2, windows=1, seed=1, noise_off=True,
                            settings=CouplingSettings("increment", 5.0, 10.0), fit=False,
                            record_every=1)
    t, d = rep.distance_series()
    slope = -np.polyfit(t, np.log(d[:, 0] ** 2), 1)[0]
    cfg = ns_model.cfg
    assert slope >= 2 * np.log1p(cfg.dt * cfg.nu * ns_model.mu1) / cfg.dt * (1 - 1e-3)
