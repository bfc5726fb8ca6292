"""Acceptance criteria, one test each.

Every test prints ``PASS criterion N: ...`` or ``FAIL criterion N: ...`` to the
terminal (capture is bypassed) and then asserts.  Tolerances and runtime
limits are pinned below.  Run with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""
import itertools
import json
import sys
import time

import numpy as np
import pytest
from scipy import stats

from ergodiq import cli, oracles
from ergodiq import config as C
from ergodiq.coupling import (DiscreteMeasure, gaussian_meet_probability, ladder_oracle,
                              maximal_coupling_discrete, maximal_coupling_gaussian_step, replay,
                              total_variation)
from ergodiq.experiments import foias_prodi, girsanov_check, lyapunov, mixing
from ergodiq.noise import CovarianceModel
from ergodiq.rng import stream
from ergodiq.spectral import (GalerkinBasis, Projector, grid_l2sq, h1sq, inner, l2sq,
                              ns_advection)

SPECTRAL_TOL = 1e-10
ROUND_TRIP_TOL = 1e-12
SE_MULTIPLE = 4.0
MEET_TOL = 0.01
ENVELOPE_SE = 3.0
LINEAR_RATE_TOL = 0.10
MIN_COUPLING_PROB = 0.05
CHI2_PVALUE = 1e-3
LIMIT_S = {1: 60, 2: 10, 3: 300, 4: 60, 5: 600, 6: 600, 7: 900, 8: 1800}

SEED = 20240601


@pytest.fixture
def verdict(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(n: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
        else:
            print(line, flush=True)
        assert ok, line
    return emit


def _rng(tag):
    return stream(SEED, 0, "acceptance-" + tag)


# ----------------------------------------------------------------------- 1
def test_criterion_1_spectral_invariants(verdict):
    t0 = time.perf_counter()
    r = _rng("spectral")
    worst = {}
    for b in (GalerkinBasis.ns_torus(16), GalerkinBasis.cgl_dirichlet(64)):
        u = b.random(r, 1000)
        pr = Projector(b, 8)
        P, Q = pr.P(u), pr.Q(u)
        gap = b.gap_eigenvalue(8)
        worst[f"{b.kind} parseval"] = float(np.max(np.abs(grid_l2sq(b, u) - l2sq(u)) / l2sq(u)))
        worst[f"{b.kind} projector"] = float(max(np.abs(pr.P(P) - P).max(),
                                                 np.abs(P + Q - u).max(),
                                                 np.abs(inner(P, Q)).max()))
        worst[f"{b.kind} gap"] = float(np.max(np.maximum(gap * l2sq(Q) - h1sq(b, Q), 0.0)
                                              / l2sq(Q)))
        if b.kind == "ns":
            worst["ns (u,B(u))"] = float(np.abs(inner(u, ns_advection(b, u))).max())
    small = GalerkinBasis.ns_torus(8)
    worst["convolution oracle 8x8"] = max(
        float(np.abs(ns_advection(small, v) - oracles.ns_convolution(small, v)).max())
        for v in small.random(r, 20))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < SPECTRAL_TOL and dt < LIMIT_S[1]
    verdict(1, ok, f"max defect {max(worst.values()):.1e} < {SPECTRAL_TOL:.0e} "
                   f"({', '.join(f'{k} {v:.1e}' for k, v in worst.items())}); {dt:.1f}s")


# ----------------------------------------------------------------------- 2
def test_criterion_2_h1_round_trip(verdict):
    t0 = time.perf_counter()
    r = _rng("h1")
    worst = {}
    for b in (GalerkinBasis.ns_torus(16), GalerkinBasis.cgl_dirichlet(64)):
        for name, noise in (("additive", CovarianceModel.default(b, 8)),
                            ("perturbed", CovarianceModel.perturbed(b, 8, 0.1, seed=0))):
            u, v = b.random(r, 1000, scale=2.0), b.random(r, 1000)
            back = noise.noise_coef(u, noise.g_real(u, b.to_real(v)))
            worst[f"{b.kind}/{name}"] = float(np.abs(back - Projector(b, 8).P(v)).max())
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < ROUND_TRIP_TOL and dt < LIMIT_S[2]
    verdict(2, ok, f"max |phi g v - P_N v| {max(worst.values()):.1e} < {ROUND_TRIP_TOL:.0e} "
                   f"({', '.join(f'{k} {v:.1e}' for k, v in worst.items())}); {dt:.1f}s")


# ----------------------------------------------------------------------- 3
def test_criterion_3_discrete_maximal_coupling(verdict):
    t0 = time.perf_counter()
    r = _rng("discrete")
    draws, worst_z, chi_fail = 100_000, 0.0, 0
    for i in range(1000):
        k = int(r.integers(2, 7))
        a = DiscreteMeasure(r.dirichlet(np.ones(k)))
        b = DiscreteMeasure(r.dirichlet(np.ones(k)))
        z1, z2 = maximal_coupling_discrete(a, b, r, draws)
        tv = total_variation(a, b)
        se = np.sqrt(max(tv * (1 - tv), 1.0 / draws) / draws)
        worst_z = max(worst_z, abs(np.mean(z1 != z2) - tv) / se)
        if i < 50:      # chi-square screen of both marginals
            for z, m in ((z1, a), (z2, b)):
                keep = m.p * draws >= 5
                obs = np.bincount(z, minlength=k)
                exp = m.p * draws
                o = np.append(obs[keep], obs[~keep].sum())
                e = np.append(exp[keep], exp[~keep].sum())
                o, e = o[e > 0], e[e > 0]
                chi_fail += stats.chisquare(o, e).pvalue < CHI2_PVALUE
    dt = time.perf_counter() - t0
    ok = worst_z <= SE_MULTIPLE and chi_fail == 0 and dt < LIMIT_S[3]
    verdict(3, ok, f"1000 pairs x 1e5 draws, worst |P(Z1!=Z2) - TV| = {worst_z:.2f} SE "
                   f"(limit {SE_MULTIPLE:g}); chi-square rejections {chi_fail}/100; {dt:.0f}s")


# ----------------------------------------------------------------------- 4
def test_criterion_4_gaussian_step_coupling(verdict):
    t0 = time.perf_counter()
    r = _rng("gauss")
    dt, dim = 0.01, 4
    worst_gap, moments_ok = 0.0, True
    for sep in np.linspace(0.1, 4.0, 10):
        m1 = np.zeros(dim)
        m1[0] = sep * np.sqrt(dt)
        m2 = np.zeros(dim)
        x, y, met = maximal_coupling_gaussian_step(m1, m2, dt, r, size=100_000)
        exact = 2 * stats.norm.cdf(-np.linalg.norm(m1 - m2) / (2 * np.sqrt(dt)))
        assert np.isclose(exact, gaussian_meet_probability(m1, m2, dt))
        worst_gap = max(worst_gap, abs(met.mean() - exact))
        for z, m in ((x, m1), (y, m2)):
            s = (z - m) / np.sqrt(dt)
            n = s.shape[0]
            moments_ok &= bool(np.all(np.abs(s.mean(0)) < SE_MULTIPLE / np.sqrt(n)))
            moments_ok &= bool(np.all(np.abs(s.var(0) - 1) < SE_MULTIPLE * np.sqrt(2 / n)))
            moments_ok &= stats.kstest(s[:, 0], "norm").pvalue > CHI2_PVALUE
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= MEET_TOL and moments_ok and elapsed < LIMIT_S[4]
    verdict(4, ok, f"worst meet-probability gap {worst_gap:.4f} (limit {MEET_TOL}) over 10 "
                   f"separations; marginal moments {'ok' if moments_ok else 'off'}; "
                   f"{elapsed:.1f}s")


# ----------------------------------------------------------------------- 5
def test_criterion_5_girsanov(verdict):
    t0 = time.perf_counter()
    out = girsanov_check(C.load(preset="ns"))
    rep = out.report
    const = ", ".join(f"h={r['h']:g}: mean {r['mean']:.4f}, second {r['second']:.3f} "
                      f"vs {r['second_exact']:.3f}" for r in rep["constant"])
    pipe = rep["pipeline"]
    worst = max((r["second_moment"] / (r["bound"] * (1 + 4 * r["se"])) for r in pipe),
                default=float("nan"))
    dt = time.perf_counter() - t0
    ok = (out.verdicts["martingale_mean"] and out.verdicts["second_moment"]
          and out.verdicts["pipeline_second_moment"] and bool(pipe) and dt < LIMIT_S[5])
    first = next((r for r in pipe if r["age"] == 0), None)
    age0 = (f"age 0: {first['second_moment']:.3f} <= {first['bound']:.3f} over "
            f"{first['windows']} windows; " if first else "")
    verdict(5, ok, f"{const}; pipeline {age0}worst second-moment/bound {worst:.3f} over "
                   f"{sum(r['windows'] for r in pipe)} untripped windows; {dt:.0f}s")


# ----------------------------------------------------------------------- 6
@pytest.mark.parametrize("preset", ["ns", "cgl"])
def test_criterion_6_lyapunov_envelope(verdict, preset):
    t0 = time.perf_counter()
    cfg = C.load(preset=preset)
    out = lyapunov(cfg)
    dt = time.perf_counter() - t0
    rep = out.report
    ok = out.verdicts["envelope"] and cfg["run"]["paths"] == 200 and dt < LIMIT_S[6]
    verdict(6, ok, f"{preset}: 200-path mean |u|^2 below exp(-rate t)|u0|^2 + C1 + "
                   f"{ENVELOPE_SE:g} SE everywhere, C1 {rep['C1']:.4f}, worst margin "
                   f"{rep['worst_margin']:.3f}; {dt:.0f}s")


# ----------------------------------------------------------------------- 7
@pytest.mark.parametrize("preset", ["ns", "cgl"])
def test_criterion_7_foias_prodi(verdict, preset):
    t0 = time.perf_counter()
    out = foias_prodi(C.load(preset=preset))
    dt = time.perf_counter() - t0
    rep = out.report
    f, c, lin = rep["fit"], rep["control_fit"], rep["linear_fit"]
    binding_ok = bool(f["rate"] > 0 and f["lo"] > 0)
    control_ok = bool(c["degenerate"] or c["lo"] <= 0)
    linear_ok = rep["linear_relative_error"] <= LINEAR_RATE_TOL
    ok = binding_ok and control_ok and linear_ok and dt < LIMIT_S[7]
    verdict(7, ok, f"{preset} (K={rep['K']:.4g}, N={rep['N']}): binding rate {f['rate']:.3f} "
                   f"band [{f['lo']:.3f}, {f['hi']:.3f}] {'ok' if binding_ok else 'bad'}; "
                   f"control rate {c['rate']:.4f} band [{c['lo']:.4f}, {c['hi']:.4f}] "
                   f"{'ok' if control_ok else 'bad'}; linear rate {lin['rate']:.2f} vs "
                   f"{rep['linear_target']:.2f} ({100 * rep['linear_relative_error']:.1f}%, "
                   f"limit {100 * LINEAR_RATE_TOL:.0f}%); {dt:.0f}s")


# ----------------------------------------------------------------------- 8
def test_criterion_8_end_to_end_mixing(verdict):
    t0 = time.perf_counter()
    cfg = C.load(preset="ns")
    assert cfg["run"]["paths"] == 200 and cfg["run"]["windows"] == 40
    out = mixing(cfg)
    dt = time.perf_counter() - t0
    rep = out.report
    f, cp = rep["fit"], rep["coupling_probability"]
    ok = (f["rate"] > 0 and f["lo"] > 0 and rep["envelope_dominates"]
          and cp["p0_hat"] >= MIN_COUPLING_PROB and dt < LIMIT_S[8])
    verdict(8, ok, f"rate {f['rate']:.3f} band [{f['lo']:.3f}, {f['hi']:.3f}]; envelope "
                   f"dominates {rep['envelope_dominates']}; per-entry coupling probability "
                   f"{cp['p0_hat']:.3f} over {cp['entries']} entries (min "
                   f"{MIN_COUPLING_PROB}); {dt:.0f}s")


# ----------------------------------------------------------------------- 9
def test_criterion_9_ladder_bookkeeping(verdict):
    bad = 0
    count = 0
    for glued in itertools.product([False, True], repeat=6):
        glued = list(glued)
        for ball in ([True] * 7, [False] * 7, [glued[0]] + glued, [not g for g in glued] + [True]):
            led, ref = replay(glued, ball), ladder_oracle(glued, ball)
            count += 1
            bad += not (led.l0 == ref["l0"] and led.delta == ref["delta"]
                        and led.sigma_full == ref["sigma"] and led.k0 == ref["k0"])
    verdict(9, bad == 0, f"64 flag sequences x 4 ball patterns, {count - bad}/{count} match "
                         f"the reference l0, delta, sigma and k0")


# ---------------------------------------------------------------------- 10
def test_criterion_10_determinism(verdict, tmp_path):
    argv = ["mixing", "--paths", "20", "--horizon", "10", "--set", "coupling.pilot_paths=20"]
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli.main(argv + ["--out", str(d)]) for d in dirs]
    names = sorted(p.name for p in dirs[0].glob("*.csv"))
    same = [n for n in names if (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()]
    hashes = {json.loads((d / "manifest.json").read_text())["config_hash"] for d in dirs}
    ok = bool(names) and same == names and len(hashes) == 1 and codes[0] == codes[1]
    verdict(10, ok, f"two mixing runs, {len(same)}/{len(names)} CSV artifacts byte-identical "
                    f"({', '.join(names)})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
