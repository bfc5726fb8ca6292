"""Oracle and invariant checks behind ``ergodiq selftest``.

Each check returns ``(ok, detail)``.  Checks tagged slow are skipped with
``quick=True``.
"""
from __future__ import annotations

import itertools
import time

import numpy as np
from scipy import stats

from . import oracles
from .coupling.engine import CouplingSettings, mixing_experiment
from .coupling.ladder import INF, ladder_oracle, replay
from .coupling.primitives import (DiscreteMeasure, gaussian_meet_probability,
                                  maximal_coupling_discrete, maximal_coupling_gaussian_step,
                                  overlap_lower_bound, total_variation)
from .diagnostics import (envelope_dominates, fit_log_linear, foias_prodi_statistic,
                          permutation_control, wasserstein_1d)
from .dynamics import Model, SolverConfig, run_coupled_pair
from .girsanov import (NovikovAccumulator, constant_drift_moments, girsanov_log_density,
                       importance_identity, novikov_threshold)
from .noise import CovarianceModel, Modulation, WienerIncrement, lipschitz_witness, witness_pairs
from .rng import stream, streams
from .spectral import (GalerkinBasis, Projector, cgl_power_term, grid_l2sq, h1sq, inner, l2sq,
                       lp_power, ns_advection)

CHECKS = []


def check(slow: bool = False):
    def deco(fn):
        CHECKS.append((fn.__name__, fn, slow))
        return fn
    return deco


def _ns():
    return GalerkinBasis.ns_torus(16)


def _cgl(modes=64):
    return GalerkinBasis.cgl_dirichlet(modes)


def _rng(tag):
    return stream(0, 0, "selftest-" + tag)


# ------------------------------------------------------------------ spectral
@check()
def parseval():
    r = _rng("parseval")
    worst = 0.0
    for b in (_ns(), _cgl()):
        u = b.random(r, 200)
        worst = max(worst, float(np.max(np.abs(grid_l2sq(b, u) - l2sq(u)) / l2sq(u))))
    return worst < 1e-10, f"max relative error {worst:.2e}"


@check()
def projector_algebra():
    r = _rng("proj")
    worst = 0.0
    for b in (_ns(), _cgl()):
        pr = Projector(b, 8)
        u = b.random(r, 200)
        worst = max(worst, np.abs(pr.P(pr.P(u)) - pr.P(u)).max(), np.abs(pr.P(u) + pr.Q(u) - u).max(),
                    np.abs(inner(pr.P(u), pr.Q(u))).max())
        gap = b.gap_eigenvalue(8)
        q = pr.Q(u)
        worst = max(worst, float(np.max(np.maximum(gap * l2sq(q) - h1sq(b, q), 0.0))))
    return worst < 1e-10, f"max defect {worst:.2e}"


@check()
def advection_orthogonal():
    b = _ns()
    u = b.random(_rng("orth"), 1000)
    v = np.abs(inner(u, ns_advection(b, u))).max()
    return v < 1e-10, f"max |(u, B(u))| = {v:.2e}"


@check()
def advection_convolution_oracle():
    b = _ns()
    r = _rng("conv")
    worst = 0.0
    fields = [b.random(r) for _ in range(8)]
    two = np.zeros(b.size)
    ks = [tuple(k) for k in b.wavevectors]
    two[2 * ks.index((1, 0))] = two[2 * ks.index((0, 1))] = 1.0
    for u in fields + [two]:
        worst = max(worst, np.abs(ns_advection(b, u) - oracles.ns_convolution(b, u)).max())
    single = np.zeros(b.size)
    single[2 * ks.index((2, 1))] = 1.0
    s = np.abs(ns_advection(b, single)).max()
    return worst < 1e-10 and s < 1e-12, f"oracle gap {worst:.2e}, single-mode |B| {s:.2e}"


@check()
def cgl_power_oracles():
    b = _cgl()
    c = 0.7 - 0.4j
    e = np.zeros(b.size, complex)
    e[0] = c
    F = (1 + 1j) * cgl_power_term(b, e, 1.0)
    exact = abs(F[0] - (1 + 1j) * abs(c) ** 2 * c * 1.5)
    u = np.zeros(b.size, complex)
    u[:8] = b.random(_rng("cgl8"))[:8]
    quad = np.abs(cgl_power_term(b, u, 1.0) - oracles.cgl_power_quadrature(u, 1.0)).max()
    e1 = np.zeros(b.size, complex)
    e1[0] = 1.0
    nrm = (abs(l2sq(e1) - 1), abs(np.sqrt(h1sq(b, e1)) - np.pi), abs(lp_power(b, e1, 4) - 1.5))
    ok = exact < 1e-12 and quad < 1e-8 and max(nrm) < 1e-12
    return ok, f"e1 cubic {exact:.1e}, quadrature {quad:.1e}, norms {max(nrm):.1e}"


# --------------------------------------------------------------------- noise
@check()
def h1_round_trip():
    worst = 0.0
    r = _rng("h1")
    for b in (_ns(), _cgl()):
        for noise in (CovarianceModel.default(b, 8), CovarianceModel.perturbed(b, 8, 0.2, seed=3)):
            u = b.random(r, 1000, scale=2.0)
            v = b.random(r, 1000)
            back = noise.noise_coef(u, noise.g_real(u, b.to_real(v)))
            worst = max(worst, np.abs(back - Projector(b, 8).P(v)).max())
    return worst < 1e-12, f"max |phi g v - P_N v| = {worst:.2e}"


@check()
def noise_identities():
    b = _ns()
    m = b.low_real_dim(8)
    r = _rng("noise")
    one = CovarianceModel(b, 8, np.ones(m), np.zeros(b.real_dim - m), Modulation("constant", 1.0))
    xi = r.standard_normal(b.real_dim)
    dt = 0.01
    out = one.noise_coef(b.random(r), np.sqrt(dt) * xi)
    e1 = np.abs(out[:m] - np.sqrt(dt) * xi[:m]).max() + np.abs(out[m:]).max()
    zero = np.abs(one.noise_coef(b.random(r), np.zeros(b.real_dim))).max()
    base = CovarianceModel.default(b, 8, modulation=Modulation("constant", 1.0))
    inv = CovarianceModel.default(b, 8)
    u = b.random(r)
    u /= np.sqrt(l2sq(u))
    a, c = base.phi_real(u, xi), inv.phi_real(u, xi)
    half = np.abs(c[m:] - 0.5 * a[m:]).max() + np.abs(c[:m] - a[:m]).max()
    two = CovarianceModel(b, 8, np.full(m, 2.0), np.zeros(b.real_dim - m))
    v = np.zeros(b.real_dim)
    v[0] = 1.0
    g = two.g_real(b.random(r), v)
    diag = abs(g[0] - 0.5) + np.abs(g[1:]).max()
    worst = max(e1, zero, half, diag)
    return worst < 1e-14, f"max defect {worst:.1e}"


@check()
def lipschitz_witness_oracles():
    b = _ns()
    r = _rng("lip")
    pairs = witness_pairs(b, r, 200)
    const = CovarianceModel.default(b, 8, modulation=Modulation("constant", 1.0))
    zero = lipschitz_witness(const, pairs)
    m = b.low_real_dim(8)
    c = np.zeros(b.real_dim - m)
    c[0] = 0.7
    one = CovarianceModel(b, 8, np.ones(m), c)
    est = lipschitz_witness(one, pairs)
    bound = (3 * np.sqrt(3) / 8) ** 2 * 0.49
    same = lipschitz_witness(one, (pairs[0], pairs[0]))
    return zero == 0 and same == 0 and 0 < est <= bound, f"estimate {est:.4f} <= {bound:.4f}"


@check()
def wiener_statistics():
    dt, n = 0.01, 100_000
    inc = WienerIncrement.sample(_rng("wiener"), dt, 4, (n,))
    mean = inc.dW.mean(axis=0) / np.sqrt(dt)
    var = inc.dW.var(axis=0)
    ok = np.all(np.abs(mean) <= 4 / np.sqrt(n)) and np.all((var > 0.95 * dt) & (var < 1.05 * dt))
    return bool(ok), f"max |mean| {np.abs(mean).max():.4f}, var/dt in [{var.min() / dt:.3f}, {var.max() / dt:.3f}]"


# ------------------------------------------------------------------ dynamics
def _model(kind="ns", **kw):
    b = _ns() if kind == "ns" else _cgl(kw.pop("modes", 64))
    noise = kw.pop("noise", None) or CovarianceModel.default(b, kw.get("N", 8))
    return Model(b, noise, SolverConfig(**kw))


@check()
def linear_implicit_euler():
    m = _model(linear=True)
    b = m.basis
    u0 = b.random(_rng("lin"))
    u = u0.copy()
    for _ in range(40):
        u = m.step(u, np.zeros(b.real_dim))
    exact = oracles.scalar_implicit_euler(u0, b.mu, 0.5, m.cfg.dt, 40)
    z = m.step(np.zeros(b.size), np.zeros(b.real_dim))
    err = np.abs(u - exact).max()
    return err < 1e-14 and not z.any(), f"recursion gap {err:.1e}"


@check()
def binding_identities():
    m = _model()
    b = m.basis
    r = _rng("bind")
    u = b.random(r, 5)
    h = m.binding(u, u)
    dW = np.sqrt(m.cfg.dt) * r.standard_normal((5, b.real_dim))
    ut, _ = m.aux_step(u, u, dW)
    same = np.abs(ut - m.step(u, dW)).max()
    m0 = _model(K=0.0)
    v = b.random(r, 5)
    k0 = np.abs(m0.aux_step(u, v, dW)[0] - m0.step(v, dW)).max()
    lin = _model(linear=True, K=50.0)
    pr = Projector(b, 8)
    a = b.random(r)
    c = b.random(r)
    r0 = c - a
    ut2, _ = lin.aux_step(a, c, np.zeros(b.real_dim))
    u2 = lin.step(a, np.zeros(b.real_dim))
    fac = 1.0 / (1.0 + lin.cfg.dt * (0.5 * b.mu + 50.0))
    lo = np.abs(pr.P(ut2 - u2) - pr.P(r0) * fac).max()
    ok = np.abs(h).max() == 0 and same == 0 and k0 == 0 and lo < 1e-14
    return ok, f"low-mode contraction gap {lo:.1e}"


@check(slow=True)
def cgl_reference_convergence():
    errs = []
    c0 = np.zeros(16, complex)
    c0[0] = 1.0
    ref = oracles.cgl_reference(c0, 1.0, eps=1.0)
    b = GalerkinBasis.cgl_dirichlet(16)
    for dt in (1e-3, 5e-4):
        m = Model(b, CovarianceModel.default(b, 4), SolverConfig(dt=dt, T=1.0, N=4, K=0.0,
                                                               eps=1.0))
        u = c0.copy()
        for _ in range(int(round(1 / dt))):
            u = m.step(u, np.zeros(b.real_dim))
        errs.append(np.abs(u - ref).max())
    ratio = errs[0] / errs[1]
    return 1.6 < ratio < 2.4, f"errors {errs[0]:.2e}, {errs[1]:.2e}, ratio {ratio:.2f}"


@check()
def coupled_pair_identity_and_ito():
    m = _model()
    b = m.basis
    u0 = b.random(_rng("ito"), (), 1.0, 0.5)
    tr = run_coupled_pair(m, u0, u0, 0.5, streams(1, range(20), "w1"), ito=True)
    same = float(np.nanmax(tr.r_l2))
    res, hs = [], []
    for dt in (2.5e-3, 1.25e-3):
        mm = _model(dt=dt)
        t = run_coupled_pair(mm, u0, u0, 0.5, streams(1, range(50), "w1"), ito=True)
        it = t.ito
        r = it["l2_end"] - it["l2_start"] + it["dissipation"] - it["hs"] - it["martingale"]
        res.append(float(np.mean(np.abs(r))))
        hs.append(float(np.mean(it["hs"])))
    ratio = res[0] / res[1]
    ok = same == 0 and 1.5 < ratio < 2.6 and res[1] < 0.1 * hs[1]
    return ok, (f"Ito residual {res[0]:.2e} -> {res[1]:.2e} (ratio {ratio:.2f}), "
                f"noise input {hs[1]:.2e}")


# ------------------------------------------------------------------ girsanov
@check()
def girsanov_moments():
    r = _rng("gir")
    rows = [constant_drift_moments(h, r) for h in (0.0, 0.5, 1.0)]
    ident = importance_identity(0.8, lambda X: np.tanh(X[-1]) + (X.max(axis=0) > 1.0), r)
    zero = girsanov_log_density(np.zeros((10, 3)), r.standard_normal((10, 3)), 0.1)
    ok = all(x["mean_ok"] and x["second_ok"] for x in rows) and ident["ok"] and zero == 0
    return ok, "; ".join(f"h={x['h']}: {x['mean']:.4f}, {x['second']:.4f}/{x['second_exact']:.4f}"
                         for x in rows)


@check()
def novikov_trip():
    dt = 1e-3
    acc = NovikovAccumulator(3.0, 0.1)
    for j in range(1000):
        acc.offer(1.0, 3.0 + j * dt, dt)
    zero = NovikovAccumulator(0.0, 0.1)
    for j in range(100):
        zero.offer(0.0, j * dt, dt)
    th = novikov_threshold(1.0, np.log(2.0), np.arange(4), 1.0)
    ok = (abs(acc.tau - 3.1) <= dt + 1e-12 and acc.integral <= 0.1 and not zero.tripped
          and zero.integral == 0 and np.allclose(th[1:] / th[:-1], 0.5))
    return bool(ok), f"trip at {float(acc.tau):.4f}"


# ------------------------------------------------------------------ coupling
@check()
def discrete_coupling_examples():
    r = _rng("disc")
    a, b = DiscreteMeasure([0.8, 0.2]), DiscreteMeasure([0.4, 0.6])
    z1, z2 = maximal_coupling_discrete(a, b, r, 200_000)
    eq = np.mean(z1 == z2)
    se = np.sqrt(0.6 * 0.4 / z1.size)
    split = np.mean((z1 == z2) & (z1 == 1)), np.mean((z1 == z2) & (z1 == 0))
    same = maximal_coupling_discrete(a, a, r, 1000)
    d1, d2 = maximal_coupling_discrete(DiscreteMeasure([1, 0]), DiscreteMeasure([0, 1]), r, 1000)
    ok = (abs(eq - 0.6) < 4 * se and abs(split[0] - 0.2) < 0.01 and abs(split[1] - 0.4) < 0.01
          and np.all(same[0] == same[1]) and not np.any(d1 == d2)
          and abs(total_variation(a, b) - 0.4) < 1e-15)
    return ok, f"P(equal) {eq:.4f}"


@check(slow=True)
def discrete_coupling_random_pairs():
    r = _rng("discr")
    bad = 0
    for _ in range(200):
        n = int(r.integers(2, 8))
        a = DiscreteMeasure(r.dirichlet(np.ones(n)))
        b = DiscreteMeasure(r.dirichlet(np.ones(n)))
        z1, z2 = maximal_coupling_discrete(a, b, r, 20_000)
        tv = total_variation(a, b)
        se = np.sqrt(max(tv * (1 - tv), 1e-12) / z1.size)
        if abs(np.mean(z1 != z2) - tv) > 4 * se:
            bad += 1
    return bad <= 2, f"{bad} of 200 pairs outside 4 SE"


@check()
def gaussian_step_meet():
    r = _rng("gauss")
    dt = 0.01
    x, y, met = maximal_coupling_gaussian_step([2 * np.sqrt(dt)], [0.0], dt, r, size=100_000)
    p = met.mean()
    exact = gaussian_meet_probability([2 * np.sqrt(dt)], [0.0], dt)
    mx = (x.mean() - 2 * np.sqrt(dt)) / np.sqrt(dt / x.size)
    my = y.mean() / np.sqrt(dt / y.size)
    same = maximal_coupling_gaussian_step([0.3], [0.3], dt, r, size=1000)[2].all()
    ok = abs(p - exact) < 0.01 and abs(exact - 0.3173) < 1e-4 and abs(mx) < 4 and abs(my) < 4 and same
    return bool(ok), f"meet {p:.4f} vs {exact:.4f}"


@check()
def overlap_lemma():
    r = _rng("overlap")
    worst, used = np.inf, 0
    for _ in range(300):
        n = int(r.integers(2, 10))
        a = DiscreteMeasure(r.dirichlet(np.ones(n)))
        b = DiscreteMeasure(r.dirichlet(np.ones(n)))
        A = np.flatnonzero(r.random(n) < 0.5)
        for p in (2.0, 4.0):
            for ev in (np.arange(n), A):
                if ev.size == 0:
                    continue
                lhs, rhs, applies = overlap_lower_bound(a, b, ev, p)
                if applies:
                    used += 1
                    worst = min(worst, lhs - rhs)
    lhs, rhs, applies = overlap_lower_bound(DiscreteMeasure([0.1, 0.9]),
                                            DiscreteMeasure([0.9, 0.1]), [0], 2.0)
    ok = worst >= -1e-15 and not applies and lhs < rhs
    return ok, f"min slack {worst:.3e} over {used} events; small-ratio event gives {lhs} < {rhs:.3f}"


@check()
def ladder_replay():
    bad = 0
    for bits in itertools.product([False, True], repeat=6):
        glued = list(bits)
        for ball in ([True] * 7, [bits[0]] + list(bits), [False] * 7):
            led = replay(glued, ball)
            o = ladder_oracle(glued, ball)
            if (led.l0 != o["l0"] or led.delta != o["delta"] or led.sigma_full != o["sigma"]
                    or led.k0 != o["k0"] or led.l0_inf != o["l0_inf"]):
                bad += 1
    ex = replay([True, True, True, False, True, True, True, True],
                [True, True, True, True, False, True, True, True, True])
    ok = bad == 0 and ex.l0 == [0, 0, 0, 0, INF, 5, 5, 5, 5]
    return ok, f"{bad} mismatches"


def _mixing_model():
    return _model()


@check()
def mixing_identical_and_noise_off():
    m = _mixing_model()
    b = m.basis
    r = _rng("mix")
    u = b.random(r, (), 1.0, 0.3)
    st = CouplingSettings("increment", 5.0, 10.0)
    same = mixing_experiment(m, u, u, paths=10, windows=3, seed=1, settings=st, fit=True,
                             record_every=10)
    flat = float(np.max(same.dist_fine))
    a = 1e-3 * b.random(r)
    c = 1e-3 * b.random(r)
    off = mixing_experiment(m, a, c, paths=2, windows=1, seed=1, settings=st, noise_off=True,
                            fit=False, record_every=1)
    ts, ds = off.distance_series()
    sq = np.log(ds[:, 0] ** 2)
    slope = -np.polyfit(ts, sq, 1)[0]
    target = 2 * np.log1p(m.cfg.dt * m.cfg.nu * m.mu1) / m.cfg.dt
    ok = flat == 0 and same.fit.degenerate and slope >= target * (1 - 1e-3)
    return ok, f"squared-gap rate {slope:.3f} vs discrete 2 nu mu1 {target:.3f}"


@check(slow=True)
def forced_coupling_envelope():
    m = _mixing_model()
    b = m.basis
    r = _rng("forced")
    u1, u2 = b.random(r, (), 1.0, 0.3), b.random(r, (), 1.0, 0.3)
    pilot = run_coupled_pair(m, u1, u2, 1.0, streams(2, range(100), "pilot"), record_every=10)
    rate = foias_prodi_statistic(pilot, 0.25, bootstrap=0)["fit"].rate
    gamma = rate / 2
    rep = mixing_experiment(m, u1, u2, paths=50, windows=4, seed=2, record_every=10,
                            settings=CouplingSettings("forced", 1e12, 0.0), fit=False)
    ts, ds = rep.distance_series()
    mean = ds.mean(axis=1)
    env = mean[0] * np.exp(-gamma * ts)
    return bool(np.all(mean <= env * (1 + 1e-12))), f"gamma_hat {gamma:.2f}"


@check(slow=True)
def linear_mixing_rate():
    b = _ns()
    noise = CovarianceModel.default(b, 8, modulation=Modulation("constant", 1.0))
    m = Model(b, noise, SolverConfig(linear=True, K=0.0))
    r = _rng("linmix")
    u1, u2 = b.random(r, (), 1.0, 0.3), b.random(r, (), 1.0, 0.3)
    rep = mixing_experiment(m, u1, u2, paths=20, windows=2, seed=3, record_every=10,
                            settings=CouplingSettings("increment", 5.0, 10.0), fit_span="resolved")
    target = m.cfg.nu * m.mu1
    return abs(rep.fit.rate / target - 1) < 0.15, f"rate {rep.fit.rate:.3f} vs {target:.3f}"


# --------------------------------------------------------------- diagnostics
@check()
def wasserstein_oracles():
    r = _rng("w1")
    a = r.standard_normal(1000)
    z = wasserstein_1d(a, a)
    pm = wasserstein_1d([0.0], [2.5])
    big = wasserstein_1d(r.standard_normal(100_000), 1 + r.standard_normal(100_000))
    ok = z == 0 and abs(pm - 2.5) < 1e-15 and abs(big - 1) < 0.05
    return ok, f"shifted normals {big:.4f}"


@check()
def rate_fitter_controls():
    r = _rng("fit")
    t = np.linspace(0, 10, 101)
    cover = 0
    for _ in range(100):
        y = np.exp(0.7 - 0.5 * t + 0.05 * r.standard_normal(t.size))
        f = fit_log_linear(t, means=y, discard=0.0)
        cover += f.lo <= 0.5 <= f.hi
    perm = permutation_control(t, np.exp(-0.5 * t), r)
    dom = fit_log_linear(t, means=np.exp(-0.5 * t))
    ok = cover >= 90 and abs(perm.rate) < 0.15 and envelope_dominates(dom, t, np.exp(-0.5 * t))
    return ok, f"coverage {cover}/100, shuffled rate {perm.rate:.3f}"


@check()
def rng_streams():
    a = stream(7, 3, "w1").standard_normal(100_000)
    b = stream(7, 3, "w1").standard_normal(100_000)
    c = stream(7, 4, "w1").standard_normal(100_000)
    d = stream(7, 3, "u").standard_normal(100_000)
    rho = max(abs(stats.pearsonr(a, c)[0]), abs(stats.pearsonr(a, d)[0]))
    return bool(np.array_equal(a, b) and rho < 4 / np.sqrt(a.size)), f"max |corr| {rho:.4f}"


@check()
def mixing_determinism():
    m = _mixing_model()
    b = m.basis
    r = _rng("det")
    u1, u2 = b.random(r, (), 1.0, 0.3), b.random(r, (), 1.0, 0.3)
    st = CouplingSettings("increment", 5.0, 10.0)
    runs = [mixing_experiment(m, u1, u2, paths=6, windows=2, seed=9, settings=st, fit=False,
                              chunk_size=c) for c in (6, 2)]
    same = np.array_equal(runs[0].dist, runs[1].dist) and np.array_equal(runs[0].glued,
                                                                          runs[1].glued)
    return bool(same), "identical across chunkings"


def run_selftest(quick: bool = False) -> list[dict]:
    out = []
    for name, fn, slow in CHECKS:
        if quick and slow:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:          # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append({"name": name, "ok": bool(ok), "seconds": time.perf_counter() - t0,
                    "detail": detail})
    return out
