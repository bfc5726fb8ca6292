"""Estimators that confront ensemble output with decay, envelope and tail claims."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

TINY = 1e-300


class InsufficientData(ValueError):
    """Too few paths or samples for the requested estimate."""


# ------------------------------------------------------------ empirical laws
@dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size == 0:
            raise InsufficientData("empty sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", x)

    @property
    def size(self) -> int:
        return self.samples.size


def wasserstein_1d(a, b) -> float:
    """W1 distance between two empirical laws on the line.

    Integrates |F_a - F_b| between consecutive order statistics of the pooled
    sample, which handles unequal sample sizes.
    """
    a = a.samples if isinstance(a, EmpiricalMeasure) else EmpiricalMeasure(a).samples
    b = b.samples if isinstance(b, EmpiricalMeasure) else EmpiricalMeasure(b).samples
    sa, sb = np.sort(a), np.sort(b)
    pooled = np.sort(np.concatenate([sa, sb]))
    gaps = np.diff(pooled)
    Fa = np.searchsorted(sa, pooled[:-1], side="right") / sa.size
    Fb = np.searchsorted(sb, pooled[:-1], side="right") / sb.size
    return float(np.sum(np.abs(Fa - Fb) * gaps))


# ---------------------------------------------------------------- rate fits
@dataclass
class RateFit:
    rate: float
    intercept: float
    resid: float
    half_width: float
    lo: float
    hi: float
    t_lo: float
    t_hi: float
    points: int
    method: str
    degenerate: bool = False

    @property
    def decaying(self) -> bool:
        """Rate positive with the whole confidence band above zero."""
        return bool(not self.degenerate and self.lo > 0)

    def envelope(self, t) -> np.ndarray:
        """exp(a - rate t + 3 s), a bound that covers the fitted residual scatter."""
        return np.exp(self.intercept - self.rate * np.asarray(t, float) + 3.0 * self.resid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decaying"] = self.decaying
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def _degenerate(t_lo, t_hi, method) -> RateFit:
    nan = float("nan")
    return RateFit(nan, nan, nan, nan, nan, nan, t_lo, t_hi, 0, method, degenerate=True)


def _ols(t, y):
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(t.size - 2, 1)
    s = float(np.sqrt(res @ res / dof))
    se_slope = s / np.sqrt(np.sum((t - t.mean()) ** 2)) if t.size > 2 else np.inf
    return coef[0], coef[1], s, se_slope, dof


SPANS = ("horizon", "resolved")


def fit_window(t, means, discard: float = 0.2, floor: float = TINY, span: str = "horizon"):
    """Indices used by the fit and the start of the fit window.

    ``span="horizon"`` discards the first ``discard`` fraction of the whole
    time range.  ``span="resolved"`` first cuts the range at the last time the
    mean is above ``floor`` (a series that reached exact coalescence carries
    no log-scale information afterwards) and discards that fraction of what
    remains.
    """
    t = np.asarray(t, float)
    means = np.asarray(means, float)
    if span not in SPANS:
        raise ValueError(f"span must be one of {SPANS}")
    ok = np.isfinite(means) & (means > floor)
    t_end = t[-1]
    if span == "resolved":
        t_end = t[np.flatnonzero(ok)[-1]] if ok.any() else t[0]
    t_lo = t[0] + discard * (t_end - t[0])
    return np.flatnonzero((t >= t_lo - 1e-12) & (t <= t_end + 1e-12) & ok), float(t_lo)


def fit_log_linear(t, samples=None, means=None, *, discard: float = 0.2, floor: float = TINY,
                   bootstrap: int = 400, rng: np.random.Generator | None = None,
                   level: float = 0.95, span: str = "horizon") -> RateFit:
    """Fit log E[X(t)] = a - rate * t on the fit window.

    With per-path ``samples`` (times x paths) the band comes from a bootstrap
    over paths; with only ``means`` it is the OLS t-interval.  Points whose
    mean is not above ``floor`` are left out; fewer than three usable points
    give a degenerate fit.
    """
    t = np.asarray(t, dtype=float)
    if samples is not None:
        X = np.asarray(samples, dtype=float)
        X = X[:, np.all(np.isfinite(X), axis=0)]
        if X.shape[1] == 0:
            raise InsufficientData("no finite paths")
        means = X.mean(axis=1)
    else:
        means = np.asarray(means, dtype=float)
    idx, t_lo = fit_window(t, means, discard, floor, span)
    if idx.size < 3:
        return _degenerate(t_lo, float(t[-1]), "degenerate")
    tt, yy = t[idx], np.log(means[idx])
    a, slope, s, se, dof = _ols(tt, yy)
    rate = -slope
    if samples is not None and bootstrap > 0:
        rng = rng or np.random.default_rng(0)
        P = X.shape[1]
        reps = []
        for _ in range(bootstrap):
            m = X[:, rng.integers(0, P, P)].mean(axis=1)
            ok = idx[m[idx] > floor]
            if ok.size >= 3:
                reps.append(-_ols(t[ok], np.log(m[ok]))[1])
        reps = np.asarray(reps)
        q = (1 - level) / 2
        lo, hi = np.quantile(reps, [q, 1 - q]) if reps.size else (np.nan, np.nan)
        method = "bootstrap"
    else:
        h = stats.t.ppf(0.5 + level / 2, dof) * se
        lo, hi = rate - h, rate + h
        method = "ols"
    return RateFit(float(rate), float(a), s, float((hi - lo) / 2), float(lo), float(hi),
                   float(tt[0]), float(tt[-1]), int(idx.size), method)


def envelope_dominates(fit: RateFit, t, means) -> bool:
    """Whether exp(a - rate t + 3 s) covers the mean series on the fit window."""
    if fit.degenerate:
        return False
    t = np.asarray(t, float)
    m = np.asarray(means, float)
    sel = (t >= fit.t_lo - 1e-12) & (t <= fit.t_hi + 1e-12)
    return bool(np.all(m[sel] <= fit.envelope(t[sel]) * (1 + 1e-12)))


def permutation_control(t, means, rng: np.random.Generator, **kw) -> RateFit:
    """Fit the same series with its time order shuffled (should give rate ~ 0)."""
    m = np.asarray(means, float)
    return fit_log_linear(t, means=m[rng.permutation(m.size)], discard=0.0, **kw)


# ------------------------------------------------------------ Foias-Prodi
def foias_prodi_statistic(traj, eps_exp: float = 0.25, *, min_paths: int = 100,
                          discard: float = 0.2, resolution: float = 1e-12, bootstrap: int = 400,
                          rng=None, span: str = "resolved") -> dict:
    """MC mean of the bracketed FP quantity to the power ``eps_exp`` and the decay
    fit of E|r(t)|^{2 eps_exp}.

    ``resolution`` is the smallest |r| treated as resolved; r = u~ - u is a
    difference of O(1) fields, so below roughly 1e-16 |u| it is roundoff.
    """
    if not 0 < eps_exp <= 1:
        raise ValueError("exponent must lie in (0, 1]")
    floor = max(resolution ** (2 * eps_exp), TINY)
    ok = ~traj.aborted
    if ok.sum() < min_paths:
        raise InsufficientData(f"{int(ok.sum())} paths, need {min_paths}")
    stat = np.mean(traj.fp[:, ok] ** eps_exp, axis=1)
    r_pow = traj.r_l2[:, ok] ** eps_exp
    fit = fit_log_linear(traj.t, samples=r_pow, discard=discard, floor=floor,
                         bootstrap=bootstrap, rng=rng, span=span)
    r0 = traj.r_l2[0, ok] ** eps_exp
    return {"t": traj.t, "statistic": stat, "r_moment": r_pow.mean(axis=1), "fit": fit,
            "statistic_max": float(np.max(stat)), "start": float(np.mean(r0)),
            "bounded_ratio": float(np.max(stat) / max(np.mean(r0), TINY))}


# ------------------------------------------------------------- Lyapunov
def lyapunov_envelope(t, l2_samples, u0_l2: float, rate: float, C1: float) -> dict:
    """Check E|u(t)|^2 <= exp(-rate t)|u0|^2 + C1 + 3 SE at every recorded time."""
    X = np.asarray(l2_samples, float)
    X = X[:, np.all(np.isfinite(X), axis=0)]
    mean = X.mean(axis=1)
    se = X.std(axis=1, ddof=1) / np.sqrt(X.shape[1])
    bound = np.exp(-rate * np.asarray(t)) * u0_l2 + C1
    ok = mean <= bound + 3 * se
    return {"mean": mean, "se": se, "bound": bound, "ok": bool(np.all(ok)),
            "worst_margin": float(np.min(bound + 3 * se - mean))}


def stopped_lyapunov_check(t, energies, u0_energy, B0: float, alphas=(0.5, 1.0, 2.0),
                           level=None) -> list[dict]:
    """E[exp(-alpha tau) H(u(tau)); tau < inf] <= H(u0) + B0/alpha.

    ``energies`` is (times x paths).  tau is the first recorded time after
    the start with energy above ``level`` (default: the 90% quantile of the
    records after the start).
    """
    E = np.asarray(energies, float)
    t = np.asarray(t, float)
    level = float(np.quantile(E[1:], 0.9)) if level is None else level
    hit = E >= level
    hit[0] = False
    first = np.where(hit.any(axis=0), hit.argmax(axis=0), -1)
    rows = []
    for a in alphas:
        vals = np.zeros(E.shape[1])
        m = first >= 0
        vals[m] = np.exp(-a * t[first[m]]) * E[first[m], np.flatnonzero(m)]
        mean = vals.mean()
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        bound = float(u0_energy + B0 / a)
        rows.append({"alpha": a, "level": level, "mean": float(mean), "se": float(se),
                     "bound": bound, "ok": bool(mean <= bound + 3 * se)})
    return rows


def exponential_tail_rate(x, tail_fraction: float = 0.5, level: float = 0.95) -> dict:
    """Rate of an exponential tail fitted above the empirical quantile 1 - tail_fraction.

    Peaks-over-threshold maximum likelihood: rate = 1 / mean excess, with a
    chi-square confidence interval.
    """
    x = np.sort(np.asarray(x, float))
    x = x[np.isfinite(x)]
    u = np.quantile(x, 1 - tail_fraction)
    ex = x[x > u] - u
    n = ex.size
    if n < 5:
        raise InsufficientData("too few exceedances")
    s = ex.sum()
    rate = n / s
    q = (1 - level) / 2
    lo = stats.chi2.ppf(q, 2 * n) / (2 * s)
    hi = stats.chi2.ppf(1 - q, 2 * n) / (2 * s)
    ks = stats.kstest(ex, "expon", args=(0, 1 / rate)).pvalue
    return {"rate": float(rate), "lo": float(lo), "hi": float(hi), "threshold": float(u),
            "exceedances": int(n), "ks_pvalue": float(ks)}


# --------------------------------------------------------- reference runs
def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with the self-consistent window M >= c tau."""
    x = np.asarray(x, float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] <= 0:
        return 1.0
    acf /= acf[0]
    tau = 1.0
    for M in range(1, n):
        tau = 1.0 + 2.0 * acf[1:M + 1].sum()
        if M >= c * tau:
            break
    return float(max(tau, 1.0))


def reference_adequate(x, min_ratio: float = 50.0) -> dict:
    tau = integrated_autocorr_time(x)
    return {"samples": int(np.size(x)), "tau_int": tau,
            "effective": float(np.size(x) / tau), "ok": bool(np.size(x) / tau >= min_ratio)}


def mixing_rate_report(report, reference: dict | None = None, *, discard: float = 0.2,
                       bootstrap: int = 400, rng=None, span: str = "resolved",
                       floor: float = 1e-12) -> dict:
    """Rate fits of the coupling distance and of W1 to a stationary reference.

    ``reference`` maps observable names to long-run samples (burn-in removed).
    """
    rng = rng or np.random.default_rng(12345)
    out = {}
    t, D = report.distance_series() if hasattr(report, "distance_series") else (report.t, report.dist)
    dist_fit = fit_log_linear(t, samples=D, discard=discard, bootstrap=bootstrap, rng=rng,
                              span=span, floor=floor)
    means = D.mean(axis=1)
    out["distance"] = {"fit": dist_fit.to_dict(),
                       "envelope_dominates": envelope_dominates(dist_fit, t, means),
                       "verdict": dist_fit.decaying,
                       "degenerate": dist_fit.degenerate}
    if reference is not None:
        ref_ok = {k: reference_adequate(v) for k, v in reference.items()}
        bad = [k for k, v in ref_ok.items() if not v["ok"]]
        if bad:
            raise InsufficientData(f"reference too short for {bad}: {ref_ok}")
        w1 = {}
        for name, ref in reference.items():
            obs = report.observables[name]
            series = np.array([wasserstein_1d(obs[i], ref) for i in range(obs.shape[0])])
            fit = fit_log_linear(report.t, means=series, discard=discard)
            w1[name] = {"series": series, "fit": fit.to_dict(), "verdict": fit.decaying}
        out["wasserstein"] = w1
        out["reference"] = ref_ok
    out["stopped_lyapunov"] = stopped_lyapunov_check(
        report.t, report.observables["energy"], float(report.observables["energy"][0].mean()),
        report.B0)
    return out
