"""Binding drift, Novikov stopping and Girsanov densities for one window."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Model
from .spectral import CGL, SpectralField


def novikov_threshold(C: float, gamma: float, age, T: float, floor: float = 0.0):
    """theta = 2 C exp(-gamma * age * T), never below ``floor``."""
    return np.maximum(2.0 * C * np.exp(-gamma * np.asarray(age, dtype=float) * T), floor)


@dataclass
class NovikovAccumulator:
    """Running integral of |h|^2 for one window, batched over paths.

    The drift of step ``j`` is applied only if adding ``|h_j|^2 dt`` keeps the
    integral at or below ``theta``.  Otherwise the window trips at ``t_j`` and
    the drift stays off until the window ends, so the integral never exceeds
    ``theta``.
    """

    start: float
    theta: np.ndarray
    integral: np.ndarray = None
    tripped: np.ndarray = None
    tau: np.ndarray = None          # trip time; NaN while untripped

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        shape = self.theta.shape
        if self.integral is None:
            self.integral = np.zeros(shape)
        if self.tripped is None:
            self.tripped = np.zeros(shape, bool)
        if self.tau is None:
            self.tau = np.full(shape, np.nan)

    def offer(self, hsq, t: float, dt: float) -> np.ndarray:
        """Consume one step; returns the mask of paths whose drift is applied."""
        inc = np.asarray(hsq, dtype=float) * dt
        trip = ~self.tripped & (self.integral + inc > self.theta)
        self.tau = np.where(trip, t, self.tau)
        self.tripped = self.tripped | trip
        live = ~self.tripped
        self.integral = np.where(live, self.integral + inc, self.integral)
        return live

    @property
    def completed(self) -> np.ndarray:
        return ~self.tripped


def novikov_window(hsq_stream, acc: NovikovAccumulator, dt: float) -> dict:
    """Feed a sequence of |h_j|^2 values (scalar path) through ``acc``."""
    for j, hsq in enumerate(hsq_stream):
        acc.offer(hsq, acc.start + j * dt, dt)
    if np.all(acc.tripped):
        return {"status": "tripped", "tau": acc.tau, "integral": acc.integral}
    if not np.any(acc.tripped):
        return {"status": "completed", "tau": None, "integral": acc.integral}
    return {"status": "mixed", "tau": acc.tau, "integral": acc.integral}


def girsanov_log_density(drifts, increments, dt: float):
    """sum_j <h_j, dW_j> - 1/2 sum_j |h_j|^2 dt along the leading time axis."""
    h = np.asarray(drifts, dtype=float)
    dW = np.asarray(increments, dtype=float)
    if h.shape != dW.shape:
        raise ValueError(f"drift shape {h.shape} does not match increment shape {dW.shape}")
    if h.ndim == 1:
        h, dW = h[:, None], dW[:, None]
    return np.sum(h * dW, axis=(0, -1)) - 0.5 * dt * np.sum(h * h, axis=(0, -1))


@dataclass(frozen=True)
class GirsanovRecord:
    """Per-window outcome of the change of measure."""

    window: int
    age: int
    theta: float
    integral: float
    log_density: float
    tripped: bool

    @property
    def bound(self) -> float:
        return float(np.exp(2.0 * self.theta))


def binding_drift(model: Model, u: SpectralField, ut: SpectralField):
    """h = -g(u~) delta(u, u~) and |h|^2.  For CGL also the ratio |h|^2 / Z."""
    h = model.binding(u.coef, ut.coef)
    hsq = np.sum(h ** 2, axis=-1)
    out = {"h": h, "hsq": hsq}
    if model.kind == CGL:
        Z = model.Z(u.coef, ut.coef)
        out["Z"] = Z
        out["ratio"] = np.divide(hsq, Z, out=np.zeros_like(hsq), where=Z > 0)
    return out


def second_moment_table(log_density, theta, tripped, age) -> list[dict]:
    """MC estimate of E[rho^2] on untripped windows, grouped by window age."""
    ld = np.asarray(log_density, dtype=float).ravel()
    th = np.asarray(theta, dtype=float).ravel()
    tr = np.asarray(tripped, dtype=bool).ravel()
    ag = np.asarray(age).ravel()
    rows = []
    for a in np.unique(ag):
        sel = (ag == a) & ~tr & np.isfinite(ld)
        n = int(sel.sum())
        if n == 0:
            continue
        sq = np.exp(2.0 * ld[sel])
        one = np.exp(ld[sel])
        se = float(sq.std(ddof=1) / np.sqrt(n)) if n > 1 else np.inf
        bound = float(np.exp(2.0 * th[sel].max()))
        rows.append({"age": int(a), "windows": n, "theta": float(th[sel].max()),
                     "mean_density": float(one.mean()), "second_moment": float(sq.mean()),
                     "se": se, "bound": bound,
                     "ok": bool(sq.mean() <= bound * (1.0 + 4.0 * se))})
    return rows


def calibrate_C(h_integrals, q: float = 0.9) -> float:
    """Quantile of the window integral of |h|^2 used as the Novikov scale."""
    x = np.asarray(h_integrals, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no finite pilot integrals")
    return float(np.quantile(x, q))


def drift_sequence(model: Model, u0: np.ndarray, ut0: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Realized binding drifts along a standard-normal stream ``xi`` (steps, D)."""
    dt = model.cfg.dt
    u, ut = np.array(u0), np.array(ut0)
    hs = []
    for x in xi:
        dW = np.sqrt(dt) * x
        ut_new, h = model.aux_step(u, ut, dW)
        u = model.step(u, dW)
        ut = ut_new
        hs.append(h)
    return np.array(hs)


def anticipation_audit(model: Model, u0, ut0, xi: np.ndarray, first: int,
                       rng: np.random.Generator) -> dict:
    """Shuffle the increments from index ``first`` on and compare drift sequences.

    Returns the first index where the two drift sequences differ.  A
    non-anticipative drift can only differ at or after ``first``.
    """
    perm = np.arange(len(xi))
    perm[first:] = first + rng.permutation(len(xi) - first)
    h1 = drift_sequence(model, u0, ut0, xi)
    h2 = drift_sequence(model, u0, ut0, xi[perm])
    diff = np.flatnonzero(np.any(h1 != h2, axis=-1))
    return {"first_shuffled": first, "first_difference": int(diff[0]) if diff.size else None}


def constant_drift_moments(h: float, rng: np.random.Generator, samples: int = 100_000,
                           steps: int = 50, horizon: float = 1.0) -> dict:
    """First two moments of the density of a constant scalar drift over ``horizon``.

    Exact values: E[rho] = 1 and E[rho^2] = exp(h^2 horizon).
    """
    dt = horizon / steps
    dW = np.sqrt(dt) * rng.standard_normal((steps, samples, 1))
    ld = girsanov_log_density(np.full_like(dW, h), dW, dt)
    rho = np.exp(ld)
    sq = rho * rho
    n = float(samples)
    out = {"h": h, "samples": samples, "mean": float(rho.mean()),
           "mean_se": float(rho.std(ddof=1) / np.sqrt(n)),
           "second": float(sq.mean()), "second_se": float(sq.std(ddof=1) / np.sqrt(n)),
           "second_exact": float(np.exp(h * h * horizon))}
    out["mean_ok"] = abs(out["mean"] - 1.0) <= 4 * out["mean_se"] + 1e-15
    out["second_ok"] = abs(out["second"] - out["second_exact"]) <= 4 * out["second_se"] + 1e-15
    return out


def importance_identity(h: float, stat, rng: np.random.Generator, samples: int = 100_000,
                        steps: int = 50, horizon: float = 1.0) -> dict:
    """E_drifted[f(W) rho^{-1}] against E[f(W)] for a bounded path statistic ``f``.

    Paths are drawn with drift h, so each is reweighted by the inverse density
    dLaw(W)/dLaw(W + h t) evaluated on the drifted path.
    """
    dt = horizon / steps
    dB = np.sqrt(dt) * rng.standard_normal((steps, samples))
    X = np.cumsum(dB + h * dt, axis=0)             # drifted paths
    dX = (dB + h * dt)[..., None]
    w = np.exp(-girsanov_log_density(np.full_like(dX, h), dX, dt))
    fw = stat(X) * w
    dB2 = np.sqrt(dt) * rng.standard_normal((steps, samples))
    f0 = stat(np.cumsum(dB2, axis=0))
    se = float(np.sqrt(fw.var(ddof=1) / samples + f0.var(ddof=1) / samples))
    return {"weighted": float(fw.mean()), "plain": float(f0.mean()), "se": se,
            "ok": bool(abs(fw.mean() - f0.mean()) <= 4 * se)}
