"""Window-iterated coupling of two solutions through the auxiliary process.

Each window starts from (u1(kT), u2(kT)).  The pair (u1, u~) is driven by
W1, with u~ restarted at u2(kT) and bound to u1.  u2 is driven by W2, which
is coupled with Y = W1 + int h^tau.  When W2 = Y and the Novikov accumulator
did not trip, u2 equals u~ on the window by construction.

Two couplings of W2 with Y are available:

``"window"``
    Exact maximal coupling of the discretized path laws.  Y is accepted with
    probability min(1, dLaw(W)/dLaw(Y) at Y).  Otherwise W2 is drawn from the
    residual law by rejection: fresh Brownian blocks y are proposed and
    accepted with probability 1 - min(1, dLaw(Y)/dLaw(W) at y).  That ratio
    is evaluated by running (u1', u~') along y, with u1' driven by y - int h.
``"increment"``
    Step-by-step reflection-maximal coupling of each Gaussian increment.  It
    is cheaper but under-couples, because the meet probability becomes a
    product over the steps of the window.

``"forced"`` sets W2 = Y unconditionally.  It is a replay tool for envelope
checks, not a coupling.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import InsufficientData, fit_log_linear, foias_prodi_statistic
from ..dynamics import Model, run_coupled_pair, run_primary
from ..girsanov import (NovikovAccumulator, calibrate_C, novikov_threshold,
                        second_moment_table)
from ..rng import stream, streams
from ..spectral import l2sq
from .ladder import INF, CouplingLedger, advance_ladder
from .primitives import reflection_coupling

MODES = ("window", "increment", "forced")


@dataclass(frozen=True)
class CouplingSettings:
    mode: str = "window"
    C_hat: float = 1.0
    gamma_hat: float = 1.0
    theta_floor: float = 0.0
    max_residual: int = 10000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"coupling mode must be one of {MODES}")
        # C_hat = 0 is legitimate when the binding drift vanishes (K = 0)
        if not (self.C_hat >= 0 and self.gamma_hat >= 0):
            raise ValueError("C_hat and gamma_hat must be nonnegative")


@dataclass
class WindowStreams:
    w1: list
    u: list
    w2: list
    u2: list

    @classmethod
    def open(cls, seed: int, paths, salt: str = "") -> "WindowStreams":
        return cls(*(streams(seed, paths, salt + t) for t in ("w1", "u", "w2", "u2")))

    def subset(self, idx) -> "WindowStreams":
        return WindowStreams(*([s[i] for i in idx] for s in (self.w1, self.u, self.w2, self.u2)))


def triplet_step(model: Model, u1: np.ndarray, u2: np.ndarray, theta: np.ndarray,
                 rs: WindowStreams, mode: str = "window", t0: float = 0.0,
                 max_residual: int = 10000, record_every: int = 0) -> dict:
    """Advance (u1, u2, u~) over one window for a batch of paths.

    With ``record_every > 0`` the result also carries ``dist``, the distance
    min(|u1 - u2|, 1) after every ``record_every``-th step of the window.
    """
    cfg, noise = model.cfg, model.noise
    P, S, D, dt = u1.shape[0], cfg.steps_per_window, noise.dim, cfg.dt
    sq = math.sqrt(dt)
    xi = np.stack([g.standard_normal((S, D)) for g in rs.w1], axis=1)
    if mode == "increment":
        logu = np.log(np.stack([g.random(S) for g in rs.u], axis=1))
    else:
        logu = np.log(np.array([g.random() for g in rs.u]))

    x1, ut = u1.copy(), u2.copy()
    v = u2.copy()                    # own trajectory of u2 once it leaves u~
    sep = np.zeros(P, bool)
    acc = NovikovAccumulator(t0, np.broadcast_to(theta, (P,)).copy())
    log_rho = np.zeros(P)            # Girsanov log-density on the W1 path
    LX = np.zeros(P)
    met_steps = np.zeros(P, dtype=np.int64)
    bad = np.zeros(P, bool)
    marks = [j for j in range(S) if record_every and (j + 1) % record_every == 0]
    snaps, dist = [], np.zeros((len(marks), P))

    for j in range(S):
        old = np.flatnonzero(sep)
        F = model.force(np.concatenate([x1, ut, v[old]]))
        F1, Ft, Fv_old = F[:P], F[P:2 * P], F[2 * P:]
        h = model.binding(x1, ut, F1, Ft)
        live = acc.offer(np.sum(h * h, axis=-1), t0 + j * dt, dt)
        ht = h * live[:, None]
        dW1 = sq * xi[j]
        dWt = dW1 + h * dt
        hd = np.sum(ht * dW1, axis=-1)
        hh = 0.5 * dt * np.sum(ht * ht, axis=-1)
        log_rho += hd - hh
        if mode == "increment":
            _, y, met = reflection_coupling(ht * dt, np.zeros_like(ht), dt, xi[j], logu[j])
            met_steps += met
            dW2 = np.where(met[:, None], dW1 + ht * dt, y)
            newly = ~sep & ~(met & live)
        else:
            LX += hd + hh
            dW2 = dW1 + ht * dt
            newly = ~sep & ~live
        if newly.any():
            v[newly] = ut[newly]
        sep_idx = np.flatnonzero(sep | newly)
        x1 = model.step(x1, dW1, F1)
        ut_new = model.step(ut, dWt, Ft)
        if sep_idx.size:
            Fv = np.empty((sep_idx.size,) + Ft.shape[1:], dtype=Ft.dtype)
            is_old = np.isin(sep_idx, old)
            Fv[is_old] = Fv_old[np.searchsorted(old, sep_idx[is_old])]
            Fv[~is_old] = Ft[sep_idx[~is_old]]
            v[sep_idx] = model.step(v[sep_idx], dW2[sep_idx], Fv)
        ut = ut_new
        sep |= newly
        fin = np.all(np.isfinite(x1), -1) & np.all(np.isfinite(ut), -1) & np.all(np.isfinite(v), -1)
        if not fin.all():
            bad |= ~fin
            x1[bad] = 0.0
            ut[bad] = 0.0
            v[bad] = 0.0
        if marks and j == marks[len(snaps)]:
            cur = np.where(sep[:, None], v, ut) if mode != "forced" else ut
            dist[len(snaps)] = _dist(x1, cur)
            snaps.append(x1.copy())

    tripped = acc.tripped.copy()
    tries = np.zeros(P, dtype=np.int64)
    if mode == "increment":
        glued = ~sep
        u2_new = np.where(sep[:, None], v, ut)
        accepted = glued.copy()
    elif mode == "forced":
        glued = ~tripped
        u2_new = ut.copy()
        accepted = np.ones(P, bool)
    else:
        accepted = logu <= -LX
        glued = accepted & ~tripped
        u2_new = np.where(sep[:, None], v, ut)
        rej = np.flatnonzero(~accepted)
        if rej.size:
            X = np.stack(snaps)[:, rej] if snaps else None
            w_res, tries_res, bad_res, d_res = _residual(
                model, u1[rej], u2[rej], acc.theta[rej], rs.subset(rej), t0, max_residual,
                marks, X)
            u2_new[rej] = w_res
            if marks:
                dist[:, rej] = d_res
            tries[rej] = tries_res
            bad[rej] |= bad_res
    return {"u1": x1, "u2": u2_new, "ut": ut, "glued": glued & ~bad, "tripped": tripped,
            "tau": acc.tau, "integral": acc.integral, "log_density": log_rho,
            "accepted": accepted, "residual_tries": tries, "met_steps": met_steps,
            "blown": bad, "dist": dist}


def _dist(a, b):
    return np.minimum(np.sqrt(l2sq(a - b)), 1.0)


def _residual(model: Model, a0, w0, theta, rs: WindowStreams, t0, max_tries,
              marks=(), X=None):
    """Draw u2 from the residual part of the window coupling by rejection."""
    cfg = model.cfg
    n, S, D, dt = a0.shape[0], cfg.steps_per_window, model.noise.dim, cfg.dt
    sq = math.sqrt(dt)
    out = np.empty_like(w0)
    tries = np.zeros(n, dtype=np.int64)
    bad = np.zeros(n, bool)
    dist = np.zeros((len(marks), n))
    pending = np.arange(n)
    while pending.size:
        tries[pending] += 1
        if tries[pending].max() > max_tries:
            raise RuntimeError("residual sampler exceeded its proposal budget")
        y = np.stack([rs.w2[i].standard_normal((S, D)) for i in pending], axis=1)
        logu = np.log(np.array([rs.u2[i].random() for i in pending]))
        a, w = a0[pending].copy(), w0[pending].copy()
        m = pending.size
        acc = NovikovAccumulator(t0, theta[pending].copy())
        lr = np.zeros(m)
        d = np.zeros((len(marks), m))
        r = 0
        for j in range(S):
            F = model.force(np.concatenate([a, w]))
            Fa, Fw = F[:m], F[m:]
            h = model.binding(a, w, Fa, Fw)
            live = acc.offer(np.sum(h * h, axis=-1), t0 + j * dt, dt)
            ht = h * live[:, None]
            dy = sq * y[j]
            lr += np.sum(ht * dy, axis=-1) - 0.5 * dt * np.sum(ht * ht, axis=-1)
            a = model.step(a, dy - ht * dt, Fa)
            w = model.step(w, dy, Fw)
            if r < len(marks) and j == marks[r]:
                d[r] = _dist(X[r, pending], w)
                r += 1
        fin = np.all(np.isfinite(w), -1) & np.all(np.isfinite(a), -1)
        take = (logu > lr) | ~fin
        out[pending[take]] = np.where(fin[take, None], w[take], 0.0)
        bad[pending[take & ~fin]] = True
        dist[:, pending[take]] = d[:, take]
        pending = pending[~take]
    return out, tries, bad, dist


# -------------------------------------------------------------- calibration
def stationary_pair(model: Model, seed: int, burn_windows: int = 5, tries: int = 20):
    """Two independent burned-in states whose energy sum lies in the 2 C1 ball."""
    b = model.basis
    for k in range(tries):
        rngs = [stream(seed, 2 * k + i, "burn") for i in range(2)]
        init = b.random(stream(seed, k, "init"), 2, 1.0, 0.1)
        _, us, _ = run_primary(model, init, burn_windows * model.cfg.steps_per_window, rngs,
                               record_every=model.cfg.steps_per_window)
        u1, u2 = us[-1]
        if l2sq(u1) + l2sq(u2) <= 2 * model.C1:
            return u1, u2
    raise InsufficientData("no burned-in pair entered the energy ball")


def calibrate_novikov(model: Model, seed: int, paths: int = 100, q: float = 0.9,
                      eps_exp: float = 0.25, pair=None) -> dict:
    """Pilot window from a ball pair: C_hat from the |h|^2 quantile, gamma_hat = FP rate / 2."""
    u1, u2 = stationary_pair(model, seed) if pair is None else pair
    traj = run_coupled_pair(model, u1, u2, model.cfg.T, streams(seed, range(paths), "pilot"),
                            record_every=max(1, model.cfg.steps_per_window // 40))
    C_hat = calibrate_C(traj.h_int[-1], q)
    fp = foias_prodi_statistic(traj, eps_exp, min_paths=min(paths, 100), bootstrap=0)
    rate = fp["fit"].rate
    if fp["fit"].degenerate or not rate > 0:
        raise InsufficientData("pilot Foias-Prodi fit did not decay")
    return {"C_hat": C_hat, "gamma_hat": rate / 2.0, "fp_rate": rate, "quantile": q,
            "pilot_paths": paths, "pair_energy": [float(l2sq(u1)), float(l2sq(u2))]}


# --------------------------------------------------------------- experiment
@dataclass
class MixingReport:
    t: np.ndarray                    # window boundaries, windows + 1 entries
    dist: np.ndarray                 # (windows+1, paths) of min(|u1 - u2|, 1)
    energy_sum: np.ndarray           # H(u1) + H(u2) at window starts
    glued: np.ndarray                # (windows, paths)
    tripped: np.ndarray
    integral: np.ndarray
    log_density: np.ndarray
    age: np.ndarray
    theta: np.ndarray
    accepted: np.ndarray
    residual_tries: np.ndarray
    observables: dict                # name -> (windows+1, paths) for u1
    observables2: dict               # same for u2
    ledgers: list
    settings: CouplingSettings
    C1: float
    B0: float
    blown: np.ndarray
    t_fine: np.ndarray = None        # sub-window record times (``record_every``)
    dist_fine: np.ndarray = None
    fit: object = None
    extras: dict = field(default_factory=dict)

    @property
    def mean_dist(self) -> np.ndarray:
        return self.dist.mean(axis=1)

    def distance_series(self):
        """(times, times x paths distances) at the finest recorded resolution."""
        if self.dist_fine is not None and self.dist_fine.shape[0] > self.dist.shape[0]:
            return self.t_fine, self.dist_fine
        return self.t, self.dist

    def entries(self, min_followup: int = 1) -> list:
        return [e for led in self.ledgers for e in led.entries(min_followup)]

    def coupling_probability(self, min_followup: int = 5) -> dict:
        """Empirical success of coupling attempts launched from ball entries."""
        ent = self.entries(min_followup)
        n = len(ent)
        held = sum(e["held"] for e in ent)
        first = sum(e["first_window_glued"] for e in ent)
        se = lambda k: math.sqrt(max(k / n * (1 - k / n), 0.0) / n) if n else float("nan")
        return {"entries": n, "p0_hat": held / n if n else float("nan"), "p0_se": se(held),
                "p1_hat": first / n if n else float("nan"), "p1_se": se(first),
                "min_followup": min_followup}

    def l0_final(self) -> np.ndarray:
        return np.array([led.l0[-1] for led in self.ledgers], dtype=float)

    def second_moments(self) -> list:
        return second_moment_table(self.log_density, self.theta, self.tripped, self.age)

    def summary(self) -> dict:
        l0 = self.l0_final()
        fin = l0[np.isfinite(l0)]
        return {
            "mode": self.settings.mode, "C_hat": self.settings.C_hat,
            "gamma_hat": self.settings.gamma_hat, "theta_floor": self.settings.theta_floor,
            "paths": int(self.dist.shape[1]), "windows": int(self.glued.shape[0]),
            "C1": self.C1, "B0": self.B0, "ball_radius": 2 * self.C1,
            "blown_paths": int(self.blown.sum()),
            "coupling_probability": self.coupling_probability(),
            "window_glued_fraction": float(self.glued.mean()),
            "trip_fraction": float(self.tripped.mean()),
            "residual_tries_mean": float(self.residual_tries[~self.accepted].mean())
            if (~self.accepted).any() else 0.0,
            "l0_final": {"finite": int(fin.size), "never": int(l0.size - fin.size),
                         "quantiles": np.quantile(fin, [0.5, 0.9, 1.0]).tolist() if fin.size else None},
            "coupling_time_quantiles": np.quantile(
                [led.coupling_time for led in self.ledgers], [0.5, 0.9, 1.0]).tolist(),
            "second_moments": self.second_moments(),
        }


def _chunk(args):
    (model, u01, u02, windows, seed, paths, settings, noise_off, record_every) = args
    P = len(paths)
    rs = WindowStreams.open(seed, paths)
    cfg = model.cfg
    u1 = np.broadcast_to(np.asarray(u01, model.basis.dtype), (P, model.basis.size)).copy()
    u2 = np.broadcast_to(np.asarray(u02, model.basis.dtype), (P, model.basis.size)).copy()
    ball = 2 * model.C1
    n = windows
    rec = {k: np.zeros((n, P)) for k in ("integral", "log_density", "theta", "age")}
    flags = {k: np.zeros((n, P), bool) for k in ("glued", "tripped", "accepted")}
    tries = np.zeros((n, P), dtype=np.int64)
    dist = np.zeros((n + 1, P))
    esum = np.zeros((n + 1, P))
    obs1 = {"energy": np.zeros((n + 1, P)), "mode1": np.zeros((n + 1, P))}
    obs2 = {"energy": np.zeros((n + 1, P)), "mode1": np.zeros((n + 1, P))}
    blown = np.zeros(P, bool)
    l0 = np.full(P, np.inf)
    prev_glued = np.zeros(P, bool)
    fine = [None]

    def snap(k):
        d = np.sqrt(l2sq(u1 - u2))
        dist[k] = np.minimum(d, 1.0)
        e1, e2 = l2sq(u1), l2sq(u2)
        esum[k] = e1 + e2
        obs1["energy"][k], obs2["energy"][k] = e1, e2
        obs1["mode1"][k], obs2["mode1"][k] = np.real(u1[:, 0]), np.real(u2[:, 0])

    snap(0)
    fine[0] = dist[:1].copy()
    for k in range(n):
        inball = esum[k] <= ball
        keep = prev_glued & np.isfinite(l0)
        l0 = np.where(keep, l0, np.where(inball, float(k), np.inf))
        age = np.where(np.isfinite(l0), k - np.where(np.isfinite(l0), l0, 0), 0)
        theta = novikov_threshold(settings.C_hat, settings.gamma_hat, age, cfg.T,
                                  settings.theta_floor)
        if noise_off:
            zero = np.zeros(model.noise.dim)
            d = []
            for j in range(cfg.steps_per_window):
                F = model.force(np.concatenate([u1, u2]))
                u1 = model.step(u1, zero, F[:P])
                u2 = model.step(u2, zero, F[P:])
                if record_every and (j + 1) % record_every == 0:
                    d.append(_dist(u1, u2))
            res = {"glued": np.zeros(P, bool), "tripped": np.zeros(P, bool),
                   "accepted": np.zeros(P, bool), "integral": np.zeros(P),
                   "log_density": np.zeros(P), "residual_tries": np.zeros(P, np.int64),
                   "blown": ~np.all(np.isfinite(u1), -1),
                   "dist": np.array(d).reshape(len(d), P)}
        else:
            res = triplet_step(model, u1, u2, theta, rs, settings.mode, k * cfg.T,
                               settings.max_residual, record_every)
            u1, u2 = res["u1"], res["u2"]
        blown |= res["blown"]
        for key in ("integral", "log_density"):
            rec[key][k] = res[key]
        rec["theta"][k], rec["age"][k] = theta, age
        for key in flags:
            flags[key][k] = res[key]
        tries[k] = res["residual_tries"]
        prev_glued = res["glued"]
        fine.append(res["dist"])
        snap(k + 1)
    return dict(dist=dist, fine=np.concatenate(fine), esum=esum, obs1=obs1, obs2=obs2, blown=blown, tries=tries,
                **rec, **flags)


def mixing_experiment(model: Model, u01, u02, *, paths: int, windows: int, seed: int,
                      settings: CouplingSettings, chunk_size: int = 100, workers: int = 1,
                      noise_off: bool = False, fit: bool = True, discard: float = 0.2,
                      bootstrap: int = 400, record_every: int = 0, fit_span: str = "resolved",
                      fit_floor: float = 1e-12) -> MixingReport:
    """Run the window-iterated coupling for an ensemble and assemble the report.

    Paths are split into chunks of ``chunk_size`` in index order.  Each chunk
    draws from its paths' own streams, so the result does not depend on
    ``workers``.
    """
    jobs = [(model, u01, u02, windows, seed, list(range(s, min(s + chunk_size, paths))),
             settings, noise_off, record_every) for s in range(0, paths, chunk_size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk, jobs))
    else:
        parts = [_chunk(j) for j in jobs]
    cat = lambda key: np.concatenate([p[key] for p in parts], axis=-1)
    T = model.cfg.T
    t = np.arange(windows + 1) * T
    S = model.cfg.steps_per_window
    per = [j for j in range(S) if record_every and (j + 1) % record_every == 0]
    t_fine = np.concatenate([[0.0]] + [k * T + (np.array(per) + 1) * model.cfg.dt
                                       for k in range(windows)])
    esum = cat("esum")
    glued = cat("glued")
    ledgers = []
    for i in range(paths):
        led = CouplingLedger(T=T, ball_radius=2 * model.C1)
        for k in range(windows):
            advance_ladder(led, bool(glued[k, i]), float(esum[k, i]))
        ledgers.append(led.close(float(esum[windows, i])))
    obs1 = {k: np.concatenate([p["obs1"][k] for p in parts], axis=-1) for k in parts[0]["obs1"]}
    obs2 = {k: np.concatenate([p["obs2"][k] for p in parts], axis=-1) for k in parts[0]["obs2"]}
    rep = MixingReport(t=t, dist=cat("dist"), energy_sum=esum, glued=glued,
                       tripped=cat("tripped"), integral=cat("integral"),
                       log_density=cat("log_density"), age=cat("age").astype(int),
                       theta=cat("theta"), accepted=cat("accepted"),
                       residual_tries=cat("tries"), observables=obs1, observables2=obs2,
                       ledgers=ledgers, settings=settings, C1=model.C1, B0=model.noise.B0,
                       blown=cat("blown"), t_fine=t_fine, dist_fine=cat("fine"))
    if fit:
        ts, ds = rep.distance_series()
        rep.fit = fit_log_linear(ts, samples=ds, discard=discard, bootstrap=bootstrap,
                                 rng=np.random.default_rng(seed), span=fit_span,
                                 floor=fit_floor)
    return rep


def report_json(rep: MixingReport) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, float)):
            return None if not np.isfinite(o) else float(o)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o
    d = rep.summary()
    if rep.fit is not None:
        d["fit"] = rep.fit.to_dict()
        d["fitted_rate"] = rep.fit.rate
    return json.dumps(clean(d), indent=2, sort_keys=True)


__all__ = ["CouplingSettings", "MixingReport", "WindowStreams", "mixing_experiment",
           "triplet_step", "report_json", "INF"]
