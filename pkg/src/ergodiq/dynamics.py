"""Semi-implicit Euler-Maruyama integration of the true and auxiliary processes.

One step of the primary process reads

    NS:   u' = (u - dt B(u) + phi(u) dW) / (1 + dt nu mu)
    CGL:  u' = (u - dt (eta + i lam) P|u|^{2s}u + phi(u) dW) / (1 + dt (eps + i) mu)

The auxiliary process is advanced as the primary process driven by the shifted
increment ``dW + h dt`` with ``h = -g(u~) delta(u, u~)``.  Because
``phi(u~) g(u~) = P_N`` this subtracts ``dt * delta`` exactly, and it makes the
identity "u~ is the solution driven by W + int h" hold bit for bit, which the
coupling layer relies on.

For NS the binding drift uses the step-consistent gain
``kappa_n = K / (1 + dt (nu mu_n + K))`` on the low modes.  With it the
explicit (predictable) drift reproduces the implicit contraction factor
``1/(1 + dt (nu mu_n + K))`` of the linear difference equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .noise import CovarianceModel, WienerIncrement
from .spectral import (CGL, NS, GalerkinBasis, SpectralField, check_subcritical,
                       cgl_power_term, h1sq, l2sq, lp_power, ns_advection)


class BlowUpError(FloatingPointError):
    """Raised when a state stops being finite.  ``step`` is the step index."""

    def __init__(self, step: int, paths=None):
        self.step = step
        self.paths = paths
        super().__init__(f"non-finite state at step {step}"
                         + ("" if paths is None else f" on paths {list(paths)[:10]}"))


class ConfigError(ValueError):
    """Lists every violated precondition of a configuration."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 2.5e-3
    T: float = 1.0                 # window length
    N: int = 8                     # low eigenvalue levels covered by the noise
    K: float = 50.0                # binding gain
    nu: float = 0.5                # NS viscosity
    eps: float = 0.5               # CGL dissipation
    eta: float = 1.0
    lam: float = 1.0
    sigma: float = 1.0
    L: float | None = None         # CGL Lipschitz factor in delta; None means "use K"
    linear: bool = False           # drop the nonlinearity (linear test mode)
    step_consistent: bool = True   # NS: kappa gain instead of the raw K

    @property
    def steps_per_window(self) -> int:
        return int(round(self.T / self.dt))

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    @property
    def L_eff(self) -> float:
        return self.K if self.L is None else self.L

    def problems(self, basis: GalerkinBasis | None = None,
                 noise: CovarianceModel | None = None) -> list[str]:
        """Every violated precondition, empty when the configuration is usable."""
        out = []
        if not self.dt > 0:
            out.append(f"dt must be positive (got {self.dt})")
        elif abs(self.steps_per_window * self.dt - self.T) > 1e-9 * max(self.T, 1.0) \
                or self.steps_per_window < 1:
            out.append(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.K < 0:
            out.append("K must be nonnegative")
        if self.N < 1:
            out.append("N must be at least 1")
        if basis is not None:
            if self.N > basis.levels.size:
                out.append(f"N={self.N} exceeds the {basis.levels.size} resolved levels")
            else:
                resolved = basis.grid ** 2 if basis.kind == NS else basis.size
                if basis.low_count(self.N) > resolved / 4:
                    out.append(f"N={self.N} covers more than a quarter of the resolved modes")
            if basis.kind == NS and self.nu <= 0:
                out.append("nu must be positive")
            if basis.kind == CGL:
                if self.eps <= 0 or self.eta <= 0:
                    out.append("eps and eta must be positive")
                if self.lam not in (-1.0, 1.0):
                    out.append("lam must be -1 or 1")
                try:
                    check_subcritical(self.sigma)
                except ValueError as exc:
                    out.append(str(exc))
                if self.sigma > basis.sigma_max:
                    out.append(f"quadrature resolves sigma <= {basis.sigma_max} only")
                if self.dt * max(self.K, self.L_eff) >= 1.0:
                    out.append("explicit binding terms violate dt*max(K, L) < 1")
            if noise is not None and self.dt > 0 and basis.kind == NS and not self.linear:
                # advective CFL at the radius of the Lyapunov ball
                C1 = noise.B0 / (self.nu * basis.mu[0])
                kmax = np.max(np.abs(basis.wavevectors))
                cfl = self.dt * 2 * np.pi * kmax * np.sqrt(2 * C1)
                if cfl >= 1.0:
                    out.append(f"advective CFL number {cfl:.3g} >= 1 at the Lyapunov radius")
        return out


class Model:
    """Basis, noise and solver parameters bundled with precomputed step factors.

    All methods act on coefficient arrays with arbitrary leading batch axes.
    """

    def __init__(self, basis: GalerkinBasis, noise: CovarianceModel, cfg: SolverConfig):
        probs = cfg.problems(basis, noise)
        if noise.basis is not basis:
            probs.append("noise model is attached to a different basis")
        if noise.N != cfg.N:
            probs.append(f"noise covers N={noise.N} levels but the solver uses N={cfg.N}")
        if probs:
            raise ConfigError(probs)
        self.basis, self.noise, self.cfg = basis, noise, cfg
        self.kind = basis.kind
        mu, dt = basis.mu, cfg.dt
        self.m = basis.low_count(cfg.N)
        if self.kind == NS:
            self.den = 1.0 + dt * cfg.nu * mu
            K = cfg.K
            self.kappa = (K / (1.0 + dt * (cfg.nu * mu[: self.m] + K))
                          if cfg.step_consistent else np.full(self.m, K))
            self.C1 = noise.B0 / (cfg.nu * mu[0])
        else:
            self.den = 1.0 + dt * (cfg.eps + 1j) * mu
            self.C1 = noise.B0 / (cfg.eps * mu[0])
        self.coupling = complex(cfg.eta, cfg.lam)

    # --------------------------------------------------------------- pieces
    @property
    def dissipation(self) -> float:
        return self.cfg.nu if self.kind == NS else self.cfg.eps

    @property
    def mu1(self) -> float:
        return float(self.basis.mu[0])

    def force(self, c: np.ndarray) -> np.ndarray:
        """Raw nonlinearity: B(u) for NS, P(|u|^{2s}u) for CGL (no eta+i lam)."""
        if self.cfg.linear:
            return np.zeros_like(c)
        if self.kind == NS:
            return ns_advection(self.basis, c)
        return cgl_power_term(self.basis, c, self.cfg.sigma)

    def drift(self, F: np.ndarray) -> np.ndarray:
        return F if self.kind == NS else self.coupling * F

    def step(self, c: np.ndarray, dW: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
        if F is None:
            F = self.force(c)
        return (c - self.cfg.dt * self.drift(F) + self.noise.noise_coef(c, dW)) / self.den

    def delta(self, u, ut, Fu=None, Fut=None) -> np.ndarray:
        """Binding drift delta(u, u~) in coefficients (supported on P_N)."""
        m, cfg = self.m, self.cfg
        r_lo = ut[..., :m] - u[..., :m]
        out = np.zeros(np.broadcast_shapes(np.shape(u), np.shape(ut)), dtype=self.basis.dtype)
        if self.kind == NS:
            out[..., :m] = self.kappa * r_lo
            return out
        s = cfg.sigma
        if not cfg.linear:
            Fu = self.force(u) if Fu is None else Fu
            Fut = self.force(ut) if Fut is None else Fut
            out[..., :m] = self.coupling * (Fu[..., :m] - Fut[..., :m])
        if cfg.K != 0.0:
            b = self.basis
            lo_t = np.zeros_like(out)
            lo_t[..., :m] = ut[..., :m]
            lo_r = np.zeros_like(out)
            lo_r[..., :m] = r_lo
            prod = np.abs(b.cgl_synth(lo_t)) ** (2 * s) * b.cgl_synth(lo_r)
            out[..., :m] += cfg.K * b.cgl_project(prod)[..., :m]
        if cfg.L_eff != 0.0:
            w = cfg.L_eff * (1.0 + l2sq(ut) ** s + l2sq(u) ** s)
            out[..., :m] += w[..., None] * r_lo
        return out

    def binding(self, u, ut, Fu=None, Fut=None) -> np.ndarray:
        """h = -g(u~) delta(u, u~) as a noise vector."""
        d = self.delta(u, ut, Fu, Fut)
        return -self.noise.g_real(ut, self.basis.to_real(d))

    def aux_step(self, u, ut, dW, Fu=None, Fut=None):
        """Advance u~ under the shared increment; returns (u~', h)."""
        h = self.binding(u, ut, Fu, Fut)
        return self.step(ut, dW + h * self.cfg.dt, Fut), h

    def energy_rate(self, c: np.ndarray) -> np.ndarray:
        """Integrand of the dissipation part of E_u."""
        cfg = self.cfg
        if self.kind == NS:
            return cfg.nu * h1sq(self.basis, c)
        return (cfg.eps * h1sq(self.basis, c)
                + cfg.eta * lp_power(self.basis, c, 2 * cfg.sigma + 2))

    def Z(self, u, ut) -> np.ndarray:
        """Weight Z(u, u~) of the CGL Foias-Prodi statistic."""
        b, s = self.basis, self.cfg.sigma
        p = 2 * s + 2
        beta = 4 * s + (2 * s + 2) / (2 - s)
        r = ut - u
        lead = h1sq(b, u) + h1sq(b, ut) + lp_power(b, u, p) + lp_power(b, ut, p)
        return lead * l2sq(r) + (1 + l2sq(u) ** (beta / 2) + l2sq(ut) ** (beta / 2)) * h1sq(b, r)


# ---------------------------------------------------------------- ledgers
@dataclass
class EnergyLedger:
    """Running E_u(t) = |u(t)|^2 + integral of the dissipation rate."""

    E0: np.ndarray
    diss: np.ndarray = None
    E: np.ndarray = None

    def __post_init__(self):
        self.E0 = np.asarray(self.E0, dtype=float)
        self.diss = np.zeros_like(self.E0) if self.diss is None else self.diss
        self.E = self.E0.copy() if self.E is None else self.E

    @classmethod
    def start(cls, c: np.ndarray) -> "EnergyLedger":
        return cls(l2sq(c))

    def update(self, model: Model, c_new: np.ndarray, rate: np.ndarray | None = None):
        rate = model.energy_rate(c_new) if rate is None else rate
        self.diss = self.diss + model.cfg.dt * rate
        self.E = l2sq(c_new) + self.diss
        return self


# ------------------------------------------------------------ trajectories
@dataclass
class Trajectory:
    """Decimated record of a batch of (u, u~) paths.  Arrays are (records, paths)."""

    t: np.ndarray
    u_l2: np.ndarray
    u_h1: np.ndarray
    r_l2: np.ndarray
    r_h1: np.ndarray
    E_u: np.ndarray
    E_ut: np.ndarray
    h_int: np.ndarray
    fp: np.ndarray                 # e^{ct}|r|^2 + int e^{cs} X ds
    aborted: np.ndarray            # per path
    abort_step: np.ndarray         # per path, -1 if finite throughout
    final_u: np.ndarray = field(repr=False, default=None)
    final_ut: np.ndarray = field(repr=False, default=None)
    ito: dict = field(default_factory=dict, repr=False)

    columns = ("t", "u_l2", "u_h1", "r_l2", "r_h1", "E_u", "E_ut", "h_int")


def _as_batch(c, basis):
    c = np.asarray(c, dtype=basis.dtype)
    return c[None] if c.ndim == 1 else c


def run_coupled_pair(model: Model, u0, ut0, horizon: float, rngs, *, aux_rngs=None,
                     record_every: int = 1, binding: bool = True, fp_rate: float | None = None,
                     ito: bool = False, block: int | None = None) -> Trajectory:
    """Advance (u, u~) for a batch of paths under shared Wiener streams.

    Parameters
    ----------
    rngs : sequence of numpy Generators, one per path, driving both processes.
    aux_rngs : if given, u~ is driven by these independent streams instead
        (the contrast run of the Foias-Prodi test).
    binding : switch the binding drift off entirely when False.
    fp_rate : exponential weight c of the Foias-Prodi statistic; defaults to 1
        for NS and eps*mu_1/8 for CGL.
    ito : also accumulate the terms of the discrete Ito identity for |u|^2.
    """
    b, cfg = model.basis, model.cfg
    u = _as_batch(u0, b).copy()
    ut = _as_batch(ut0, b).copy()
    P = len(rngs)
    if u.shape[0] not in (1, P) or ut.shape[0] not in (1, P):
        raise ValueError(f"{len(rngs)} streams for {max(u.shape[0], ut.shape[0])} paths")
    u = np.broadcast_to(u, (P, b.size)).copy()
    ut = np.broadcast_to(ut, (P, b.size)).copy()
    u0 = u.copy()
    nsteps = int(round(horizon / cfg.dt))
    if abs(nsteps * cfg.dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError("horizon must be a multiple of dt")
    block = block or cfg.steps_per_window
    D = model.noise.dim
    c_fp = (1.0 if model.kind == NS else cfg.eps * model.mu1 / 8.0) if fp_rate is None else fp_rate

    Lu, Lt = EnergyLedger.start(u), EnergyLedger.start(ut)
    h_int = np.zeros(P)
    fp_int = np.zeros(P)
    aborted = np.zeros(P, bool)
    abort_step = np.full(P, -1)
    it_mart = np.zeros(P)
    it_hs = np.zeros(P)
    it_diss = np.zeros(P)

    recs = {k: [] for k in Trajectory.columns}
    recs["fp"] = []

    def record(step):
        t = step * cfg.dt
        r = ut - u
        recs["t"].append(t)
        recs["u_l2"].append(l2sq(u))
        recs["u_h1"].append(h1sq(b, u))
        recs["r_l2"].append(l2sq(r))
        recs["r_h1"].append(h1sq(b, r))
        recs["E_u"].append(Lu.E.copy())
        recs["E_ut"].append(Lt.E.copy())
        recs["h_int"].append(h_int.copy())
        recs["fp"].append(np.exp(c_fp * t) * l2sq(r) + fp_int)

    record(0)
    for start in range(0, nsteps, block):
        nb = min(block, nsteps - start)
        xi = np.stack([g.standard_normal((nb, D)) for g in rngs], axis=1)
        xi_aux = (np.stack([g.standard_normal((nb, D)) for g in aux_rngs], axis=1)
                  if aux_rngs is not None else None)
        for j in range(nb):
            step = start + j
            dW = np.sqrt(cfg.dt) * xi[j]
            F = model.force(np.concatenate([u, ut]))
            Fu, Ft = F[:P], F[P:]
            if ito:
                ur = b.to_real(u)
                it_mart += 2 * np.sum(ur * model.noise.phi_real(u, dW), axis=-1)
                it_hs += cfg.dt * model.noise.hs_sq(u)
            u_new = model.step(u, dW, Fu)
            dWt = dW if xi_aux is None else np.sqrt(cfg.dt) * xi_aux[j]
            if binding:
                ut_new, h = model.aux_step(u, ut, dWt, Fu, Ft)
                h_int += cfg.dt * np.sum(h ** 2, axis=-1)
            else:
                ut_new = model.step(ut, dWt, Ft)
            if model.kind == NS:
                fp_int += cfg.dt * np.exp(c_fp * step * cfg.dt) * h1sq(b, ut - u)
            else:
                fp_int += cfg.dt * np.exp(c_fp * step * cfg.dt) * model.Z(u, ut)
            bad = ~(np.all(np.isfinite(u_new), axis=-1) & np.all(np.isfinite(ut_new), axis=-1))
            bad &= ~aborted
            if bad.any():
                abort_step[bad] = step
                aborted |= bad
            u_new[aborted] = 0.0
            ut_new[aborted] = 0.0
            u, ut = u_new, ut_new
            Lu.update(model, u)
            Lt.update(model, ut)
            if ito:
                it_diss += 2 * cfg.dt * model.energy_rate(u)
            if (step + 1) % record_every == 0:
                record(step + 1)
    out = {k: np.array(v) for k, v in recs.items()}
    for k in out:
        if k != "t":
            out[k][:, aborted] = np.nan
    traj = Trajectory(**out, aborted=aborted, abort_step=abort_step,
                      final_u=u, final_ut=ut)
    if ito:
        traj.ito = dict(martingale=it_mart, hs=it_hs, dissipation=it_diss,
                        l2_start=l2sq(u0), l2_end=l2sq(u))
    return traj


def run_primary(model: Model, u0, nsteps: int, rngs, record_every: int = 1,
                keep_states: bool = True):
    """Single-process batch run; returns (times, states at record points, ledger).

    With ``keep_states=False`` only the initial state is returned.
    """
    b, cfg = model.basis, model.cfg
    u = _as_batch(u0, b).copy()
    P, D = u.shape[0], model.noise.dim
    L = EnergyLedger.start(u)
    ts, us, Es = [0.0], [u.copy()], [L.E.copy()]
    S = cfg.steps_per_window
    for start in range(0, nsteps, S):
        nb = min(S, nsteps - start)
        xi = np.stack([g.standard_normal((nb, D)) for g in rngs], axis=1)
        for j in range(nb):
            u = model.step(u, np.sqrt(cfg.dt) * xi[j])
            if not np.all(np.isfinite(u)):
                raise BlowUpError(start + j, np.flatnonzero(~np.all(np.isfinite(u), axis=-1)))
            L.update(model, u)
            if (start + j + 1) % record_every == 0:
                ts.append((start + j + 1) * cfg.dt)
                if keep_states:
                    us.append(u.copy())
                Es.append(L.E.copy())
    return np.array(ts), np.array(us), np.array(Es)


# ------------------------------------------------------------ field API
def _check(state: SpectralField, model: Model):
    if state.basis is not model.basis:
        raise ValueError("state and model use different bases")


def step_primary(state: SpectralField, inc: WienerIncrement, model: Model,
                 step_index: int = 0) -> SpectralField:
    """One semi-implicit Euler-Maruyama step of the true process."""
    _check(state, model)
    if inc.dt != model.cfg.dt:
        raise ValueError(f"increment dt={inc.dt} differs from solver dt={model.cfg.dt}")
    out = model.step(state.coef, inc.dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(step_index)
    return SpectralField(state.basis, out)


def step_auxiliary(u_ref: SpectralField, ut: SpectralField, inc: WienerIncrement,
                   model: Model, step_index: int = 0) -> SpectralField:
    """One step of u~ with the binding drift, using phi(u~) for the noise."""
    _check(ut, model)
    _check(u_ref, model)
    if inc.dt != model.cfg.dt:
        raise ValueError(f"increment dt={inc.dt} differs from solver dt={model.cfg.dt}")
    out, _ = model.aux_step(u_ref.coef, ut.coef, inc.dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(step_index)
    return SpectralField(ut.basis, out)


def stationary_energy_check(model: Model) -> dict:
    """Constants of the Lyapunov structure: C1 and the ball radius."""
    return {"B0": model.noise.B0, "C1": model.C1, "ball": 2 * model.C1,
            "mu1": model.mu1, "rate": model.dissipation * model.mu1}

