"""Experiment drivers behind the CLI subcommands.

Each driver takes a resolved config dict and returns an :class:`Outcome`:
tables to write as CSV, a JSON-able report and named pass/fail verdicts.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import config as C
from .coupling.engine import (CouplingSettings, calibrate_novikov, mixing_experiment,
                              stationary_pair)
from .diagnostics import (InsufficientData, envelope_dominates, exponential_tail_rate,
                          foias_prodi_statistic, lyapunov_envelope, mixing_rate_report)
from .dynamics import Model, run_coupled_pair, run_primary
from .girsanov import constant_drift_moments, importance_identity
from .rng import stream, streams
from .spectral import NS, l2sq


@dataclass
class Table:
    columns: list
    rows: list


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)     # partial failures (blown paths, ...)

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())


def _series_table(columns, *cols) -> Table:
    return Table(list(columns), [list(r) for r in zip(*cols)])


def _record_every(model: Model, per_window: int = 20) -> int:
    return max(1, model.cfg.steps_per_window // per_window)


def _blown(outcome: Outcome, what: str, count: int):
    if count:
        outcome.failures.append({"stage": what, "blown_paths": int(count)})


# ------------------------------------------------------------------ lyapunov
def lyapunov(cfg: dict) -> Outcome:
    model = C.build(cfg)
    b, run = model.basis, cfg["run"]
    P = run["paths"]
    W = cfg["lyapunov"]["windows"]
    u0 = b.random(stream(run["seed"], 0, "init1"), (), cfg["initial"].get("decay", 1.0),
                  cfg["lyapunov"]["init_scale"])
    every = _record_every(model)
    ts, us, Es = run_primary(model, np.broadcast_to(u0, (P, b.size)),
                             W * model.cfg.steps_per_window, streams(run["seed"], range(P), "w1"),
                             record_every=every)
    l2 = l2sq(us)
    rate = model.dissipation * model.mu1
    env = lyapunov_envelope(ts, l2, float(l2sq(u0)), rate, model.C1)
    # growth from rest, so the supremum has no atom at t = 0
    tg, _, Eg = run_primary(model, np.zeros((P, b.size)), W * model.cfg.steps_per_window,
                            streams(run["seed"], range(P), "growth"), keep_states=False)
    growth = np.max(Eg - model.noise.B0 * tg[:, None], axis=0)
    out = Outcome()
    try:
        tail = exponential_tail_rate(growth, cfg["lyapunov"]["tail_fraction"])
    except InsufficientData as exc:
        tail = {"rate": float("nan"), "lo": float("nan"), "error": str(exc)}
    out.tables["lyapunov.csv"] = _series_table(
        ["t", "mean_l2sq", "se_l2sq", "bound", "mean_energy_ledger"],
        ts, env["mean"], env["se"], env["bound"], Es.mean(axis=1))
    out.tables["growth.csv"] = _series_table(["path", "sup_excess"], range(P), growth)
    out.report = {"C1": model.C1, "B0": model.noise.B0, "rate": rate, "u0_l2sq": float(l2sq(u0)),
                  "envelope_ok": env["ok"], "worst_margin": env["worst_margin"],
                  "growth_tail": tail, "tail_hs_mass": model.noise.tail_hs_mass()}
    out.verdicts = {"envelope": env["ok"], "growth_tail_positive": bool(tail["lo"] > 0)}
    return out


# --------------------------------------------------------------- foias-prodi
def _with(cfg: dict, **sections) -> dict:
    new = copy.deepcopy(cfg)
    for sec, kv in sections.items():
        new.setdefault(sec, {}).update(kv)
    return new


def foias_prodi(cfg: dict) -> Outcome:
    run, dia, fp = cfg["run"], cfg["diagnostics"], cfg["foiasprodi"]
    model = C.build(cfg)
    seed, P = run["seed"], run["paths"]
    horizon = fp["windows"] * model.cfg.T
    every = fp["record_every"]
    eps = dia["eps_exp"]
    u1, u2 = stationary_pair(model, seed)
    out = Outcome()

    main = run_coupled_pair(model, u1, u2, horizon, streams(seed, range(P), "w1"),
                            record_every=every)
    st = foias_prodi_statistic(main, eps, min_paths=min(P, 100), discard=dia["discard"],
                               bootstrap=dia["bootstrap"], rng=stream(seed, 0, "boot"),
                               resolution=dia["fit_floor"])
    _blown(out, "binding run", main.aborted.sum())

    # contrast: no binding, independent noise for u~, nearby start so r can grow
    bump = 1e-3 * model.basis.random(stream(seed, 0, "bump"))
    ctrl = run_coupled_pair(model, u1, u1 + bump, horizon, streams(seed, range(P), "w1"),
                            aux_rngs=streams(seed, range(P), "w2"), binding=False,
                            record_every=every)
    cst = foias_prodi_statistic(ctrl, eps, min_paths=min(P, 100), discard=dia["discard"],
                                bootstrap=dia["bootstrap"], rng=stream(seed, 1, "boot"),
                                resolution=dia["fit_floor"],
                                span="horizon")
    _blown(out, "control run", ctrl.aborted.sum())

    lin_cfg = _with(cfg, solver={"linear": True}, noise={"modulation": "constant"})
    lin = C.build(lin_cfg)
    lin_traj = run_coupled_pair(lin, u1, u2, horizon, streams(seed, range(P), "w1"),
                                record_every=every)
    lst = foias_prodi_statistic(lin_traj, 1.0, min_paths=min(P, 100), discard=dia["discard"],
                                bootstrap=dia["bootstrap"], rng=stream(seed, 2, "boot"),
                                resolution=dia["fit_floor"])
    target = 2 * (lin.dissipation * lin.mu1 + lin.cfg.K)
    lin_err = abs(lst["fit"].rate / target - 1)

    out.tables["foiasprodi.csv"] = _series_table(
        ["t", "statistic", "r_moment", "control_statistic", "control_r_moment",
         "linear_r_moment"],
        main.t, st["statistic"], st["r_moment"], cst["statistic"], cst["r_moment"],
        lst["r_moment"])
    out.report = {"K": model.cfg.K, "N": model.cfg.N, "eps_exp": eps,
                  "fit": st["fit"].to_dict(), "control_fit": cst["fit"].to_dict(),
                  "linear_fit": lst["fit"].to_dict(), "linear_target": target,
                  "linear_relative_error": lin_err, "bounded_ratio": st["bounded_ratio"],
                  "pair_energy": [float(l2sq(u1)), float(l2sq(u2))]}
    out.verdicts = {"binding_decays": st["fit"].decaying,
                    "control_not_decaying": bool(cst["fit"].degenerate or cst["fit"].lo <= 0)}
    out.verdicts["linear_rate"] = bool(lin_err <= 0.10)
    return out


# ------------------------------------------------------------------ girsanov
def girsanov_check(cfg: dict) -> Outcome:
    g, run = cfg["girsanov"], cfg["run"]
    rng = stream(run["seed"], 0, "girsanov")
    rows = [constant_drift_moments(float(h), rng, g["samples"]) for h in g["drifts"]]
    ident = importance_identity(0.8, lambda X: np.tanh(X[-1]) + (X.max(axis=0) > 1.0), rng,
                                g["samples"])
    pipe = _with(cfg, run={"paths": g["paths"], "windows": g["windows"]},
                 coupling={"mode": "window"})
    rep, settings, cal = _mixing_run(pipe, fit=False)
    table = rep.second_moments()
    out = Outcome()
    out.tables["girsanov_constant.csv"] = Table(
        ["h", "samples", "mean", "mean_se", "second", "second_se", "second_exact"],
        [[r[k] for k in ("h", "samples", "mean", "mean_se", "second", "second_se",
                         "second_exact")] for r in rows])
    out.tables["girsanov_windows.csv"] = _window_table(rep)
    out.tables["girsanov_moments.csv"] = Table(
        ["age", "windows", "theta", "mean_density", "second_moment", "se", "bound"],
        [[r[k] for k in ("age", "windows", "theta", "mean_density", "second_moment", "se",
                         "bound")] for r in table])
    stopped = np.exp(rep.log_density)
    out.report = {"constant": rows, "importance": ident, "pipeline": table,
                  "stopped_mean": float(stopped.mean()),
                  "stopped_se": float(stopped.std(ddof=1) / np.sqrt(stopped.size)),
                  "calibration": cal, "settings": settings.__dict__}
    out.verdicts = {"martingale_mean": all(r["mean_ok"] for r in rows),
                    "second_moment": all(r["second_ok"] for r in rows),
                    "importance_identity": ident["ok"],
                    "pipeline_second_moment": all(r["ok"] for r in table)}
    return out


# -------------------------------------------------------------------- mixing
def coupling_settings(cfg: dict, model: Model) -> tuple[CouplingSettings, dict | None]:
    c = cfg["coupling"]
    cal = None
    C_hat, gamma = c["C_hat"], c["gamma_hat"]
    if "auto" in (C_hat, gamma):
        cal = calibrate_novikov(model, cfg["run"]["seed"], c["pilot_paths"], c["quantile"],
                                cfg["diagnostics"]["eps_exp"])
        C_hat = cal["C_hat"] if C_hat == "auto" else C_hat
        gamma = cal["gamma_hat"] if gamma == "auto" else gamma
    return CouplingSettings(c["mode"], float(C_hat), float(gamma), c["theta_floor"],
                            c["max_residual"]), cal


def _mixing_run(cfg: dict, fit: bool = True, noise_off: bool = False):
    model = C.build(cfg)
    settings, cal = coupling_settings(cfg, model)
    u1, u2 = C.initial_pair(cfg, model.basis)
    run, dia = cfg["run"], cfg["diagnostics"]
    rep = mixing_experiment(model, u1, u2, paths=run["paths"], windows=run["windows"],
                            seed=run["seed"], settings=settings, chunk_size=run["chunk_size"],
                            workers=C.workers(cfg), noise_off=noise_off, fit=fit,
                            discard=dia["discard"], bootstrap=dia["bootstrap"],
                            record_every=dia["record_every"], fit_span=dia["fit_span"],
                            fit_floor=dia["fit_floor"])
    return rep, settings, cal


def reference_run(cfg: dict, model: Model) -> dict:
    """Long single-path stationary run: energy and first coefficient samples."""
    dia, seed = cfg["diagnostics"], cfg["run"]["seed"]
    S = model.cfg.steps_per_window
    total = (dia["reference_burn"] + dia["reference_windows"]) * S
    u0 = model.basis.random(stream(seed, 0, "refinit"), (), 1.0, 0.1)
    _, us, _ = run_primary(model, u0[None], total, [stream(seed, 0, "reference")],
                           record_every=dia["reference_every"])
    keep = us[1 + dia["reference_burn"] * S // dia["reference_every"]:, 0]
    return {"energy": l2sq(keep), "mode1": np.real(keep[:, 0])}


def _window_table(rep) -> Table:
    W, P = rep.glued.shape
    rows = []
    for i in range(P):
        l0 = rep.ledgers[i].l0
        for k in range(W):
            rows.append([i, k, int(rep.energy_sum[k, i] <= 2 * rep.C1), int(rep.glued[k, i]),
                         int(rep.tripped[k, i]), int(rep.accepted[k, i]), int(rep.age[k, i]),
                         rep.theta[k, i], rep.integral[k, i], rep.log_density[k, i],
                         l0[k], int(rep.residual_tries[k, i])])
    return Table(["path", "window", "ball", "glued", "tripped", "accepted", "age", "theta",
                  "h_integral", "log_density", "l0", "residual_tries"], rows)


def mixing(cfg: dict) -> Outcome:
    rep, settings, cal = _mixing_run(cfg)
    model = C.build(cfg)
    dia = cfg["diagnostics"]
    out = Outcome()
    _blown(out, "mixing", rep.blown.sum())
    ref = reference_run(cfg, model)
    try:
        rr = mixing_rate_report(rep, ref, discard=dia["discard"], bootstrap=dia["bootstrap"],
                                rng=stream(cfg["run"]["seed"], 0, "boot"),
                                span=dia["fit_span"], floor=dia["fit_floor"])
    except InsufficientData as exc:
        out.failures.append({"stage": "reference", "error": str(exc)})
        rr = mixing_rate_report(rep, None, discard=dia["discard"], bootstrap=dia["bootstrap"],
                                rng=stream(cfg["run"]["seed"], 0, "boot"),
                                span=dia["fit_span"], floor=dia["fit_floor"])
    ts, ds = rep.distance_series()
    fit = rep.fit
    cp = rep.coupling_probability(cfg["coupling"]["min_followup"])
    se = ds.std(axis=1, ddof=1) / np.sqrt(ds.shape[1])
    out.tables["mixing.csv"] = _series_table(
        ["t", "mean_distance", "se_distance", "mean_energy_u1", "mean_energy_u2"],
        rep.t, rep.dist.mean(axis=1), rep.dist.std(axis=1, ddof=1) / np.sqrt(rep.dist.shape[1]),
        rep.observables["energy"].mean(axis=1), rep.observables2["energy"].mean(axis=1))
    out.tables["mixing_fine.csv"] = _series_table(
        ["t", "mean_distance", "se_distance", "envelope"], ts, ds.mean(axis=1), se,
        fit.envelope(ts) if not fit.degenerate else [float("nan")] * ts.size)
    out.tables["windows.csv"] = _window_table(rep)
    out.tables["ladder.csv"] = Table(
        ["path", "delta", "sigma", "held", "first_window_glued"],
        [[i, e["delta"], e["sigma"], int(e["held"]), int(e["first_window_glued"])]
         for i, led in enumerate(rep.ledgers) for e in led.entries(1)])
    if "wasserstein" in rr:
        names = sorted(rr["wasserstein"])
        out.tables["wasserstein.csv"] = _series_table(
            ["t"] + [f"w1_{n}" for n in names], rep.t,
            *[rr["wasserstein"][n]["series"] for n in names])
        for n in names:
            rr["wasserstein"][n].pop("series")
    summary = rep.summary()
    summary.pop("second_moments")
    out.report = {"fitted_rate": fit.rate, "fit": fit.to_dict(),
                  "envelope_dominates": envelope_dominates(fit, ts, ds.mean(axis=1)),
                  "coupling_probability": cp, "summary": summary, "rate_report": rr,
                  "calibration": cal, "settings": settings.__dict__,
                  "horizon": rep.t[-1], "record_every": dia["record_every"]}
    out.verdicts = {"rate_positive": fit.decaying,
                    "envelope_dominates": out.report["envelope_dominates"]}
    return out


# --------------------------------------------------------------------- sweep
def couple_sweep(cfg: dict) -> Outcome:
    sw = cfg["sweep"]
    rows = []
    out = Outcome()
    for K in sw["K"]:
        for N in sw["N"]:
            for T in sw["T"]:
                sub = _with(cfg, solver={"K": float(K), "N": int(N), "T": float(T)},
                            run={"paths": sw["paths"], "windows": sw["windows"]})
                try:
                    problems = C.validate(sub)
                    if problems:
                        raise ValueError("; ".join(problems))
                    rep, settings, _ = _mixing_run(sub, fit=False)
                except (ValueError, InsufficientData) as exc:
                    out.failures.append({"K": K, "N": N, "T": T, "error": str(exc)})
                    continue
                cp = rep.coupling_probability(1)
                l0 = rep.l0_final()
                fin = l0[np.isfinite(l0)]
                q = np.quantile(fin, [0.5, 0.9]) if fin.size else [np.nan, np.nan]
                rows.append([K, N, T, settings.C_hat, settings.gamma_hat,
                             float(rep.glued.mean()), float(rep.tripped.mean()), cp["entries"],
                             cp["p0_hat"], cp["p1_hat"], q[0], q[1],
                             int(l0.size - fin.size)])
    cols = ["K", "N", "T", "C_hat", "gamma_hat", "window_glued_fraction", "trip_fraction",
            "ball_entries", "p_held", "p_first_window", "l0_median", "l0_q90", "l0_never"]
    out.tables["sweep.csv"] = Table(cols, rows)
    out.report = {"rows": [dict(zip(cols, r)) for r in rows]}
    out.verdicts = {"grid_complete": not out.failures}
    return out


COMMANDS = {"lyapunov": lyapunov, "foiasprodi": foias_prodi, "girsanov-check": girsanov_check,
            "mixing": mixing, "couple-sweep": couple_sweep}
