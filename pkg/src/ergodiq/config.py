"""Run configuration: TOML presets, dotted overrides, validation, model assembly."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

from .dynamics import ConfigError, Model, SolverConfig
from .noise import CovarianceModel, Modulation, lipschitz_witness, witness_pairs
from .rng import stream
from .spectral import CGL, NS, GalerkinBasis

PRESETS = {"ns": "ns_default.toml", "cgl": "cgl_default.toml"}

# section -> key -> accepted python types
SCHEMA = {
    "run": {"equation": str, "preset": str, "seed": int, "paths": int, "windows": int,
            "workers": int, "chunk_size": int, "out": str},
    "basis": {"grid": int, "modes": int},
    "solver": {"dt": float, "T": float, "N": int, "K": (float, str), "nu": float, "eps": float,
               "eta": float, "lam": float, "sigma": float, "L": (float, str),
               "linear": bool, "step_consistent": bool},
    "noise": {"variant": str, "b0": float, "c0": float, "decay": float, "modulation": str,
              "value": float, "fmax": float, "perturb_eps": float, "perturb_seed": int,
              "witness_pairs": int},
    "initial": {"scale1": float, "scale2": float, "decay": float},
    "coupling": {"mode": str, "C_hat": (float, str), "gamma_hat": (float, str),
                 "theta_floor": float, "max_residual": int, "pilot_paths": int,
                 "quantile": float, "min_followup": int},
    "diagnostics": {"eps_exp": float, "discard": float, "bootstrap": int, "fit_span": str,
                    "fit_floor": float, "record_every": int, "level": float,
                    "reference_windows": int, "reference_burn": int, "reference_every": int},
    "lyapunov": {"windows": int, "init_scale": float, "tail_fraction": float},
    "foiasprodi": {"windows": int, "record_every": int},
    "girsanov": {"samples": int, "drifts": list, "windows": int, "paths": int},
    "sweep": {"K": list, "N": list, "T": list, "paths": int, "windows": int},
}


def load_preset(name: str) -> dict:
    text = resources.files("ergodiq.presets").joinpath(PRESETS.get(name, name)).read_text("utf-8")
    return tomllib.loads(text)


def load(path: str | Path | None = None, overrides=(), preset: str | None = None) -> dict:
    """Preset merged with the file at ``path`` and ``section.key=value`` overrides.

    The file names its base preset through ``run.preset`` (default ``ns``); keys
    it sets replace the preset's.
    """
    user = {}
    if path is not None:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    name = preset or user.get("run", {}).get("preset", "ns")
    try:
        cfg = load_preset(name)
    except FileNotFoundError as exc:
        raise ConfigError([f"unknown preset {name!r}"]) from exc
    merge(cfg, user)
    cfg["run"]["preset"] = name
    problems = []
    for item in overrides:
        try:
            apply_override(cfg, item)
        except ValueError as exc:
            problems.append(str(exc))
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def merge(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            merge(base[k], v)
        else:
            base[k] = copy.deepcopy(v)
    return base


def parse_value(text: str):
    """A TOML literal when it parses as one, else the bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ValueError(f"override {item!r} is not of the form section.key=value")
    key, _, text = item.partition("=")
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ValueError(f"override key {key!r} must be section.key")
    sec, name = parts
    cfg.setdefault(sec, {})[name] = parse_value(text.strip())


def validate(cfg: dict) -> list[str]:
    """Every schema and precondition violation, as readable strings."""
    out = []
    for sec, body in cfg.items():
        if sec not in SCHEMA:
            out.append(f"unknown section [{sec}]")
            continue
        if not isinstance(body, dict):
            out.append(f"[{sec}] must be a table")
            continue
        for k, v in body.items():
            want = SCHEMA[sec].get(k)
            if want is None:
                out.append(f"unknown key {sec}.{k}")
                continue
            types = want if isinstance(want, tuple) else (want,)
            ok = any(isinstance(v, t) and not (t in (int, float) and isinstance(v, bool))
                     for t in types) or (float in types and isinstance(v, int)
                                         and not isinstance(v, bool))
            if not ok:
                out.append(f"{sec}.{k} = {v!r} has the wrong type")
    if out:
        return out
    run, sol, noi, cpl, dia = (cfg.get(s, {}) for s in
                               ("run", "solver", "noise", "coupling", "diagnostics"))
    if run.get("equation") not in (NS, CGL):
        out.append(f"run.equation must be 'ns' or 'cgl', got {run.get('equation')!r}")
    for k in ("paths", "windows", "chunk_size"):
        if run.get(k, 1) < 1:
            out.append(f"run.{k} must be positive")
    if not 0 <= run.get("seed", 0) < 2 ** 64:
        out.append("run.seed must fit in 64 bits")
    if run.get("workers", 0) < 0:
        out.append("run.workers must be nonnegative (0 means all cores)")
    for k in ("K", "L"):
        v = sol.get(k)
        if isinstance(v, str) and v != "auto":
            out.append(f"solver.{k} must be a number or 'auto'")
    if sol.get("L") == "auto" and run.get("equation") != CGL:
        out.append("solver.L = 'auto' only applies to CGL")
    if noi.get("variant", "additive") not in ("additive", "perturbed"):
        out.append("noise.variant must be 'additive' or 'perturbed'")
    if noi.get("modulation", "inverse") not in ("constant", "inverse", "saturated"):
        out.append("noise.modulation must be constant, inverse or saturated")
    if noi.get("modulation") == "constant" and noi.get("value", 1.0) < 0:
        out.append("noise.value must be nonnegative for a constant modulation")
    if cpl.get("mode", "increment") not in ("window", "increment", "forced"):
        out.append("coupling.mode must be window, increment or forced")
    for k in ("C_hat", "gamma_hat"):
        v = cpl.get(k, "auto")
        if isinstance(v, str) and v != "auto":
            out.append(f"coupling.{k} must be a number or 'auto'")
        if not isinstance(v, str) and v < 0:
            out.append(f"coupling.{k} must be nonnegative")
    if not 0 < dia.get("eps_exp", 0.25) <= 1:
        out.append("diagnostics.eps_exp must lie in (0, 1]")
    if not 0 <= dia.get("discard", 0.2) < 1:
        out.append("diagnostics.discard must lie in [0, 1)")
    if dia.get("fit_span", "resolved") not in ("horizon", "resolved"):
        out.append("diagnostics.fit_span must be horizon or resolved")
    if run.get("equation") in (NS, CGL):
        basis = noise = None
        try:
            basis = make_basis(cfg)
            noise = make_noise(cfg, basis)
        except (ValueError, TypeError) as exc:
            out.append(str(exc))
        try:
            sc = solver_config(cfg, basis, noise, K_default=0.0)
            out += sc.problems(basis if noise is not None else None, noise)
        except (ValueError, TypeError) as exc:
            out.append(str(exc))
    return out


# ------------------------------------------------------------------ assembly
def make_basis(cfg: dict) -> GalerkinBasis:
    b = cfg.get("basis", {})
    if cfg["run"]["equation"] == NS:
        return GalerkinBasis.ns_torus(b.get("grid", 16))
    return GalerkinBasis.cgl_dirichlet(b.get("modes", 64), cfg["solver"].get("sigma", 1.0))


def make_noise(cfg: dict, basis: GalerkinBasis) -> CovarianceModel:
    n, N = cfg.get("noise", {}), cfg["solver"]["N"]
    mod = Modulation(n.get("modulation", "inverse"), n.get("value", 1.0), n.get("fmax", 2.0),
                     cfg["solver"].get("sigma", 1.0))
    kw = dict(b0=n.get("b0", 1.0), c0=n.get("c0", 0.5), decay=n.get("decay", 1.0),
              modulation=mod)
    if n.get("variant", "additive") == "perturbed":
        return CovarianceModel.perturbed(basis, N, n.get("perturb_eps", 0.1),
                                         n.get("perturb_seed", 0), **kw)
    return CovarianceModel.default(basis, N, **kw)


def lipschitz_gain(cfg: dict, basis: GalerkinBasis, noise: CovarianceModel) -> float:
    """Witness estimate of the local Lipschitz constant of phi, used as K_L."""
    rng = stream(cfg["run"]["seed"], 0, "witness")
    pairs = witness_pairs(basis, rng, cfg.get("noise", {}).get("witness_pairs", 400))
    return lipschitz_witness(noise, pairs)


def solver_config(cfg: dict, basis=None, noise=None, K_default: float | None = None) -> SolverConfig:
    s = dict(cfg["solver"])
    for key in ("K", "L"):
        if s.get(key) == "auto":
            s[key] = (lipschitz_gain(cfg, basis, noise) if K_default is None else K_default)
    if s.get("L") is None:
        s.pop("L", None)
    return SolverConfig(**s)


def build(cfg: dict) -> Model:
    basis = make_basis(cfg)
    noise = make_noise(cfg, basis)
    return Model(basis, noise, solver_config(cfg, basis, noise))


def initial_pair(cfg: dict, basis: GalerkinBasis):
    ini = cfg.get("initial", {})
    seed = cfg["run"]["seed"]
    decay = ini.get("decay", 1.0)
    u1 = basis.random(stream(seed, 0, "init1"), (), decay, ini.get("scale1", 0.3))
    u2 = basis.random(stream(seed, 0, "init2"), (), decay, ini.get("scale2", 0.3))
    return u1, u2


def workers(cfg: dict) -> int:
    import os
    w = cfg["run"].get("workers", 0)
    return w if w > 0 else (os.cpu_count() or 1)


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results; the output directory is left out."""
    keyed = {sec: {k: v for k, v in vals.items() if (sec, k) != ("run", "out")}
             for sec, vals in cfg.items()}
    return hashlib.sha256(canonical(keyed).encode()).hexdigest()


def to_toml(cfg: dict) -> str:
    """Serialize the resolved config (flat tables of scalars and lists)."""
    lines = []
    for sec in cfg:
        lines.append(f"[{sec}]")
        for k, v in cfg[sec].items():
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)
