"""Command-line entry point: ``ergodiq <command> [flags]``.

Exit status: 0 all verdicts pass, 1 a verdict failed, 2 configuration error,
3 partial failure (some paths or stages failed; see failures.json).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as C
from .dynamics import ConfigError

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

# --horizon sets the window count of the section each command reads
HORIZON_KEY = {"lyapunov": "lyapunov.windows", "foiasprodi": "foiasprodi.windows",
               "girsanov-check": "girsanov.windows", "mixing": "run.windows",
               "couple-sweep": "sweep.windows"}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodiq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ergodiq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("lyapunov", "foiasprodi", "girsanov-check", "mixing", "couple-sweep",
                 "selftest"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML file layered over its preset")
        s.add_argument("--preset", help="base preset (ns or cgl) when no file names one")
        s.add_argument("--seed", type=int, help="64-bit master seed")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--paths", type=int, help="ensemble size")
        s.add_argument("--horizon", type=float, help="simulated time, a multiple of T")
        s.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config entry")
        if name == "selftest":
            s.add_argument("--quick", action="store_true", help="skip the slower checks")
    return p


def resolve(args) -> dict:
    """Config with flags applied as overrides (flags win over --set)."""
    over = list(args.overrides)
    for flag, key in (("seed", "run.seed"), ("paths", "run.paths"),
                      ("workers", "run.workers")):
        v = getattr(args, flag)
        if v is not None:
            over.append(f"{key}={v}")
    if args.out is not None:
        over.append(f"run.out={json.dumps(str(args.out))}")
    cfg = C.load(args.config, over, args.preset)
    if args.horizon is not None:
        T = cfg["solver"]["T"]
        n = args.horizon / T
        if n < 1 or abs(n - round(n)) > 1e-9:
            raise ConfigError([f"horizon {args.horizon} is not a positive multiple of T={T}"])
        sec, key = HORIZON_KEY.get(args.command, "run.windows").split(".")
        cfg[sec][key] = int(round(n))
        problems = C.validate(cfg)
        if problems:
            raise ConfigError(problems)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return repr(f) if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return str(v)


def write_csv(path: Path, table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def versions() -> dict:
    return {"ergodiq": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run_command(command: str, cfg: dict, quick: bool = False) -> tuple[int, dict]:
    from .experiments import COMMANDS
    from .selftest import run_selftest

    out_dir = Path(cfg["run"]["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.toml").write_text(C.to_toml(cfg), encoding="utf-8")
    t0 = time.perf_counter()
    artifacts = ["config.toml"]
    if command == "selftest":
        results = run_selftest(quick=quick)
        from .experiments import Table
        write_csv(out_dir / "selftest.csv",
                  Table(["check", "ok", "seconds", "detail"],
                        [[r["name"], r["ok"], r["seconds"], r["detail"]] for r in results]))
        artifacts.append("selftest.csv")
        verdicts = {r["name"]: r["ok"] for r in results}
        failures = []
        report = {"checks": results}
    else:
        outcome = COMMANDS[command](cfg)
        for name, table in outcome.tables.items():
            write_csv(out_dir / name, table)
            artifacts.append(name)
        report, verdicts, failures = outcome.report, outcome.verdicts, outcome.failures
        report = dict(report, verdicts=verdicts)
        rname = command.replace("-", "_") + "_report.json"
        write_json(out_dir / rname, report)
        artifacts.append(rname)
    if failures:
        write_json(out_dir / "failures.json", failures)
        artifacts.append("failures.json")
    code = (EXIT_PARTIAL if failures else EXIT_OK if all(verdicts.values()) else EXIT_VERDICT)
    manifest = {"command": command, "config_hash": C.config_hash(cfg),
                "seed": cfg["run"]["seed"], "versions": versions(),
                "wall_time_s": time.perf_counter() - t0, "exit_code": code,
                "verdicts": verdicts, "artifacts": sorted(artifacts + ["manifest.json"])}
    write_json(out_dir / "manifest.json", manifest)
    return code, manifest


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print("configuration errors:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, manifest = run_command(args.command, cfg, getattr(args, "quick", False))
    bad = [k for k, v in manifest["verdicts"].items() if not v]
    print(f"{args.command}: exit {code}; outputs in {cfg['run']['out']}")
    for k in bad:
        print(f"  failed: {k}")
    return code


if __name__ == "__main__":
    sys.exit(main())
