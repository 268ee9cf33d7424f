"""Command line: ``bandtrack run|validate|list``.

Configuration is a flat ``key = value`` file (``#`` starts a comment, lists
are comma separated) layered over the experiment defaults; command line flags
win over the file.  Every CSV starts with ``#`` lines recording the code
version and the resolved configuration.

Exit codes: 0 all criteria pass, 1 an acceptance criterion failed, 2 invalid
configuration, 3 numerical abort or NaN in the results.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .bounds import BoundReport, write_bound_csv
from .experiments import DEFAULTS, DESCRIPTIONS, EXPERIMENTS, Table
from .models import RiccatiBlowUp
from .paths import NumericalAbort

__all__ = ["ConfigError", "load_config", "resolve_config", "validate_config", "write_outputs", "main"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("workers", "output_dir")
SUMMARY_COLUMNS = ["name", "observed", "expected", "tolerance", "pass"]
STRING_KEYS = ("target", "output_dir")
INT_KEYS = ("n_paths", "master_seed", "workers", "d", "refine", "ko_paths", "refine_paths", "ledger_paths")


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in STRING_KEYS:
        return raw
    if key.endswith("_grid"):
        return [float(x) for x in raw.split(",") if x.strip()]
    if raw.lower() in ("none", ""):
        return None
    if key in INT_KEYS:
        return int(raw)
    return float(raw)


def load_config(path) -> dict:
    """Read a ``key = value`` file; errors name the offending line."""
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: missing key")
        if key == "experiment":
            cfg[key] = raw
            continue
        try:
            cfg[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: cannot parse value {raw!r} for {key!r}") from None
    return cfg


def resolve_config(experiment: str, file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file, then command line overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = dict(DEFAULTS[experiment])
    for layer in (file_cfg or {}), (overrides or {}):
        cfg.update({k: v for k, v in layer.items() if k != "experiment"})
    return cfg


def _band_widths(experiment: str, cfg: dict) -> list:
    if "delta_grid" in cfg:
        return list(cfg["delta_grid"])
    if "delta" in cfg:
        return [cfg["delta"]]
    eps = [e for e in cfg.get("epsilon_grid", []) if 0 < e < 1]
    power = 1 / 3 if experiment == "utility_loss" else 1 / 2
    return [e**power for e in eps]


def validate_config(experiment: str, cfg: dict) -> list:
    """Return one message per violated rule; empty if the config is usable."""
    if experiment not in EXPERIMENTS:
        return [f"experiment: unknown experiment {experiment!r}"]
    out = []
    known = set(DEFAULTS[experiment])
    # keys that do not apply to this experiment are errors, not silent no-ops
    for key in sorted(set(cfg) - known - {"experiment"}):
        out.append(f"{key}: unknown key for experiment {experiment!r}")
    cfg = {k: v for k, v in cfg.items() if k in known}
    for key in sorted(k for k, v in cfg.items() if v is None and DEFAULTS[experiment][k] is not None):
        out.append(f"{key}: a value is required")

    def need(key, ok, rule):
        if key in cfg and cfg[key] is not None and not ok(cfg[key]):
            out.append(f"{key}: {rule} (got {cfg[key]!r})")

    for e in cfg.get("epsilon_grid") or []:
        if not 0 < e < 1:
            out.append(f"epsilon_grid: epsilon must lie in (0,1) (got {e!r})")
    if "epsilon_grid" in cfg and not cfg["epsilon_grid"]:
        out.append("epsilon_grid: empty grid")
    for d in cfg.get("delta_grid") or []:
        if not 0 < d < 1:
            out.append(f"delta_grid: delta must lie in (0,1) (got {d!r})")
    if "delta_grid" in cfg and not cfg["delta_grid"]:
        out.append("delta_grid: empty grid")
    need("delta", lambda v: 0 < v < 1, "delta must lie in (0,1)")
    need("T", lambda v: v > 0, "T must be positive")
    need("n_paths", lambda v: v >= 1, "n_paths must be at least 1")
    need("workers", lambda v: v >= 1, "workers must be at least 1")
    need("dt", lambda v: v > 0, "dt must be positive")
    need("dt_ratio", lambda v: v >= 100, "grid coupling rule needs dt_ratio >= 100")
    need("p", lambda v: v >= 1, "p must be at least 1")
    need("sigma_S", lambda v: v > 0, "sigma_S must be positive")
    need("r", lambda v: v > 0, "risk aversion r must be positive")
    need("rho", lambda v: -1 <= v <= 1, "rho must lie in [-1,1]")
    need("target_rho", lambda v: -1 <= v <= 1, "target_rho must lie in [-1,1]")
    need("lambda_rev", lambda v: v > 0, "lambda_rev must be positive")
    need("sigma_mu", lambda v: v >= 0, "sigma_mu must be nonnegative")
    need("refine", lambda v: v >= 2, "refine must be at least 2")
    need("d", lambda v: v >= 1, "d must be at least 1")
    need("iota", lambda v: v > 0, "iota must be positive")
    need("target", lambda v: v in ("kim_omberg", "merton", "pure_brownian"), "unsupported target")
    need("S0", lambda v: v > 0, "S0 must be positive")
    dt = cfg.get("dt")
    widths = [w for w in _band_widths(experiment, cfg) if 0 < w < 1]
    if dt is not None and dt > 0 and widths:
        dmin = min(widths)
        if dt > dmin**2 / 100 * (1 + 1e-9):
            out.append(f"dt: grid coupling rule dt <= delta_min^2/100 violated "
                       f"(dt={dt!r}, delta_min={dmin!r}, limit={dmin**2 / 100!r})")
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _header(experiment: str, cfg: dict) -> str:
    lines = [f"# bandtrack {__version__}", f"# experiment = {experiment}"]
    lines += [f"# {k} = {_fmt(cfg[k])}" for k in sorted(cfg) if k not in EXECUTION_KEYS]
    return "\n".join(lines) + "\n"


def write_outputs(result, cfg: dict, out_dir) -> list:
    """Write every table of `result` plus ``summary.csv``; returns the paths."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(result.name, cfg)
    tables = dict(result.tables)
    tables["summary.csv"] = Table(SUMMARY_COLUMNS, [[c.name, c.observed, c.expected, c.tolerance, c.passed]
                                                    for c in result.criteria])
    written = []
    for name, table in tables.items():
        path = out / name
        with open(path, "w", newline="") as fh:
            fh.write(header)
            if isinstance(table, Table):
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(table.columns)
                w.writerows([[_fmt(v) for v in row] for row in table.rows])
            elif all(isinstance(r, BoundReport) for r in table):
                write_bound_csv(table, fh)
            else:
                raise TypeError(f"cannot serialize table {name!r}")
        written.append(path)
    return written


def _has_nan(result) -> bool:
    for c in result.criteria:
        if isinstance(c.observed, float) and math.isnan(c.observed):
            return True
    for table in result.tables.values():
        if isinstance(table, Table):
            for row in table.rows:
                if any(isinstance(v, float) and math.isnan(v) for v in row):
                    return True
    return False


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bandtrack", description="Band tracking under proportional costs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, dest="master_seed")
        p.add_argument("--paths", type=int, dest="n_paths")
        p.add_argument("--dt", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--lambda", type=float, dest="lam")
        p.add_argument("--workers", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    run = sub.add_parser("run", help="run an experiment and write CSVs")
    run.add_argument("experiment", nargs="?")
    run.add_argument("--out", dest="output_dir")
    common(run)
    val = sub.add_parser("validate", help="check a configuration")
    val.add_argument("experiment", nargs="?")
    common(val)
    sub.add_parser("list", help="list experiments")
    return ap


def _overrides(args, experiment: str) -> dict:
    ov = {}
    for key in ("master_seed", "n_paths", "dt", "workers", "output_dir"):
        v = getattr(args, key, None)
        if v is not None:
            ov[key] = v
    if args.delta is not None:
        ov["delta_grid" if "delta_grid" in DEFAULTS.get(experiment, {}) else "delta"] = (
            [args.delta] if "delta_grid" in DEFAULTS.get(experiment, {}) else args.delta)
    if args.epsilon is not None:
        ov["epsilon_grid"] = [args.epsilon]
    if args.lam is not None:
        ov["lambda"] = args.lam
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, raw = (s.strip() for s in item.split("=", 1))
        try:
            ov[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigError(f"--set {item!r}: cannot parse value") from None
    return ov


def _prepare(args):
    file_cfg = load_config(args.config) if args.config else {}
    experiment = args.experiment or file_cfg.get("experiment")
    if experiment is None:
        raise ConfigError("no experiment given (argument or 'experiment' key)")
    overrides = _overrides(args, experiment)
    cfg = resolve_config(experiment, file_cfg, overrides)
    return experiment, cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name in EXPERIMENTS:
            print(f"{name:16s} {DESCRIPTIONS[name]}")
        return EXIT_OK
    try:
        experiment, cfg = _prepare(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate_config(experiment, cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{experiment}: configuration ok")
        return EXIT_OK
    try:
        result = EXPERIMENTS[experiment](cfg)
    except (NumericalAbort, RiccatiBlowUp, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_outputs(result, cfg, cfg["output_dir"])
    for c in result.criteria:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: observed {_fmt(c.observed)}, "
              f"expected {c.expected} (tolerance {c.tolerance})")
    if _has_nan(result):
        print("numerical abort: NaN in results", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
