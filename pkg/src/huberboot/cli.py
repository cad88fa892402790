"""Command-line interface: ``huberboot <command> [flags]``.

Commands ``fit``, ``calibrate``, ``ci`` and ``mtest`` read a CSV file and write JSON;
``sim-coverage`` and ``sim-mtest`` run preset experiment grids and write CSV.  Settings
resolve as flag > ``--config`` file > built-in default.  Exit codes: 0 success,
1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from ._parallel import resolve_threads
from .bootstrap import BootstrapConfig, WeightScheme, run_ci
from .calibration import CalibrationConfig, irls_fit, simple_tau_rule
from .core import Dataset, SolverConfig, fit_huber
from .exceptions import HuberbootError, NumericalError
from .multitest import MTestConfig, PanelData, run_mtest
from .simulation import COVERAGE_HEADER, MTEST_HEADER, preset_specs, run_experiment

COMMANDS = ("fit", "calibrate", "ci", "mtest", "sim-coverage", "sim-mtest")

DEFAULTS = {
    "input": None,
    "output": "-",
    "response": None,
    "add_intercept": False,
    "tau": None,
    "tau_mode": None,
    "t": None,
    "order": 4,
    "alpha": None,
    "B": None,
    "weights": None,
    "seed": 0,
    "threads": "auto",
    "scale": 1.0,
    "preset": None,
}

_BOOL_KEYS = {"add_intercept"}
_INT_KEYS = {"order", "B", "seed"}
_FLOAT_KEYS = {"tau", "t", "alpha", "scale"}


class UsageError(HuberbootError, ValueError):
    """Bad command line, config file or input file."""


@dataclass
class CliConfig:
    command: str
    input_path: str | None = None
    output_path: str = "-"
    seed: int = 0
    threads: object = "auto"
    overrides: dict = field(default_factory=dict)

    def get(self, key):
        return self.overrides.get(key, DEFAULTS.get(key))

    def resolved(self) -> dict:
        out = dict(DEFAULTS)
        out.update(self.overrides)
        # threads are left out so output bytes do not depend on the pool size
        out.pop("threads", None)
        out.update(input=self.input_path, output=self.output_path, seed=self.seed)
        return out


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="huberboot", description="Adaptive Huber regression with multiplier-bootstrap inference.")
    parser.add_argument("--version", action="version", version=f"huberboot {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    S = argparse.SUPPRESS
    helps = {
        "fit": "Huber fit at a given or rule-based tau",
        "calibrate": "data-driven tau (IRLS calibration or plug-in rule)",
        "ci": "multiplier-bootstrap confidence set",
        "mtest": "simultaneous intercept tests with BH thresholding",
        "sim-coverage": "coverage experiment from a preset",
        "sim-mtest": "FDP/power experiment from a preset",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], argument_default=S)
        p.add_argument("--config", help="flat key=value file; flags take precedence")
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--response", help="response column (mtest: comma list or prefix*)")
        p.add_argument("--add-intercept", dest="add_intercept", action="store_true")
        p.add_argument("--tau", type=float)
        p.add_argument("--tau-mode", dest="tau_mode", choices=("simple", "adaptive", "fixed"))
        p.add_argument("--t", type=float)
        p.add_argument("--order", type=int, choices=(2, 4))
        p.add_argument("--alpha", type=str, help="level in (0,1); sim commands accept a comma list")
        p.add_argument("--B", type=int)
        p.add_argument("--weights", choices=("gaussian", "bernoulli", "mix"))
        p.add_argument("--seed", type=int)
        p.add_argument("--threads")
        p.add_argument("--scale", type=float)
        p.add_argument("--preset")
    return parser


def read_config_file(path: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment; keys may use dashes."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if key in _INT_KEYS:
            return int(value)
        if key == "alpha":
            parts = [float(a) for a in value.split(",")]
            return parts[0] if len(parts) == 1 else tuple(parts)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError as exc:
        raise UsageError(f"invalid value for {key}: {value!r}") from exc
    return value


def parse_args(argv) -> CliConfig:
    ns = vars(_build_parser().parse_args(list(argv)))
    command = ns.pop("command")
    merged = {}
    if "config" in ns:
        merged.update(read_config_file(ns.pop("config")))
    merged.update(ns)
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    threads = merged.pop("threads", None)
    try:
        threads = resolve_threads(threads)
    except ValueError as exc:
        raise UsageError(f"invalid --threads: {exc}") from exc
    cfg = CliConfig(
        command=command,
        input_path=merged.pop("input", None),
        output_path=merged.pop("output", "-"),
        seed=merged.pop("seed", 0),
        threads=threads,
        overrides=merged,
    )
    if command in ("fit", "calibrate", "ci", "mtest") and not cfg.input_path:
        raise UsageError(f"{command}: --input is required")
    if command in ("sim-coverage", "sim-mtest") and not cfg.get("preset"):
        raise UsageError(f"{command}: --preset is required")
    return cfg


# ---------------------------------------------------------------------------
# CSV and JSON I/O
# ---------------------------------------------------------------------------


def _read_table(path: str):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and not (len(r) == 1 and not r[0].strip())]
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise UsageError(f"{path}: duplicate column names")
    body = rows[1:]
    if not body:
        raise UsageError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise UsageError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise UsageError(f"{path}: row {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(values[i - 2, j]):
                raise UsageError(f"{path}: row {i}, column {header[j]!r}: non-finite value {cell!r}")
    return header, values


def load_dataset(path: str, response: str = "y", add_intercept: bool = False) -> Dataset:
    """Read a CSV with a header; ``response`` names the response column, the rest form the design."""
    header, values = _read_table(path)
    if response not in header:
        raise UsageError(f"{path}: response column {response!r} not found (columns: {', '.join(header)})")
    j = header.index(response)
    X = np.delete(values, j, axis=1)
    if add_intercept:
        X = np.column_stack([np.ones(values.shape[0]), X])
    if X.shape[1] == 0:
        raise UsageError(f"{path}: no design columns")
    return Dataset(X, values[:, j])


def save_dataset(data: Dataset, path: str, names=None, response: str = "y"):
    """Write ``response`` then the design columns using shortest round-trip float repr."""
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(data.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response] + names)
        for yi, xi in zip(data.response, data.design):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def load_panel(path: str, response=None):
    """Responses are the columns named in ``response`` (comma list or ``prefix*``); default ``y*``."""
    header, values = _read_table(path)
    spec = response or "y*"
    if spec.endswith("*"):
        ycols = [j for j, h in enumerate(header) if h.startswith(spec[:-1])]
    else:
        names = [s.strip() for s in spec.split(",")]
        missing = [s for s in names if s not in header]
        if missing:
            raise UsageError(f"{path}: response columns not found: {missing}")
        ycols = [header.index(s) for s in names]
    if not ycols:
        raise UsageError(f"{path}: no response columns match {spec!r}")
    xcols = [j for j in range(len(header)) if j not in ycols]
    if not xcols:
        raise UsageError(f"{path}: no covariate columns")
    return PanelData(values[:, ycols], values[:, xcols]), [header[j] for j in ycols]


def _json_value(obj) -> str:
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _json_value(obj) + "\n"


def _write(text: str, path: str):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _alpha(cfg: CliConfig, default: float) -> float:
    a = cfg.get("alpha")
    if a is None:
        return default
    if isinstance(a, tuple):
        raise UsageError(f"{cfg.command} takes a single --alpha")
    if not 0 < a < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    return a


def _dataset(cfg: CliConfig) -> Dataset:
    return load_dataset(cfg.input_path, cfg.get("response") or "y", bool(cfg.get("add_intercept")))


def _resolve_tau(cfg: CliConfig, data: Dataset, default_mode: str):
    """Returns ``(tau, mode)``; an explicit ``--tau`` implies the fixed mode."""
    mode = cfg.get("tau_mode") or ("fixed" if cfg.get("tau") is not None else default_mode)
    if mode == "fixed":
        tau = cfg.get("tau")
        if tau is None or not tau > 0:
            raise UsageError("tau mode 'fixed' needs a positive --tau")
        return float(tau), mode
    if mode == "simple":
        tau = simple_tau_rule(data, "bootstrap")
    else:
        res = irls_fit(data, CalibrationConfig(t=cfg.get("t"), moment_order=cfg.get("order")))
        tau = res.tau
    if not tau > 0:
        raise NumericalError("tau calibration degenerated (residuals vanish)")
    return float(tau), mode


def _envelope(cfg: CliConfig, result: dict) -> str:
    return dumps_json({"command": cfg.command, "version": __version__, "seed": cfg.seed, "config": cfg.resolved(), "result": result})


def cmd_fit(cfg: CliConfig) -> str:
    data = _dataset(cfg)
    tau, mode = _resolve_tau(cfg, data, "simple")
    fit = fit_huber(data, SolverConfig(tau=tau))
    result = {
        "theta": fit.theta,
        "tau": tau,
        "tau_mode": mode,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
        "objective": fit.objective,
    }
    if not fit.converged:
        raise NumericalError("Huber solver did not converge: " + dumps_json(result).strip())
    return _envelope(cfg, result)


def cmd_calibrate(cfg: CliConfig) -> str:
    data = _dataset(cfg)
    mode = cfg.get("tau_mode") or "adaptive"
    if mode == "simple":
        tau = simple_tau_rule(data, "bootstrap")
        result = {"tau_mode": mode, "tau": tau, "degenerate": not tau > 0}
    elif mode == "adaptive":
        res = irls_fit(data, CalibrationConfig(t=cfg.get("t"), moment_order=cfg.get("order")))
        result = {
            "tau_mode": mode,
            "tau": res.tau,
            "theta": res.theta,
            "iterations": res.iterations,
            "converged": res.converged,
            "degenerate": res.degenerate,
        }
    else:
        raise UsageError("calibrate supports --tau-mode simple or adaptive")
    return _envelope(cfg, result)


def cmd_ci(cfg: CliConfig) -> str:
    data = _dataset(cfg)
    tau, mode = _resolve_tau(cfg, data, "adaptive")
    bcfg = BootstrapConfig(
        B=cfg.get("B") or 2000,
        scheme=WeightScheme(cfg.get("weights") or "gaussian"),
        alpha=_alpha(cfg, 0.05),
        seed=cfg.seed,
        tau=tau,
    )
    cs = run_ci(data, bcfg, threads=cfg.threads)
    result = {
        "theta_hat": cs.theta_hat,
        "tau": cs.tau,
        "tau_mode": mode,
        "alpha": cs.alpha,
        "threshold": cs.threshold,
        "B": bcfg.B,
        "n_failed": cs.n_failed,
    }
    return _envelope(cfg, result)


def cmd_mtest(cfg: CliConfig) -> str:
    panel, names = load_panel(cfg.input_path, cfg.get("response"))
    mode = cfg.get("tau_mode") or "theorem41"
    if mode == "adaptive":
        raise UsageError("mtest supports --tau-mode simple or fixed (default: the theorem rule)")
    rule = mode
    if mode == "fixed":
        if cfg.get("tau") is None or not cfg.get("tau") > 0:
            raise UsageError("tau mode 'fixed' needs a positive --tau")
        rule = np.full(panel.m, float(cfg.get("tau")))
    mcfg = MTestConfig(
        B=cfg.get("B") or 2000,
        alpha=_alpha(cfg, 0.1),
        scheme=WeightScheme(cfg.get("weights") or "gaussian"),
        seed=cfg.seed,
        tau_rule=rule,
    )
    res = run_mtest(panel, mcfg, threads=cfg.threads)
    result = {
        "columns": names,
        "mu_hat": res.mu_hat,
        "tau": res.taus,
        "p_values": res.p_values,
        "rejected": [names[k] for k in np.flatnonzero(res.rejected)],
        "k_threshold": res.k_threshold,
        "alpha": mcfg.alpha,
        "B": mcfg.B,
    }
    return _envelope(cfg, result)


def _sim(cfg: CliConfig, kind: str) -> str:
    specs = preset_specs(cfg.get("preset"))
    for s in specs:
        if s.kind != kind:
            raise UsageError(f"preset {cfg.get('preset')!r} is not a {kind} experiment")
    changes = {"seed": cfg.seed}
    if cfg.get("B") is not None:
        changes["B"] = cfg.get("B")
    if cfg.get("weights") is not None:
        changes["weights"] = WeightScheme(cfg.get("weights"))
    if cfg.get("tau_mode") is not None:
        changes["tau_mode"] = cfg.get("tau_mode")
    if cfg.get("tau") is not None:
        changes["tau_value"] = cfg.get("tau")
    if cfg.get("alpha") is not None:
        a = cfg.get("alpha")
        changes["alphas"] = a if isinstance(a, tuple) else (a,)
    specs = [replace(s, **changes).scaled(cfg.get("scale")) for s in specs]
    buf = io.StringIO()
    buf.write(f"# huberboot {__version__}\n")
    buf.write("# config: " + dumps_json(cfg.resolved()))
    for s in specs:
        buf.write("# experiment: " + dumps_json(s.to_dict()))
    buf.write((COVERAGE_HEADER if kind == "coverage" else MTEST_HEADER) + "\n")
    for s in specs:
        buf.write(run_experiment(s, threads=cfg.threads).to_csv(header=False))
    return buf.getvalue()


HANDLERS = {
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "ci": cmd_ci,
    "mtest": cmd_mtest,
    "sim-coverage": lambda c: _sim(c, "coverage"),
    "sim-mtest": lambda c: _sim(c, "mtest"),
}


def run(cfg: CliConfig) -> int:
    try:
        text = HANDLERS[cfg.command](cfg)
        _write(text, cfg.output_path)
    except NumericalError as exc:
        print(f"huberboot: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (HuberbootError, ValueError) as exc:
        print(f"huberboot: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"huberboot: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
