"""Command-line experiment runner.

    wickapprox constant       --config cfg.json
    wickapprox optimal-mse    --config cfg.json [--format csv]
    wickapprox scheme-mse     --config cfg.json
    wickapprox counterexample --config cfg.json
    wickapprox convergence    --config cfg.json
    wickapprox selftest       [--only 1,4,9]

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 a selftest check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from typing import Any, Sequence

import jsonschema
import numpy as np

from . import __version__
from ._backend import NAME as BACKEND
from .chaos import Caps, ChaosError
from .exprlang import ExprSyntaxError
from .fnspace import Func1D, GridSpec, QuadratureError, inner
from .functional import CATALOG, LinWA, from_scalar
from .schemes import (
    milstein_exact_moments,
    milstein_mc,
    milstein_ordinary,
    mse_scheme,
    wick_euler,
    wick_wp,
)
from .solution import SdeProblem, closed_form_constant, mse_optimal, optimal_constant

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
CSV_COLUMNS = ("n", "mse", "rmse", "n_rmse", "stderr", "dropped_mass")

_SERIES = {
    "type": "object",
    "properties": {
        "name": {"enum": list(CATALOG)},
        "params": {"type": "array", "items": {"type": "number"}},
        "degree": {"type": "integer", "minimum": 0, "maximum": 170},
    },
    "required": ["name"],
    "additionalProperties": False,
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "problem": {
            "type": "object",
            "properties": {
                "a": {"type": "string"},
                "sigma": {"type": "string"},
                "f": {"type": "string"},
                "functional": {
                    "oneOf": [
                        _SERIES,
                        {
                            "type": "object",
                            "properties": {
                                "linwa": {
                                    "type": "array",
                                    "minItems": 1,
                                    "items": {
                                        "type": "object",
                                        "properties": {
                                            "weight": {"type": "number"},
                                            "factors": {
                                                "type": "array",
                                                "minItems": 1,
                                                "items": {
                                                    "type": "object",
                                                    "properties": {
                                                        "name": {"enum": list(CATALOG)},
                                                        "params": {"type": "array", "items": {"type": "number"}},
                                                        "degree": {"type": "integer", "minimum": 0, "maximum": 170},
                                                        "arg": {"type": "string"},
                                                    },
                                                    "required": ["name", "arg"],
                                                    "additionalProperties": False,
                                                },
                                            },
                                        },
                                        "required": ["factors"],
                                        "additionalProperties": False,
                                    },
                                }
                            },
                            "required": ["linwa"],
                            "additionalProperties": False,
                        },
                    ]
                },
            },
            "required": ["a", "sigma", "functional"],
            "additionalProperties": False,
        },
        "grids": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "scheme_grids": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "mode": {"enum": ["deterministic", "mc"]},
        "scheme": {"enum": ["wick_wp", "wick_euler", "milstein"]},
        "mc": {
            "type": "object",
            "properties": {
                "samples": {"type": "integer", "minimum": 2},
                "master_seed": {"type": "integer", "minimum": 0},
                "streams": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "caps": {
            "type": "object",
            "properties": {
                "degree": {"type": "integer", "minimum": 1, "maximum": 170},
                "prune_threshold": {"type": "number", "minimum": 0},
                "max_dropped": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "reference": {
            "type": "object",
            "properties": {"label": {"type": "string"}, "C2": {"type": "number"}},
            "required": ["C2"],
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"path": {"type": "string"}, "format": {"enum": ["json", "csv"]}},
            "additionalProperties": False,
        },
    },
    "required": ["problem"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    prob = cfg["problem"]
    if "name" in prob["functional"] and "f" not in prob:
        raise ConfigError("problem/f: required for a univariate functional")


def _func(text: str, where: str) -> Func1D:
    try:
        return Func1D.from_expr(text)
    except ExprSyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_problem(cfg: dict) -> SdeProblem:
    prob = cfg["problem"]
    a = _func(prob["a"], "problem/a")
    sigma = _func(prob["sigma"], "problem/sigma")
    fn_cfg = prob["functional"]
    if "name" in fn_cfg:
        f = _func(prob["f"], "problem/f")
        series = _series(fn_cfg, inner(f, f), "problem/functional")
        return SdeProblem(a, sigma, f, series)
    terms = []
    for i, term in enumerate(fn_cfg["linwa"]):
        factors = []
        for j, fac in enumerate(term["factors"]):
            g = _func(fac["arg"], f"problem/functional/linwa/{i}/factors/{j}/arg")
            factors.append((_series(fac, inner(g, g), f"problem/functional/linwa/{i}/factors/{j}"), g))
        terms.append((term.get("weight", 1.0), factors))
    return SdeProblem(a, sigma, None, LinWA.from_terms(terms))


def _series(fn_cfg: dict, v: float, where: str):
    try:
        return from_scalar(fn_cfg["name"], v, fn_cfg.get("degree", 40), fn_cfg.get("params"))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def caps_from(cfg: dict) -> Caps:
    c = cfg.get("caps", {})
    return Caps(degree=c.get("degree"), prune=c.get("prune_threshold", 1e-16), max_dropped=c.get("max_dropped", 1e-8))


def mc_settings(cfg: dict, args) -> dict:
    mc = cfg.get("mc", {})
    return {
        "samples": mc.get("samples", 200_000),
        "seed": args.seed if args.seed is not None else mc.get("master_seed", 0),
        "streams": args.streams if args.streams is not None else mc.get("streams", 4),
        "sequential": bool(args.sequential),
    }


# ---------------------------------------------------------------- studies


def _row(n: int, mse: float, stderr: float | None, dropped: float = 0.0) -> dict:
    mse = float(mse)
    rmse = math.sqrt(max(mse, 0.0))
    se = None if stderr is None else float(stderr)
    return {"n": n, "mse": mse, "rmse": rmse, "n_rmse": n * rmse, "stderr": se, "dropped_mass": float(dropped)}


def fit_rates(rows: list[dict]) -> dict | None:
    """Least-squares slope of log RMSE against log n, plus the two largest grids."""
    good = [r for r in rows if r["rmse"] > 0]
    if len(good) < 3:
        return None
    x = np.log([r["n"] for r in good])
    y = np.log([r["rmse"] for r in good])
    slope = float(np.polyfit(x, y, 1)[0])
    last = float((y[-1] - y[-2]) / (x[-1] - x[-2]))
    return {"slope_lsq": slope, "slope_last_two": last}


def _constants(problem: SdeProblem, cfg: dict) -> dict:
    out: dict[str, Any] = {"C_optimal": optimal_constant(problem)}
    if not problem.multivariate and problem.F.kind == "wick_exp":
        out["C_closed_form"] = closed_form_constant(problem)
    ref = cfg.get("reference")
    if ref:
        out["reference_value"] = {"label": ref.get("label", "reference"), "C2": ref["C2"], "C": math.sqrt(ref["C2"])}
    return out


def study_optimal(problem: SdeProblem, cfg: dict, args) -> dict:
    mode = cfg.get("mode", "deterministic")
    mc = mc_settings(cfg, args)
    rows = []
    for n in sorted(set(cfg.get("grids", [2, 4, 8, 16]))):
        if mode == "mc":
            val, se = mse_optimal(problem, GridSpec(n), "mc", mc["samples"], mc["seed"], mc["streams"], mc["sequential"])
        else:
            val, se = mse_optimal(problem, GridSpec(n))
        rows.append(_row(n, val, se))
    return {"rows": rows, "fit": fit_rates(rows)}


def scheme_grids(cfg: dict) -> list[int]:
    """Chaos schemes grow quickly with n; default to the grids up to 16."""
    return cfg.get("scheme_grids") or [n for n in cfg.get("grids", []) if n <= 16] or [2, 4, 8]


def study_scheme(problem: SdeProblem, cfg: dict, args, grids: list[int] | None = None) -> dict:
    name = cfg.get("scheme", "wick_wp")
    mode = cfg.get("mode", "deterministic")
    caps = caps_from(cfg)
    mc = mc_settings(cfg, args)
    builder = {"wick_wp": wick_wp, "wick_euler": wick_euler, "milstein": milstein_ordinary}[name]
    rows = []
    for n in sorted(set(grids or scheme_grids(cfg))):
        out = builder(problem, GridSpec(n), caps)
        if mode == "mc":
            val, se = mse_scheme(problem, out, "mc", mc["samples"], mc["seed"], mc["streams"], mc["sequential"])
        else:
            val, se = mse_scheme(problem, out)
        rows.append(_row(n, val, se, out.terminal.dropped_mass))
    return {"scheme": name, "rows": rows, "fit": fit_rates(rows)}


def study_counterexample(problem: SdeProblem, cfg: dict, args) -> dict:
    if problem.multivariate or problem.F.kind != "wick_exp":
        raise ConfigError("counterexample needs functional wick_exp")
    mc = mc_settings(cfg, args)
    rows = []
    means = []
    for n in sorted(set(cfg.get("grids", [4, 8, 16]))):
        g = GridSpec(n)
        m = milstein_exact_moments(problem, g)
        se = None
        mse = m["mse"]
        if cfg.get("mode") == "mc":
            r = milstein_mc(problem, g, mc["samples"], mc["seed"], mc["streams"], mc["sequential"])
            mse, se = r["mse"], r["mse_stderr"]
        rows.append(_row(n, mse, se))
        means.append({"n": n, "mean": m["mean"]})
    return {
        "rows": rows,
        "means": means,
        "mean_limit": problem.growth * math.exp(problem.f_sigma),
        "true_mean": problem.growth * float(problem.F.coefficients[0]),
    }


# ---------------------------------------------------------------- output


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if "constants" in report and "sections" not in report and "rows" not in report:
        w.writerow(("quantity", "value"))
        for k, v in sorted(report["constants"].items()):
            if isinstance(v, dict):
                w.writerow((f"{k}.C2", repr(v["C2"])))
            else:
                w.writerow((k, repr(v)))
        return buf.getvalue()
    if "checks" in report:
        w.writerow(("number", "title", "passed", "summary"))
        for c in report["checks"]:
            w.writerow((c["number"], c["title"], c["passed"], c["summary"]))
        return buf.getvalue()
    sections = report.get("sections") or {"": report}
    for title, sec in sections.items():
        if "rows" not in sec:
            continue
        if title:
            buf.write(f"# {title}\n")
        w.writerow(CSV_COLUMNS)
        for r in sec["rows"]:
            w.writerow(["" if r[c] is None else repr(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _metadata(cfg: dict | None, args) -> dict:
    return {
        "config": cfg,
        "seed": args.seed,
        "streams": args.streams,
        "sequential": bool(args.sequential),
        "versions": {"wickapprox": __version__, "numpy": np.__version__, "kernels": BACKEND},
    }


def run(command: str, cfg: dict | None, args) -> tuple[dict, int]:
    if command == "selftest":
        from .acceptance import run_checks

        only = [int(x) for x in args.only.split(",")] if args.only else None
        results = run_checks(only, echo=lambda line: print(line, file=sys.stderr))
        report = {
            "checks": [
                {"number": r.number, "title": r.title, "passed": r.passed, "summary": r.summary} for r in results
            ],
            "passed": all(r.passed for r in results),
        }
        return report, EXIT_OK if report["passed"] else EXIT_CHECK
    if cfg is None:
        raise ConfigError(f"{command} needs --config")
    problem = build_problem(cfg)
    report: dict[str, Any] = {"command": command, "metadata": _metadata(cfg, args)}
    if command == "constant":
        report["constants"] = _constants(problem, cfg)
    elif command == "optimal-mse":
        report.update(study_optimal(problem, cfg, args))
    elif command == "scheme-mse":
        report.update(study_scheme(problem, cfg, args))
    elif command == "counterexample":
        report.update(study_counterexample(problem, cfg, args))
    elif command == "convergence":
        report["constants"] = _constants(problem, cfg)
        report["sections"] = {
            "optimal": study_optimal(problem, cfg, args),
            "scheme": study_scheme(problem, cfg, args),
        }
    else:
        raise ConfigError(f"unknown command {command}")
    return report, EXIT_OK


def bundled_config(name: str) -> str:
    """Path of a configuration shipped with the package (``wick_exp``, ``exp_initial``, ...)."""
    return str(resources.files("wickapprox") / "configs" / f"{name}.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wickapprox", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("constant", "asymptotic error constant (quadrature and closed form)"),
        ("optimal-mse", "MSE of the optimal approximation over grids"),
        ("scheme-mse", "MSE of a chaos scheme over grids"),
        ("counterexample", "ordinary Milstein scheme with a non-adapted initial value"),
        ("convergence", "optimal and scheme studies with fitted rates"),
        ("selftest", "run the acceptance checks"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON experiment file, or a bundled name such as 'wick_exp'")
        p.add_argument("--seed", type=int, help="master seed (overrides mc.master_seed)")
        p.add_argument("--streams", type=int, help="number of random streams")
        p.add_argument("--sequential", action="store_true", help="run streams in order in one thread")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=["json", "csv"], help="report format (default json)")
        if name == "selftest":
            p.add_argument("--only", help="comma-separated check numbers")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = None
        if args.config:
            path = args.config if args.config.endswith(".json") else bundled_config(args.config)
            cfg = load_config(path)
        report, code = run(args.command, cfg, args)
        out_cfg = (cfg or {}).get("output", {})
        fmt = args.format or out_cfg.get("format", "json")
        text = render(report, fmt)
        dest = args.out or out_cfg.get("path")
        if dest:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChaosError, QuadratureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
