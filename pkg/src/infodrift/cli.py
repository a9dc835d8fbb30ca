"""
Command-line front end.

Subcommands ``utility``, ``pi``, ``bounds`` and ``verify`` share the
flags ``--seed --paths --grid-steps --tail-cut --tail-levels --tail-points
--workers --tol --out --json/--csv --config``.  A config file holds one
flat section per subcommand (plus an optional ``[common]`` section);
flags on the command line override it.

Every output starts with a header holding the tool version, the resolved
config and the master seed; feeding that config back reproduces the
numbers exactly.  The worker count is left out of the header because it
never changes results.

Exit codes: 0 pass, 1 usage or parameter error, 2 statistical or
verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .drift_catalog import NoiseClock, drift_from_config
from .errors import InfoDriftError, ParameterError
from .information import (brownian_covariance, gaussian_channel_information, isotropic_gaussian_bound,
                          laplace_perturbation_bound, maxent_entropy, running_max_probability)
from .market import MarketModel
from .montecarlo import (DEFAULT_PATHS, DEFAULT_SEED, MAX_VIOLATION_RATE, case_for_drift, get_case,
                         refinement_study, registry, verify_identity)
from .partition_measure import dyadic_partition_sum, mesh_study, pi_total
from .stochastic_core import normal_sf

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

# keys that never affect results and stay out of output headers
_RUNTIME_KEYS = {"workers", "out", "config", "command", "format", "refine_csv"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common_flags() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="config file with one section per subcommand")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed")
    common.add_argument("--paths", type=_positive_int, help=f"Monte Carlo paths (default {DEFAULT_PATHS})")
    common.add_argument("--grid-steps", type=_positive_int, help="uniform steps before the tail")
    common.add_argument("--tail-cut", type=float, help="length of the refined tail before T = 1")
    common.add_argument("--tail-levels", type=int, help="number of halvings inside the tail")
    common.add_argument("--tail-points", type=_positive_int, help="grid points per tail level")
    common.add_argument("--workers", type=_positive_int, default=1, help="worker processes")
    common.add_argument("--tol", type=_positive_float, default=1e-10, help="quadrature tolerance")
    common.add_argument("--out", help="write output here instead of standard output")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv")
    return common


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="infodrift", description="Insider utility and information experiments.",
                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"infodrift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    subs = {}

    p = sub.add_parser("utility", parents=[common], allow_abbrev=False,
                       help="Monte Carlo utility increment for a registry case or a drift")
    p.add_argument("--case", help=f"registry case ({', '.join(registry())})")
    p.add_argument("--drift", choices=["noisy-terminal", "running-max", "terminal-partition", "dynamic-noise"])
    p.add_argument("--w", type=float, help="noise variance for noisy-terminal")
    p.add_argument("--c", type=float, help="level of the Brownian maximum for running-max")
    p.add_argument("--thresholds", help="comma-separated bin edges for terminal-partition")
    p.add_argument("--g", dest="g", help="noise clock family for dynamic-noise")
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--p", dest="p", type=float)
    p.add_argument("--v", dest="v", type=float)
    p.add_argument("--refine-csv", help="also run the tail refinement study and write it here")
    p.add_argument("--refine-paths", type=_positive_int, default=8192)
    p.set_defaults(handler=cmd_utility)
    subs["utility"] = p

    p = sub.add_parser("pi", parents=[common], allow_abbrev=False,
                       help="partition-measure sums on dyadic meshes")
    p.add_argument("--g", dest="g", default="sqrt", help="sqrt, power (C, p) or const (v)")
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--p", dest="p", type=float)
    p.add_argument("--v", dest="v", type=float)
    p.add_argument("--levels", type=_positive_int, default=12)
    p.set_defaults(handler=cmd_pi)
    subs["pi"] = p

    p = sub.add_parser("bounds", parents=[common], allow_abbrev=False,
                       help="Gaussian channel and Laplace information bounds")
    p.add_argument("--times", type=_float_list, help="comma-separated observation times")
    p.add_argument("--kappa", type=float, default=1.0, help="isotropic noise variance")
    p.add_argument("--laplace", action="store_true", help="Laplace bound from --k1/--k2 instead")
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.set_defaults(handler=cmd_bounds)
    subs["bounds"] = p

    p = sub.add_parser("verify", parents=[common], allow_abbrev=False,
                       help="all registry cases plus the deterministic checks")
    p.add_argument("--cases", help="comma-separated subset of registry cases")
    p.set_defaults(handler=cmd_verify)
    subs["verify"] = p
    return parser, subs


# --------------------------------- Config ---------------------------------- #

def _apply_config(sub: argparse.ArgumentParser, path: str, command: str) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys like C and c differ
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ParameterError(f"cannot read config {path!r}: {exc}") from None
    actions = {a.dest: a for a in sub._actions}
    values = {}
    for section in ("common", command):
        if cp.has_section(section):
            values.update(cp.items(section))
    defaults = {}
    for key, text in values.items():
        dest = key.replace("-", "_")
        if dest in ("json", "csv"):
            if cp.BOOLEAN_STATES.get(text.lower()):
                defaults["format"] = dest
            continue
        action = actions.get(dest)
        if action is None or dest in ("config", "help", "handler"):
            raise ParameterError(f"unknown config key {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            if text.lower() not in cp.BOOLEAN_STATES:
                raise ParameterError(f"config key {key!r} needs a boolean, got {text!r}")
            defaults[dest] = cp.BOOLEAN_STATES[text.lower()]
        else:
            try:
                defaults[dest] = action.type(text) if action.type else text
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ParameterError(f"bad value for config key {key!r}: {exc}") from None
            if action.choices is not None and defaults[dest] not in action.choices:
                raise ParameterError(f"config key {key!r} must be one of {list(action.choices)}")
    sub.set_defaults(**defaults)


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in _RUNTIME_KEYS and k != "handler" and v is not None}


def _header(args, **extra) -> dict:
    return {"tool": "infodrift", "version": __version__, "command": args.command,
            "seed": args.seed, "config": _resolved(args), **extra}


def _grid_overrides(args) -> dict:
    return {"steps": args.grid_steps, "tail_cut": args.tail_cut,
            "tail_levels": args.tail_levels, "tail_points": args.tail_points}


# --------------------------------- Output ---------------------------------- #

def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _csv_text(header: dict, columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# infodrift {header['version']} {header['command']} seed={header['seed']}\n")
    buf.write(f"# config: {json.dumps(header['config'], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _note(message: str) -> None:
    print(message, file=sys.stderr)


# -------------------------------- Commands --------------------------------- #

def _utility_case(args):
    if bool(args.case) == bool(args.drift):
        raise ParameterError("give exactly one of --case or --drift")
    if args.case:
        return get_case(args.case)
    cfg = {"kind": args.drift, "w": args.w, "c": args.c, "thresholds": args.thresholds or "",
           "g": args.g or "sqrt", "C": args.C, "p": args.p, "v": args.v}
    if args.drift == "noisy-terminal" and args.w is None:
        raise ParameterError("noisy-terminal needs --w")
    if args.drift == "running-max" and args.c is None:
        raise ParameterError("running-max needs --c")
    return case_for_drift(drift_from_config(cfg))


def _warn_underpowered(report) -> None:
    v = report.verdict
    if v["underpowered"]:
        _note(f"warning: {v['case']} is under-powered: 3 x stderr = {3 * report.stderr_mc:.4g} "
              f"exceeds 5% of the target {report.increment_analytic:.6g}; raise --paths")
    if v["violation_rate"] > MAX_VIOLATION_RATE:
        _note(f"warning: {v['case']} aborted {v['violation_rate']:.3%} of paths "
              f"(limit {MAX_VIOLATION_RATE:.1%})")


def cmd_utility(args) -> int:
    case = _utility_case(args)
    paths = args.paths or DEFAULT_PATHS
    report = verify_identity(case, n_paths=paths, seed=args.seed, workers=args.workers,
                             **_grid_overrides(args))
    _warn_underpowered(report)
    header = _header(args, case=case.name, description=case.description)
    if args.format == "csv":
        fields = ["u_uninformed", "u_insider", "increment_analytic", "increment_mc", "stderr_mc", "n_paths"]
        d = report.to_dict()
        text = _csv_text(header, fields + ["pass", "z"],
                         [[d[f] for f in fields] + [d["verdict"]["pass"], d["verdict"]["z"]]])
    else:
        text = _json_text({"header": header, "report": report.to_dict()})
    _emit(text, args.out)
    if args.refine_csv:
        study = refinement_study(case, n_paths=args.refine_paths, seed=args.seed,
                                 workers=args.workers, **_grid_overrides(args))
        head = _header(args, case=case.name)
        body = study.to_csv()
        with open(args.refine_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# infodrift {head['version']} refinement seed={head['seed']}\n")
            fh.write(f"# config: {json.dumps(head['config'], sort_keys=True)}\n")
            fh.write(body)
    return EXIT_OK if report.passed else EXIT_FAIL


def _clock_from_args(args) -> NoiseClock:
    return NoiseClock.from_config(args.g, C=args.C, p=args.p, v=args.v)


def cmd_pi(args) -> int:
    g = _clock_from_args(args)
    study = mesh_study(g, args.levels, tol=args.tol)
    header = _header(args, g=g.describe())
    if args.format == "json":
        text = _json_text({"header": header, "study": {"rows": study.rows(), "divergent": study.divergent}})
    else:
        cols = ("level", "mesh", "partition_sum", "limit_ref", "gap")
        text = _csv_text(header, cols, [[r[c] for c in cols] for r in study.rows()])
    _emit(text, args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    header = _header(args)
    if args.laplace:
        if args.k1 is None or args.k2 is None:
            raise ParameterError("--laplace needs --k1 and --k2")
        bound = laplace_perturbation_bound(args.k1, args.k2)
        result = {"kappa1": args.k1, "kappa2": args.k2, "laplace_bound": bound.nats}
        ok = True
    else:
        if not args.times:
            raise ParameterError("bounds needs --times (or --laplace)")
        if not (args.kappa > 0 and math.isfinite(args.kappa)):
            raise ParameterError(f"kappa must be positive, got {args.kappa!r}")
        cov = brownian_covariance(args.times)
        det_route = gaussian_channel_information(cov, args.kappa * np.eye(cov.dim)).nats
        eig_route = isotropic_gaussian_bound(cov.eigenvalues, args.kappa).nats
        residual = abs(det_route - eig_route)
        result = {"times": list(args.times), "kappa": args.kappa, "covariance": cov.to_list(),
                  "eigenvalues": cov.eigenvalues.tolist(), "determinant_bound": det_route,
                  "eigenvalue_bound": eig_route, "residual": residual}
        ok = residual <= 1e-10
    if args.format == "csv":
        rows = [[k, v] for k, v in result.items() if isinstance(v, (int, float))]
        text = _csv_text(header, ("quantity", "value"), rows)
    else:
        text = _json_text({"header": header, "result": result})
    _emit(text, args.out)
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------- Verify ---------------------------------- #

def deterministic_checks(tol: float = 1e-10) -> list:
    """Quadrature, bound-algebra and partition-measure checks that need no sampling.

    Each entry is ``{"name", "pass", "value", "target", "detail"}``.
    """
    checks = []

    def add(name, ok, value, target, detail=""):
        checks.append({"name": name, "pass": bool(ok), "value": float(value),
                       "target": float(target), "detail": detail})

    base = MarketModel()
    for a in (0.25, 0.5, 1.0, 2.0):
        p = running_max_probability(base, math.exp(a), tol=min(tol, 1e-12))
        oracle = 2.0 * float(normal_sf(a))
        add(f"running-max probability log c = {a}", abs(p - oracle) <= 1e-6, p, oracle)

    cov = brownian_covariance([0.5, 1.0])
    det_route = gaussian_channel_information(cov, np.eye(2)).nats
    eig_route = isotropic_gaussian_bound(cov.eigenvalues, 1.0).nats
    add("determinant vs eigenvalue route, times (0.5, 1)", abs(det_route - eig_route) <= 1e-10,
        det_route, 0.5 * math.log(2.75))
    rng = np.random.default_rng(20240)
    worst = 0.0
    for d in range(1, 9):
        a = rng.standard_normal((d, d))
        cx = a @ a.T
        kappa = float(rng.uniform(0.1, 3.0))
        lhs = gaussian_channel_information(cx, kappa * np.eye(d)).nats
        rhs = isotropic_gaussian_bound(np.linalg.eigvalsh(cx), kappa).nats
        worst = max(worst, abs(lhs - rhs))
    add("determinant vs eigenvalue route, random d <= 8", worst <= 1e-10, worst, 0.0)

    h_gauss, _ = maxent_entropy("second_moment", 1.0)
    h_uniform = 0.5 * math.log(12.0)  # uniform law with variance 1
    h_laplace_var = 1.0 + math.log(2.0 / math.sqrt(2.0))  # two-sided exponential, variance 1
    add("Gaussian beats uniform and Laplace at variance 1",
        h_uniform < h_gauss and h_laplace_var < h_gauss, h_gauss, max(h_uniform, h_laplace_var))
    h_lap, _ = maxent_entropy("absolute_moment", 1.0)
    sigma = math.sqrt(math.pi / 2.0)  # Gaussian with E|X| = 1
    h_matched = 0.5 * math.log(2.0 * math.pi * math.e * sigma ** 2)
    add("Laplace beats Gaussian at E|X| = 1", h_matched < h_lap, h_lap, h_matched)

    sqrt_clock = NoiseClock.sqrt()
    study = mesh_study(sqrt_clock, 12, tol=tol)
    monotone = all(b >= a for a, b in zip(study.values, study.values[1:]))
    add("sqrt clock: dyadic sums non-decreasing and below the total",
        monotone and max(study.values) <= study.limit_ref + tol, study.values[-1], study.limit_ref)
    deep = dyadic_partition_sum(sqrt_clock, 20)
    add("sqrt clock: level-20 sum within 1e-3 of the total",
        abs(study.limit_ref - deep) <= 1e-3, deep, study.limit_ref,
        "the gap shrinks like 0.73 * sqrt(mesh)")
    linear = NoiseClock.power(1.0, 1.0)
    values = [dyadic_partition_sum(linear, k) for k in range(1, 17)]
    steps = np.diff(values)
    add("linear clock: total flagged divergent", math.isinf(pi_total(linear, tol)), math.inf, math.inf)
    add("linear clock: every refinement adds at least 0.9 * log(2) / 4",
        float(np.min(steps)) >= 0.9 * math.log(2.0) / 4.0, float(np.min(steps)), math.log(2.0) / 4.0)
    return checks


def cmd_verify(args) -> int:
    names = [c.strip() for c in args.cases.split(",")] if args.cases else list(registry())
    cases = [get_case(n) for n in names]
    paths = args.paths or DEFAULT_PATHS
    reports = []
    for case in cases:
        report = verify_identity(case, n_paths=paths, seed=args.seed, workers=args.workers,
                                 **_grid_overrides(args))
        _warn_underpowered(report)
        reports.append(report)
    checks = deterministic_checks(args.tol)
    case_ok = [r.passed and r.verdict["consistent"] for r in reports]
    all_ok = all(case_ok) and all(c["pass"] for c in checks)

    _note(f"{'case':<8} {'target':>10} {'estimate':>10} {'stderr':>9} {'z':>7} {'gap':>7}  status")
    for r, ok in zip(reports, case_ok):
        v = r.verdict
        _note(f"{v['case']:<8} {r.increment_analytic:>10.6f} {r.increment_mc:>10.6f} {r.stderr_mc:>9.2e} "
              f"{v['z']:>7.2f} {v['rel_gap']:>7.2%}  {'pass' if ok else 'FAIL'}")
    for c in checks:
        _note(f"  {'pass' if c['pass'] else 'FAIL'}  {c['name']}")
    _note("verify: " + ("all checks passed" if all_ok else "FAILURES present"))

    header = _header(args)
    if args.format == "csv":
        cols = ("kind", "name", "pass", "value", "target", "stderr", "z", "rel_gap", "consistency")
        rows = []
        for r, ok in zip(reports, case_ok):
            v = r.verdict
            rows.append(["case", v["case"], ok, r.increment_mc, r.increment_analytic, r.stderr_mc,
                         v["z"], v["rel_gap"], max(abs(z) for z in v["consistency_z"])])
        for c in checks:
            rows.append(["check", c["name"], c["pass"], c["value"], c["target"], "", "", "", ""])
        text = _csv_text(header, cols, rows)
    else:
        text = _json_text({"header": header, "pass": all_ok,
                           "cases": [r.to_dict() for r in reports], "checks": checks})
    _emit(text, args.out)
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------- Main ----------------------------------- #

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(subs[args.command], args.config, args.command)
            args = parser.parse_args(argv)
        if args.tail_cut is not None and not 0 <= args.tail_cut < 1:
            raise ParameterError(f"--tail-cut must lie in [0, 1), got {args.tail_cut!r}")
        if args.tail_levels is not None and args.tail_levels < 0:
            raise ParameterError("--tail-levels must be non-negative")
        if not (args.tol > 0 and math.isfinite(args.tol)):
            raise ParameterError(f"--tol must be positive, got {args.tol!r}")
        return args.handler(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (InfoDriftError, ValueError) as exc:
        print(f"infodrift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
