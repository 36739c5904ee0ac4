"""Command-line interface: ``enrt <command> [options]``.

Exit codes: 0 success, 2 input validation, 3 infeasible design, 4 numerical
failure. JSON output carries a top-level ``schema_version``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np
from scipy import stats

from . import __version__
from .errors import (ConvergenceError, DataValidationError, EstimabilityError, NoRootError,
                     NonFactorizableError, PowerUndefinedError)
from .estimation import fit_gee
from .mcb import mcb_min_k, mcb_power, mcb_test
from .model import DIRECTIONS, MAXIMIZE, DesignSpec, load_csv
from .simulation import (EXAMPLES, SCHEMA_VERSION, TABLE1_DELTAS, curves_to_csv, example_delta, run_study,
                         sample_size_curves, table1_scenario)
from .wald import wald_min_k, wald_power, wald_test, wald_zero_test

log = logging.getLogger("enrt")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

FIT_COLUMNS = ("coefficient", "estimate", "std.error", "t value", "p-value", "Wald")
MCB_COLUMNS = ("contrast", "estimate", "std.error", "t value", "p-value", "L_h", "U_h", "Wald")
SAMPLESIZE_COLUMNS = ("test", "K", "power")


class UsageError(ValueError):
    pass


def _floats(text, what):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--{what} must be a comma-separated list of numbers") from None


def _ints(text, what):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--{what} must be a comma-separated list of integers") from None


# -- output helpers ------------------------------------------------------------

def _table_csv(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r[c] is None else r[c] for c in columns])
    return buf.getvalue()


def _json(payload):
    return json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2, allow_nan=False) + "\n"


def _emit(text, args):
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _clean(x):
    """Plain Python values for JSON."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if not np.isfinite(x) else float(x)
    return x


# -- data-analysis commands ---------------------------------------------------

def _load(args):
    if not args.input:
        raise UsageError("--input is required")
    return load_csv(args.input, n_subgroups=args.H, direction=args.direction)


def fit_table(fit):
    """Coefficient table: zeta_h then delta_h with t-based two-sided p-values."""
    H = fit.H
    est = np.concatenate([fit.zeta, fit.delta_hat])
    se = np.sqrt(np.diag(fit.cov_theta))
    t = est / se
    p = 2.0 * stats.t.sf(np.abs(t), fit.dof)
    zero = wald_zero_test(fit)
    rows = []
    for i in range(2 * H):
        name = f"zeta_{i + 1}" if i < H else f"delta_{i - H + 1}"
        wald = None
        if i == 0:
            wald = "---"
        elif i == H:
            wald = zero.p_value
        rows.append({"coefficient": name, "estimate": est[i], "std.error": se[i], "t value": t[i],
                     "p-value": p[i], "Wald": wald})
    return rows, zero


def cmd_fit(args):
    data = _load(args)
    fit = fit_gee(data)
    rows, zero = fit_table(fit)
    if args.format == "csv":
        return _table_csv(FIT_COLUMNS, rows)
    return _json(_clean({
        "command": "fit",
        "columns": FIT_COLUMNS,
        "coefficients": rows,
        "zeta": fit.zeta, "delta": fit.delta_hat,
        "sigma2": fit.sigma2_hat, "rho": fit.rho_hat, "dof": fit.dof,
        "n_networks": fit.n_networks, "cell_counts": fit.cell_counts,
        "cov_delta": fit.cov_delta,
        "wald_zero": {"statistic": zero.statistic, "df": zero.df, "p_value": zero.p_value},
    }))


def mcb_table(fit, res, wald):
    word = "max" if res.direction == MAXIMIZE else "min"
    rows = []
    for h in range(fit.H):
        rows.append({
            "contrast": f"delta_{h + 1}-{word}_j!={h + 1}(delta_j)",
            "estimate": res.t_stats[h], "std.error": res.std_errors[h],
            "t value": res.t_stats[h] / res.std_errors[h], "p-value": res.pairwise_p[h],
            "L_h": res.lower[h], "U_h": res.upper[h], "Wald": wald.p_value if h == 0 else None,
        })
    return rows


def cmd_mcb(args):
    data = _load(args)
    fit = fit_gee(data)
    res = mcb_test(fit, alpha=args.alpha, direction=args.direction, seed=args.seed)
    wald = wald_test(fit)
    rows = mcb_table(fit, res, wald)
    if args.format == "csv":
        return _table_csv(MCB_COLUMNS, rows)
    return _json(_clean({
        "command": "mcb",
        "direction": res.direction,
        "alpha": res.alpha,
        "columns": MCB_COLUMNS,
        "contrasts": rows,
        "best_set": [h + 1 for h in res.best_set],
        "comparators": [int(j) + 1 for j in res.comparators],
        "critical_values": res.critical_values,
        "overall_p": res.overall_p,
        "raw_p": res.raw_p,
        "wald_heterogeneity": {"statistic": wald.statistic, "df": wald.df, "p_value": wald.p_value},
    }))


def cmd_wald(args):
    fit = fit_gee(_load(args))
    het, zero = wald_test(fit), wald_zero_test(fit)
    rows = [{"hypothesis": "equal", "statistic": het.statistic, "df": het.df, "p_value": het.p_value},
            {"hypothesis": "zero", "statistic": zero.statistic, "df": zero.df, "p_value": zero.p_value}]
    if args.format == "csv":
        return _table_csv(("hypothesis", "statistic", "df", "p_value"), rows)
    return _json(_clean({"command": "wald", "tests": rows}))


# -- design commands -----------------------------------------------------------

def _design(args):
    if args.delta is not None:
        delta = _floats(args.delta, "delta")
    elif args.example is not None:
        if args.H is None:
            raise UsageError("--example needs --H")
        delta = example_delta(args.example, args.H)
    else:
        raise UsageError("give --delta or --example")
    H = len(delta)
    if args.H is not None and args.H != H:
        raise UsageError(f"--H {args.H} disagrees with {H} delta values")
    g = _floats(args.g, "g") if args.g else (1.0 / H,) * H
    if args.n is None:
        raise UsageError("--n is required")
    try:
        return DesignSpec(H=H, n=args.n, p=args.p, g=g, sigma2=args.sigma2, rho_y=args.rho, delta=delta,
                          alpha=args.alpha, beta=args.beta, direction=args.direction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tests(args):
    return ("wald", "mcb") if args.test == "both" else (args.test,)


def cmd_power(args):
    design = _design(args)
    if args.K is None:
        raise UsageError("--K is required")
    Ks = _ints(args.K, "K")
    rows = []
    for test in _tests(args):
        for K in Ks:
            pw = wald_power(design, K) if test == "wald" else mcb_power(design, K)
            rows.append({"test": test, "K": K, "power": pw})
    if args.format == "csv":
        return _table_csv(SAMPLESIZE_COLUMNS, rows)
    return _json(_clean({"command": "power", "design": _design_dict(design), "power": rows}))


def _design_dict(design):
    return {"H": design.H, "n": design.n, "p": design.p, "g": design.g, "sigma2": design.sigma2,
            "rho": design.rho_y, "delta": design.delta, "alpha": design.alpha, "beta": design.beta,
            "direction": design.direction}


def cmd_samplesize(args):
    design = _design(args)
    out = {}
    curves = []
    for test in _tests(args):
        if test == "wald":
            K = wald_min_k(design)
            pts = [(k, wald_power(design, k)) for k in sorted({max(1, K - 1), K})]
        else:
            K, pts = mcb_min_k(design)
        out[test] = K
        curves.extend({"test": test, "K": k, "power": pw} for k, pw in pts)
    if args.format == "csv":
        return _table_csv(SAMPLESIZE_COLUMNS, curves)
    return _json(_clean({"command": "samplesize", "design": _design_dict(design), "K_min": out,
                         "curve": curves}))


def cmd_simulate(args):
    if args.scenario is None:
        raise UsageError("--scenario is required")
    kw = {"n_reps": args.reps}
    if args.seed is not None:
        kw["master_seed"] = args.seed
    if args.K is not None:
        kw["K"] = _ints(args.K, "K")[0]
    scenario = table1_scenario(args.scenario, **kw)
    report = run_study(scenario, min_reps=1)
    if args.format == "csv":
        return report.to_csv()
    return json.dumps(_clean(report.to_dict()), indent=2, allow_nan=False) + "\n"


def cmd_curves(args):
    example = args.example or "unique_best"
    kw = {}
    if args.rho_grid:
        kw["rhos"] = _floats(args.rho_grid, "rho-grid")
    if args.n_grid:
        kw["ns"] = _ints(args.n_grid, "n-grid")
    if args.H_grid:
        kw["Hs"] = _ints(args.H_grid, "H-grid")
    rows = sample_size_curves(example=example, sigma2=args.sigma2, p=args.p, alpha=args.alpha,
                              beta=args.beta, tests=_tests(args), **kw)
    if args.format == "json":
        return _json(_clean({"command": "curves", "example": example, "rows": rows}))
    return curves_to_csv(rows)


COMMANDS = {
    "fit": cmd_fit, "mcb": cmd_mcb, "wald": cmd_wald, "power": cmd_power,
    "samplesize": cmd_samplesize, "simulate": cmd_simulate, "curves": cmd_curves,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="enrt", description="Heterogeneous spillover analysis for ENRTs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--format", choices=("json", "csv"), default="csv" if name == "curves" else "json")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--beta", type=float, default=0.1)
        p.add_argument("--direction", choices=DIRECTIONS, default=MAXIMIZE)
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int, default=1000)
        p.add_argument("--H", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--p", type=float, default=0.5)
        p.add_argument("--g")
        p.add_argument("--sigma2", type=float, default=1.0)
        p.add_argument("--rho", type=float, default=0.0)
        p.add_argument("--delta")
        p.add_argument("--K", help="number of egonetworks (comma list for power)")
        p.add_argument("--test", choices=("wald", "mcb", "both"), default="both")
        p.add_argument("--scenario", type=int, choices=sorted(TABLE1_DELTAS))
        p.add_argument("--example", choices=EXAMPLES)
        p.add_argument("--rho-grid", dest="rho_grid")
        p.add_argument("--n-grid", dest="n_grid")
        p.add_argument("--H-grid", dest="H_grid")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.seed is None and args.command != "simulate":
        args.seed = 0
    try:
        if not 0 < args.alpha < 1 or not 0 < args.beta < 1:
            raise UsageError("--alpha and --beta must lie in (0, 1)")
        text = COMMANDS[args.command](args)
    except (UsageError, DataValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PowerUndefinedError, EstimabilityError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConvergenceError, NoRootError, NonFactorizableError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _emit(text, args)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
