"""Command line front end: ``esopt <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import algorithms, flatten as fl, solve as sv, system
from .models import MODELS, load_model

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("esopt")


class ConfigError(Exception):
    pass


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use option names without dashes."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


class _Artifacts:
    """Writes named artifacts into ``--out`` (or stdout) and reports their paths."""

    def __init__(self, args):
        self.out = args.out
        self.quiet = args.quiet
        if self.out:
            os.makedirs(self.out, exist_ok=True)

    def write(self, filename: str, text: str):
        if not self.out:
            sys.stdout.write(text)
            return None
        path = os.path.join(self.out, filename)
        with open(path, "w") as fh:
            fh.write(text)
        if self.quiet:
            print(path)
        return path

    def say(self, msg: str):
        if not self.quiet:
            print(msg, file=sys.stderr)


def _existing(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{what} {path} does not exist")
    return path


def _linearize_arg(args, bm):
    if args.linearize == "none":
        return None
    if args.linearize == "auto":
        return bm.grids
    return _existing(args.linearize, "grid file")


def _objective(bm, name):
    try:
        return bm.objectives[name]
    except KeyError:
        raise ConfigError(f"model {bm.name} has objectives {', '.join(bm.objectives)}") from None


def _opts(args) -> sv.SolverOptions:
    return sv.SolverOptions(rel_gap=args.rel_gap, time_limit=args.time_limit,
                            max_nodes=args.max_nodes)


def _problem(args):
    bm = load_model(args.model)
    if getattr(args, "objective", None):
        d, o = _objective(bm, args.objective)
        bm.problem.design_objective, bm.problem.operational_objective = d, o
    if getattr(args, "data", None):
        bm.problem.load_data_csv(_existing(args.data, "data file"))
    return bm


def _flatten(args, bm):
    return fl.flatten(bm.problem, discretize=args.discretize,
                      linearize=_linearize_arg(args, bm), method=args.method)


def _solve(args, bm):
    m = _flatten(args, bm)
    if not m.is_linear:
        raise ConfigError(f"model {bm.name} is nonlinear; pass --linearize with a grid file")
    return m, sv.solve(m, _opts(args))


# ---------------------------------------------------------------------------
# commands

def cmd_models(args) -> int:
    for name, fn in MODELS.items():
        print(f"{name:12s} {fn().notes}")
    return EXIT_OK


def cmd_build(args) -> int:
    bm = _problem(args)
    art = _Artifacts(args)
    art.write("summary.txt", bm.problem.summary() + "\n")
    art.write("system.json", system.dumps(bm.problem.system))
    if bm.grids:
        art.write("grids.txt", bm.grids)
    return EXIT_OK


def cmd_flatten(args) -> int:
    bm = _problem(args)
    m = _flatten(args, bm)
    art = _Artifacts(args)
    art.say(f"{m}; {len(m.nonlinear_constraints)} nonlinear rows, "
            f"{len(m.integer_variables)} integer variables")
    ext = "lp" if args.format == "canonical-lp" else "txt"
    art.write(f"{bm.name}.{ext}", fl.emit_text(m, args.format))
    return EXIT_OK


def cmd_solve(args) -> int:
    bm = _problem(args)
    m, sol = _solve(args, bm)
    art = _Artifacts(args)
    art.say(f"status {sol.status.value}  objective {sol.objective}  nodes {sol.nodes}")
    art.write("solution.txt", fl.format_solution(sol, m))
    return EXIT_OK if sol.ok else EXIT_INFEASIBLE


def cmd_pareto(args) -> int:
    bm = _problem(args)
    names = list(bm.objectives)
    a_name = args.a or names[0]
    b_name = args.b or (names[1] if len(names) > 1 else None)
    if b_name is None:
        raise ConfigError(f"model {bm.name} has a single objective")
    pts = algorithms.epsilon_constraint_pareto(
        bm.problem, _objective(bm, a_name), _objective(bm, b_name), args.points, _opts(args),
        discretize=args.discretize, linearize=_linearize_arg(args, bm), method=args.method)
    art = _Artifacts(args)
    for pt in pts:
        art.say(f"{a_name} {pt.objective_a:.6g}\t{b_name} {pt.objective_b:.6g}")
    art.write("pareto.csv", algorithms.pareto_csv(pts))
    return EXIT_OK


def synthetic_days(n: int = 365, seed: int = 0):
    """Daily mean temperature and heat demand with a seasonal swing and noise."""
    rng = np.random.default_rng(seed)
    day = np.arange(n)
    temp = 9.0 - 10.0 * np.cos(2 * np.pi * (day - 15) / 365) + rng.normal(0, 2.5, n)
    demand = np.maximum(0.0, 15.0 - temp) * (1 + rng.normal(0, 0.05, n))
    return ["T_amb", "Q_dem"], np.column_stack([temp, demand])


def read_table(path: str):
    with open(_existing(path, "data file"), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ConfigError(f"{path} needs a header and at least one row")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return rows[0], data


def cmd_cluster(args) -> int:
    if args.data == "synthetic":
        cols, X = synthetic_days(seed=args.seed)
    else:
        cols, X = read_table(args.data)

    def col(name):
        if name is None:
            return None
        if name not in cols:
            raise ConfigError(f"unknown column {name!r}; have {', '.join(cols)}")
        return cols.index(name)
    demand_col = cols[-1]
    res = algorithms.kmeans_cluster(
        X, args.k, seed=args.seed,
        keep_max=col(args.keep_max or demand_col) if args.keep_max is not False else None,
        drop_zero=col(args.drop_zero or demand_col) if args.drop_zero is not False else None)
    art = _Artifacts(args)
    art.say(f"{len(res.centers)} clusters from {len(res.kept)} rows, SSE {res.sse:.6g} "
            f"after {res.iterations} iterations")
    art.write("clusters.csv", algorithms.cluster_csv(res, cols))
    return EXIT_OK


def cmd_check(args) -> int:
    bm = _problem(args)
    m = _flatten(args, bm)
    if args.solution:
        with open(_existing(args.solution, "solution file")) as fh:
            text = fh.read()
        try:
            sol = fl.parse_solution(m, text, partial=True)
        except fl.UnknownVariable as exc:
            raise ConfigError(f"{args.solution} does not match this model (unknown variable "
                              f"{exc.args[0]}); pass the --linearize and --method used "
                              f"to produce it") from None
    else:
        if not m.is_linear:
            raise ConfigError(f"model {bm.name} is nonlinear; pass --linearize or --solution")
        sol = sv.solve(m, _opts(args))
    art = _Artifacts(args)
    if not sol.ok:
        art.say(f"status {sol.status.value}")
        return EXIT_INFEASIBLE
    if args.nonlinear:
        pf = algorithms.fix_and_correct(bm.problem, sol)
        report, _ = algorithms.verify_fixed(pf, sol, args.feas_tol, discretize=args.discretize)
    else:
        report = sv.check_feasibility(m, sol.values, args.feas_tol)
    art.say(report.text().splitlines()[0])
    art.write("feasibility.txt", report.text(all_rows=True) + "\n")
    return EXIT_OK if report.ok else EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="esopt", description="Two-stage energy-system optimization")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="key = value file; explicit flags take precedence")
        if model:
            p.add_argument("--model", choices=sorted(MODELS), default="mini-ies")
            p.add_argument("--data", help="CSV with scenario,timepoint,parameter,value rows")
            p.add_argument("--objective", help="named objective of the bundled model")
        p.add_argument("--out", help="output directory (default: write to stdout)")
        p.add_argument("-q", "--quiet", action="store_true",
                       help="print only the paths of written artifacts")
        p.add_argument("--seed", type=int, default=0)

    def lin(p):
        p.add_argument("--linearize", default="auto",
                       help="grid file, 'auto' for the bundled grids, or 'none'")
        p.add_argument("--method", choices=["cc", "mc"], default="cc")
        p.add_argument("--discretize", action=argparse.BooleanOptionalAction, default=True,
                       help="apply implicit Euler to differential states (default on)")

    def solver(p):
        p.add_argument("--rel-gap", type=float, default=1e-6)
        p.add_argument("--time-limit", type=float, default=300.0)
        p.add_argument("--max-nodes", type=int, default=20000)

    p = sub.add_parser("models", help="list bundled models")
    p.set_defaults(func=cmd_models)
    p = sub.add_parser("build", help="write the system as a structured document")
    common(p)
    p.set_defaults(func=cmd_build)
    p = sub.add_parser("flatten", help="write the deterministic equivalent")
    common(p)
    lin(p)
    p.add_argument("--format", choices=["canonical-lp", "expr-listing"], default="canonical-lp")
    p.set_defaults(func=cmd_flatten)
    p = sub.add_parser("solve", help="solve the (linearized) model")
    common(p)
    lin(p)
    solver(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("pareto", help="epsilon-constraint Pareto front")
    common(p)
    lin(p)
    solver(p)
    p.add_argument("--a", help="objective to minimize")
    p.add_argument("--b", help="objective to bound")
    p.add_argument("--points", type=int, default=8)
    p.set_defaults(func=cmd_pareto)
    p = sub.add_parser("cluster", help="k-means typical periods")
    common(p, model=False)
    p.add_argument("--data", default="synthetic", help="CSV with a header row, or 'synthetic'")
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--keep-max", nargs="?", const="", default=False,
                   help="keep the row with the largest value of COLUMN (default: last column) "
                        "as its own cluster")
    p.add_argument("--drop-zero", nargs="?", const="", default=False,
                   help="drop rows where COLUMN (default: last column) is zero")
    p.set_defaults(func=cmd_cluster)
    p = sub.add_parser("check", help="fix binaries, correct and verify against the nonlinear model")
    common(p)
    lin(p)
    solver(p)
    p.add_argument("--solution", help="solution file to verify instead of solving")
    p.add_argument("--feas-tol", type=float, default=1e-6)
    p.add_argument("--nonlinear", action=argparse.BooleanOptionalAction, default=True,
                   help="fix binaries and verify against the model without linearization")
    p.set_defaults(func=cmd_check)
    return ap


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = ap.parse_args(argv)
    if known.config:
        # config values fill options left at their defaults
        cfg = read_config(known.config)
        sub = ap._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        for key, raw in cfg.items():
            action = actions.get(key)
            if action is None:
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) != action.default:
                continue
            if action.nargs == 0:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                conv = action.type or str
                try:
                    value = conv(raw)
                except ValueError:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from None
                if action.choices is not None and value not in action.choices:
                    raise ConfigError(f"{key} must be one of {', '.join(map(str, action.choices))}")
            setattr(args, key, value)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"esopt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, fl.FlattenError, KeyError, ValueError, OSError, sv.NotLinear,
            algorithms.BadK) as exc:
        print(f"esopt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except algorithms.SubproblemInfeasible as exc:
        print(f"esopt: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"esopt: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
