"""Command line driver for the stationary, parabolic and verification experiments.

Examples
--------
::

    dynbc square --scheme p1 --max-dofs 10000 --with-error --out square.csv
    dynbc lshape --scheme p2p0 --mode uniform --max-dofs 5000
    dynbc parabolic --t1 2 --out history.csv
    dynbc manufactured --scheme p2p0 --max-dofs 20000
    dynbc infsup --scheme p1
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .adapt import AdaptConfig, AdaptState, ConvergenceRecord, ConvergenceTable, adaptive_loop, fit_slope
from .assembly import (
    BulkQuadrature, ProblemData, SurfaceQuadrature, assemble, constant, multiplier_mass,
)
from .estimator import LAMBDA_NORM, attribute, estimate
from .mesh import (
    create_lshape, create_unit_square, refine_gamma, trace_gamma, uniform_refine,
    uniform_refine_gamma,
)
from .solver import SolverError, infsup_constant, solve
from .spaces import MULTIPLIER_P0, MULTIPLIER_P1, SchemeConfig, build_spaces
from .timestep import NotConvergedError, TOL_MEASURES, history_csv, parabolic_problem, run_parabolic

log = logging.getLogger("dynbc")

SCHEMES = {
    "p1": dict(bulk_degree=1, surface_degree=1, multiplier=MULTIPLIER_P1),
    "p2p0": dict(bulk_degree=2, surface_degree=2, multiplier=MULTIPLIER_P0),
    "p2p1": dict(bulk_degree=2, surface_degree=2, multiplier=MULTIPLIER_P1),
}


class ConfigError(ValueError):
    """Invalid command line or configuration file."""


# -- problems -----------------------------------------------------------------

def square_problem():
    """Constant bulk source and an oscillating boundary source on the unit square."""
    return ProblemData(constant(0.04),
                       lambda x, y: x * y * np.cos(10 * np.pi * x) * np.cos(10 * np.pi * y))


def lshape_problem():
    return ProblemData(constant(4.0), lambda x, y: 4.0 * (x * x - x + y * y - y))


@dataclass
class Manufactured:
    """u = cos(pi x) cos(pi y) on the unit square; its normal derivative vanishes on Gamma."""

    sigma: float = 1.0

    @staticmethod
    def u(x, y):
        return np.cos(np.pi * x) * np.cos(np.pi * y)

    @staticmethod
    def grad(x, y):
        return np.stack([-np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
                         -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)], axis=-1)

    def data(self):
        s = self.sigma
        # on every side the trace is cos(pi s') up to sign, so -p'' = pi^2 p
        return ProblemData(lambda x, y: (s + 2 * np.pi ** 2) * self.u(x, y),
                           lambda x, y: (s + np.pi ** 2) * self.u(x, y))

    def errors(self, sol):
        """H1(Omega), H1(Gamma) and weighted multiplier errors of a discrete solution."""
        dofs = sol.dofs
        bq = BulkQuadrature(dofs)
        x, y = bq.x[..., 0], bq.x[..., 1]
        eu = np.sum(bq.w * ((self.u(x, y) - bq.values(sol.u)) ** 2
                            + np.sum((self.grad(x, y) - bq.gradients(sol.u)) ** 2, axis=-1)))
        sq = SurfaceQuadrature(dofs)
        xs, ys = sq.x[..., 0], sq.x[..., 1]
        ends = dofs.gamma.point(dofs.gamma.segments)
        tangent = (ends[:, 1] - ends[:, 0]) / dofs.gamma.sizes[:, None]
        dp = np.einsum("sqd,sd->sq", self.grad(xs, ys), tangent)
        ep = np.sum(sq.w * ((self.u(xs, ys) - sq.values(sol.p)) ** 2
                            + (dp - sq.derivatives(sol.p)) ** 2))
        el = float(sol.lam @ (multiplier_mass(dofs, weighted=True) @ sol.lam))
        return float(np.sqrt(eu)), float(np.sqrt(ep)), float(np.sqrt(max(el, 0.0)))


# -- configuration --------------------------------------------------------------

def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (v.strip() for v in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="dynbc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value file; flags given here override it")
    common.add_argument("--scheme", choices=sorted(SCHEMES))
    common.add_argument("--mode", choices=["adaptive", "uniform"])
    common.add_argument("--theta", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--rho", type=float)
    common.add_argument("--max-dofs", type=int)
    common.add_argument("--max-steps", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--tol-measure", choices=TOL_MEASURES)
    common.add_argument("--max-rounds", type=int)
    common.add_argument("--tau", type=float)
    common.add_argument("--t0", type=float)
    common.add_argument("--t1", type=float)
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--dump-meshes", help="write final meshes and solution here")
    common.add_argument("--with-error", action="store_true", default=None,
                        help="add the error against a twice uniformly refined reference")
    common.add_argument("-v", "--verbose", action="store_true", default=None)
    for name, text in (("square", "unit square, oscillating boundary source"),
                       ("lshape", "L-shaped domain, polynomial boundary source"),
                       ("parabolic", "implicit Euler run with adaptive meshes"),
                       ("manufactured", "uniform refinement against an analytic solution"),
                       ("infsup", "discrete inf-sup constants on uniform meshes")):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


DEFAULTS = {
    "square": dict(scheme="p1", mode="adaptive", max_dofs=10000),
    "lshape": dict(scheme="p1", mode="adaptive", max_dofs=10000),
    "parabolic": dict(scheme="p2p0", tau=1.5e-2, t0=1.0, t1=10.0, tol=1e-6, max_rounds=50,
                      tol_measure="squared"),
    "manufactured": dict(scheme="p1", mode="uniform", max_dofs=20000),
    "infsup": dict(scheme="p1", max_dofs=3000),
}
COMMON_DEFAULTS = dict(theta=0.75, sigma=1.0, rho=8.0, max_steps=500, with_error=False,
                       verbose=False)
CASTS = dict(theta=float, sigma=float, rho=float, max_dofs=int, max_steps=int, tol=float,
             max_rounds=int, tau=float, t0=float, t1=float,
             with_error=lambda v: str(v).lower() in ("1", "true", "yes", "on"),
             verbose=lambda v: str(v).lower() in ("1", "true", "yes", "on"))


def resolve_options(args):
    """Merge defaults, the config file and command line flags (in that order)."""
    opts = dict(COMMON_DEFAULTS)
    opts.update(DEFAULTS[args.command])
    if args.config:
        for key, value in read_config(args.config).items():
            if key not in vars(args) or key in ("command", "config"):
                raise ConfigError(f"unknown config key {key!r}")
            try:
                opts[key] = CASTS.get(key, str)(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    if opts.get("scheme") not in SCHEMES:
        raise ConfigError(f"unknown scheme {opts.get('scheme')!r}")
    if opts.get("mode", "adaptive") not in ("adaptive", "uniform"):
        raise ConfigError(f"unknown mode {opts['mode']!r}")
    if not 0 < opts["theta"] < 1:
        raise ConfigError("theta must lie in (0, 1)")
    if opts["sigma"] <= 0:
        raise ConfigError("sigma must be positive")
    if opts["rho"] < 2:
        raise ConfigError("rho must be at least 2")
    if opts.get("max_dofs") is not None and opts["max_dofs"] <= 0:
        raise ConfigError("max-dofs must be positive")
    if opts.get("tau") is not None and opts["tau"] <= 0:
        raise ConfigError("tau must be positive")
    if args.command == "parabolic" and not opts["t1"] > opts["t0"]:
        raise ConfigError("t1 must exceed t0")
    return opts


def scheme_from(opts):
    return SchemeConfig(sigma=opts["sigma"], **SCHEMES[opts["scheme"]])


def metadata(opts, extra=None):
    meta = {"scheme": opts["scheme"], "theta": opts["theta"], "sigma": opts["sigma"],
            "lambda_norm": LAMBDA_NORM}
    meta.update(extra or {})
    return meta


# -- output -----------------------------------------------------------------------

def solution_dump(sol):
    """Bulk mesh, boundary mesh, then one ``field index value`` line per dof."""
    parts = [sol.bulk.dump(), sol.gamma.dump()]
    for name, vec in (("u", sol.u), ("p", sol.p), ("lambda", sol.lam)):
        parts.append("".join(f"{name} {i} {v:.17g}\n" for i, v in enumerate(vec)))
    return "".join(parts)


def write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def slope_summary(table, mode):
    """Fitted rates over the last 10 adaptive steps or the last 3 uniform levels."""
    k = 10 if mode == "adaptive" else 3
    if len(table) < 2:
        return {}
    d = table.dofs[-k:]
    out = {"estimator_slope": fit_slope(d, table.estimator[-k:])}
    err = table.error[-k:]
    if np.all(np.isfinite(err)) and np.all(err > 0):
        out["error_slope"] = fit_slope(d, err)
    return out


# -- commands ---------------------------------------------------------------------

def _stationary(opts, bulk, data):
    scheme = scheme_from(opts)
    gamma = trace_gamma(bulk, opts["rho"])
    config = AdaptConfig(theta=opts["theta"], mode=opts["mode"], max_dofs=opts["max_dofs"],
                         tol=opts.get("tol"), max_steps=opts["max_steps"],
                         with_error=opts["with_error"])
    last = {}
    table = adaptive_loop(config, AdaptState(bulk, gamma, scheme, data), on_solution=last.update)
    table.metadata = metadata(opts, {"mode": opts["mode"]})
    return table, last.get("solution")


def run_square(opts):
    return _stationary(opts, create_unit_square(2), square_problem())


def run_lshape(opts):
    return _stationary(opts, create_lshape(1), lshape_problem())


def run_manufactured(opts):
    scheme = scheme_from(opts)
    problem = Manufactured(opts["sigma"])
    data = problem.data()
    bulk = create_unit_square(2)
    gamma = trace_gamma(bulk, opts["rho"])
    table = ConvergenceTable(metadata=metadata(opts, {"mode": "uniform", "error": "analytic-H1"}))
    sol = None
    for step in range(opts["max_steps"]):
        dofs = build_spaces(bulk, gamma, scheme)
        sol = solve(assemble(dofs, data))
        eta = attribute(estimate(sol, data), dofs).total
        err = float(np.linalg.norm(problem.errors(sol)))
        table.append(ConvergenceRecord(step, dofs.n_u, dofs.n_p, dofs.n_lambda, eta, err))
        log.info("level %d dofs %d error %.4e", step, dofs.n_total, err)
        if dofs.n_total >= opts["max_dofs"]:
            break
        bulk = uniform_refine(bulk)
        gamma = uniform_refine_gamma(gamma, bulk)
    return table, sol


def infsup_levels(scheme, max_dofs=3000, bulk=None, rho=8.0):
    """Rows ``(level, dofs, beta)`` on uniform refinements within ``max_dofs``."""
    bulk = bulk if bulk is not None else create_unit_square(2)
    gamma = trace_gamma(bulk, rho)
    rows = []
    for level in range(50):
        dofs = build_spaces(bulk, gamma, scheme)
        if dofs.n_total > max_dofs:
            break
        rows.append((level, dofs.n_total, infsup_constant(dofs, max_dim=max_dofs)))
        bulk = uniform_refine(bulk)
        gamma = uniform_refine_gamma(gamma, bulk)
    return rows


def infsup_surface_levels(scheme, bulk_level=2, n_levels=3, rho=8.0):
    """Rows ``(gamma_level, dofs, beta)`` refining only the boundary mesh on a fixed bulk mesh."""
    bulk = create_unit_square(2)
    for _ in range(bulk_level):
        bulk = uniform_refine(bulk)
    gamma = trace_gamma(bulk, rho)
    rows = []
    for level in range(n_levels):
        dofs = build_spaces(bulk, gamma, scheme)
        rows.append((level, dofs.n_total, infsup_constant(dofs)))
        gamma = refine_gamma(gamma, np.arange(gamma.n_segments), bulk)
    return rows


def run_infsup(opts):
    scheme = scheme_from(opts)
    lines = ["# " + " ".join(f"{k}={v}" for k, v in metadata(opts).items()), "level,dofs,beta"]
    lines += [f"{lv},{n},{b:.17g}" for lv, n, b in infsup_levels(scheme, opts["max_dofs"], rho=opts["rho"])]
    lines += ["gamma_level,dofs,beta"]
    lines += [f"{lv},{n},{b:.17g}" for lv, n, b in infsup_surface_levels(scheme, rho=opts["rho"])]
    return "\n".join(lines) + "\n"


def run_parabolic_cmd(opts):
    scheme = scheme_from(opts)
    bulk = create_unit_square(2)
    state = run_parabolic(parabolic_problem(), t0=opts["t0"], t1=opts["t1"], tau=opts["tau"],
                          tol=opts["tol"], theta=opts["theta"], scheme=scheme, bulk=bulk,
                          gamma=trace_gamma(bulk, opts["rho"]), max_rounds=opts["max_rounds"],
                          tol_measure=opts["tol_measure"])
    meta = metadata(opts, {"tau": opts["tau"], "tol": opts["tol"],
                           "tol_measure": opts["tol_measure"]})
    meta.pop("sigma")
    return history_csv(state.history, meta), state.sol


def run(argv=None):
    """Parse ``argv`` and run one experiment; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args)
    except ConfigError as exc:
        print(f"dynbc: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                        format="%(message)s")
    try:
        sol = None
        if args.command == "infsup":
            text = run_infsup(opts)
        elif args.command == "parabolic":
            text, sol = run_parabolic_cmd(opts)
        else:
            runner = {"square": run_square, "lshape": run_lshape,
                      "manufactured": run_manufactured}[args.command]
            table, sol = runner(opts)
            text = table.to_csv()
            for key, value in slope_summary(table, opts["mode"]).items():
                print(f"{key} {value:.4f}", file=sys.stderr)
        write_text(opts.get("out"), text)
        if opts.get("dump_meshes") and sol is not None:
            write_text(opts["dump_meshes"], solution_dump(sol))
    except (SolverError, NotConvergedError, la.LinAlgError, FloatingPointError) as exc:
        print(f"dynbc: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dynbc: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dynbc: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
