"""Implicit Euler time stepping with spatial adaptivity in every step."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .adapt import at_rounding_level, doerfler_mark, refine_meshes
from .assembly import ProblemData, assemble
from .estimator import attribute, estimate
from .mesh import create_unit_square, trace_gamma
from .solver import SolutionTriple, prolong, solve
from .spaces import SchemeConfig, build_spaces, interpolate_bulk, interpolate_surface

log = logging.getLogger(__name__)


class NotConvergedError(RuntimeError):
    """The inner adaptive loop of a time step hit its round limit."""


@dataclass
class TimeProblem:
    """Time dependent sources ``f(x, y, t)`` and ``g(x, y, t)``."""

    f: Callable
    g: Callable

    def at(self, t):
        f, g = self.f, self.g
        return ProblemData(lambda x, y: f(x, y, t), lambda x, y: g(x, y, t))


@dataclass
class StepRecord:
    n: int
    t: float
    dofs_u: int
    dofs_p: int
    dofs_lambda: int
    estimator: float
    refine_rounds: int


@dataclass
class TimeState:
    t: float
    sol: SolutionTriple
    tau: float
    n: int = 0
    history: List[StepRecord] = field(default_factory=list)

    @property
    def bulk(self):
        return self.sol.bulk

    @property
    def gamma(self):
        return self.sol.gamma


def initial_state(bulk, gamma, scheme, tau, t0=1.0, u0=None, p0=None):
    """State at ``t0``; initial data are interpolated (zero when omitted).

    ``p0`` defaults to the trace of ``u0`` so that the pair is consistent.
    """
    scheme = scheme.replace(sigma=1.0 / tau)
    dofs = build_spaces(bulk, gamma, scheme)
    sol = SolutionTriple.zeros(dofs)
    if u0 is not None:
        sol.u = interpolate_bulk(dofs, u0)
        sol.p = interpolate_surface(dofs, p0 if p0 is not None else u0)
    elif p0 is not None:
        raise ValueError("p0 without u0 gives inconsistent initial data")
    return TimeState(t0, sol, tau)


TOL_MEASURES = ("squared", "total")


def _measure(report, tol_measure):
    if tol_measure == "squared":
        return report.total2
    if tol_measure == "total":
        return report.total
    raise ValueError(f"unknown tolerance measure {tol_measure!r}")


def euler_step(state, problem, tol=1e-6, theta=0.75, max_rounds=30, tol_measure="squared"):
    """Advance by one implicit Euler step, refining until the estimator is below ``tol``.

    ``tol_measure`` selects what is compared with ``tol``: the sum of squared
    indicators (``"squared"``, default) or its square root (``"total"``).
    """
    tau = state.tau
    t_new = state.t + tau
    sigma = 1.0 / tau
    base = problem.at(t_new)
    prev = state.sol
    scheme = prev.dofs.scheme
    if scheme.sigma != sigma:
        scheme = scheme.replace(sigma=sigma)
    bulk, gamma = prev.bulk, prev.gamma
    rounds = 0
    while True:
        dofs = build_spaces(bulk, gamma, scheme)
        old = prolong(prev, dofs)
        data = base.with_extra(sigma * old.u, sigma * old.p)
        sol = solve(assemble(dofs, data))
        report = attribute(estimate(sol, data), dofs)
        log.debug("round %d dofs %d estimator %.3e", rounds, dofs.n_total, report.total)
        if _measure(report, tol_measure) <= tol or at_rounding_level(report, sol):
            break
        marked_T, marked_I, converged = doerfler_mark(report.eta_tilde_T2, report.eta_tilde_I2, theta)
        if converged:
            break
        if rounds >= max_rounds:
            raise NotConvergedError(
                f"estimator {_measure(report, tol_measure):.3e} ({tol_measure}) above {tol:.1e} "
                f"after {rounds} refinement rounds")
        bulk, gamma = refine_meshes(bulk, gamma, marked_T, marked_I)
        rounds += 1
    # later steps only need this mesh as their root
    bulk.forget_ancestry()
    record = StepRecord(state.n + 1, t_new, dofs.n_u, dofs.n_p, dofs.n_lambda, report.total, rounds)
    log.info("n %d t %.4f dofs %d/%d/%d estimator %.3e rounds %d", record.n, t_new,
             dofs.n_u, dofs.n_p, dofs.n_lambda, report.total, rounds)
    return TimeState(t_new, sol, tau, state.n + 1, state.history + [record])


def n_steps(t0, t1, tau):
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if not tau > 0:
        raise ValueError("tau must be positive")
    # tolerate rounding in (t1 - t0) / tau
    return max(1, math.ceil((t1 - t0) / tau - 1e-9))


def run_parabolic(problem, t0=1.0, t1=10.0, tau=1.5e-2, tol=1e-6, theta=0.75,
                  scheme=None, bulk=None, gamma=None, u0=None, p0=None,
                  max_rounds=50, snapshot=None, tol_measure="squared"):
    """Run the implicit Euler scheme on [t0, t1]; returns the final :class:`TimeState`.

    ``snapshot(state)`` is called after every step when given.
    """
    steps = n_steps(t0, t1, tau)
    scheme = scheme or SchemeConfig.p2p0()
    if bulk is None:
        bulk = create_unit_square(2)
    if gamma is None:
        gamma = trace_gamma(bulk)
    state = initial_state(bulk, gamma, scheme, tau, t0, u0, p0)
    for _ in range(steps):
        state = euler_step(state, problem, tol, theta, max_rounds, tol_measure)
        if snapshot is not None:
            snapshot(state)
    return state


def history_csv(history, metadata=None):
    buf = io.StringIO()
    if metadata:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in metadata.items()) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "t", "dofs_u", "dofs_p", "dofs_lambda", "estimator", "refine_rounds"])
    for r in history:
        writer.writerow([r.n, f"{r.t:.17g}", r.dofs_u, r.dofs_p, r.dofs_lambda,
                         f"{r.estimator:.17g}", r.refine_rounds])
    return buf.getvalue()


def parabolic_problem(f_const=0.1):
    """Sources of the oscillating boundary example: constant f, g = xy cos(pi t x) cos(pi t y)."""
    return TimeProblem(
        lambda x, y, t: np.full(np.shape(x), f_const),
        lambda x, y, t: x * y * np.cos(np.pi * t * x) * np.cos(np.pi * t * y),
    )

