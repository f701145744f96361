"""Doerfler marking and the solve-estimate-mark-refine loop."""
from __future__ import annotations

import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .assembly import assemble
from .estimator import LAMBDA_NORM, attribute, error_norms, estimate
from .mesh import (
    bisect, map_segments, ratio_blocked, refine_gamma, sync_gamma_to_bulk, uniform_refine,
    uniform_refine_gamma,
)
from .solver import solve
from .spaces import build_spaces

log = logging.getLogger(__name__)

# estimators below this multiple of eps * (solution scale) are rounding noise
ROUNDING_FACTOR = 1000.0


def doerfler_mark(eta_T2, eta_I2, theta):
    """Minimal pooled sets of triangles and segments carrying (1 - theta) of the total.

    Returns ``(marked_triangles, marked_segments, converged)``; ``converged`` is
    True (with empty sets) when every indicator vanishes.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    eta_T2 = np.asarray(eta_T2, dtype=float)
    eta_I2 = np.asarray(eta_I2, dtype=float)
    if np.any(eta_T2 < 0) or np.any(eta_I2 < 0):
        raise ValueError("indicators must be nonnegative")
    values = np.concatenate([eta_T2, eta_I2])
    total = values.sum()
    empty = np.array([], dtype=np.int64)
    if total <= 0:
        return empty, empty, True
    kind = np.concatenate([np.zeros(len(eta_T2), dtype=np.int64), np.ones(len(eta_I2), dtype=np.int64)])
    index = np.concatenate([np.arange(len(eta_T2)), np.arange(len(eta_I2))])
    # descending value, then triangles before segments, then ascending index
    order = np.lexsort((index, kind, -values))
    csum = np.cumsum(values[order])
    n = int(np.searchsorted(csum, (1 - theta) * total, side="left")) + 1
    chosen = order[:min(n, len(order))]
    ks, ids = kind[chosen], index[chosen]
    return np.sort(ids[ks == 0]), np.sort(ids[ks == 1]), False


@dataclass
class AdaptConfig:
    theta: float = 0.75
    mode: str = "adaptive"
    max_dofs: Optional[int] = None
    tol: Optional[float] = None
    max_steps: int = 500
    with_error: bool = False
    #: compute errors only for the last ``error_window`` rows (all rows when None)
    error_window: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class AdaptState:
    bulk: object
    gamma: object
    scheme: object
    data: object


@dataclass
class ConvergenceRecord:
    step: int
    dofs_u: int
    dofs_p: int
    dofs_lambda: int
    estimator: float
    error: Optional[float] = None

    @property
    def dofs(self):
        return self.dofs_u + self.dofs_p + self.dofs_lambda


@dataclass
class ConvergenceTable:
    rows: List[ConvergenceRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def dofs(self):
        return np.array([r.dofs for r in self.rows], dtype=float)

    @property
    def estimator(self):
        return np.array([r.estimator for r in self.rows])

    @property
    def error(self):
        return np.array([np.nan if r.error is None else r.error for r in self.rows])

    def to_csv(self):
        buf = io.StringIO()
        if self.metadata:
            buf.write("# " + " ".join(f"{k}={v}" for k, v in self.metadata.items()) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "dofs_u", "dofs_p", "dofs_lambda", "error", "estimator"])
        for r in self.rows:
            writer.writerow([r.step, r.dofs_u, r.dofs_p, r.dofs_lambda,
                             "" if r.error is None else f"{r.error:.17g}", f"{r.estimator:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [line for line in text.splitlines() if line and not line.startswith("#")]
        table = cls()
        for row in csv.DictReader(lines):
            table.append(ConvergenceRecord(
                int(row["step"]), int(row["dofs_u"]), int(row["dofs_p"]), int(row["dofs_lambda"]),
                float(row["estimator"]), float(row["error"]) if row["error"] else None))
        return table


def fit_slope(dofs, values):
    """Least-squares slope of log(values) against log(dofs)."""
    return float(np.polyfit(np.log(dofs), np.log(values), 1)[0])


def reference_meshes(bulk, gamma):
    """Both meshes after two uniform refinements."""
    for _ in range(2):
        bulk = uniform_refine(bulk)
        gamma = uniform_refine_gamma(gamma, bulk)
    return bulk, gamma


def reference_error(sol, data):
    bulk, gamma = reference_meshes(sol.bulk, sol.gamma)
    fine = build_spaces(bulk, gamma, sol.dofs.scheme)
    return error_norms(sol, solve(assemble(fine, data)))


def refine_meshes(bulk, gamma, marked_T, marked_I):
    """Bisect the bulk and the boundary mesh, keeping h_E <= rho h_I."""
    blocked = ratio_blocked(gamma, marked_I, bulk)
    new_bulk = bisect(bulk, marked_T, marked_boundary=gamma.parent[blocked])
    # a blocked edge need not be the refinement edge of its triangle; repeat until split
    for _ in range(4):
        synced = sync_gamma_to_bulk(gamma, new_bulk)
        still = ratio_blocked(synced, map_segments(gamma, synced, marked_I), new_bulk)
        if still.size == 0:
            break
        new_bulk = bisect(new_bulk, (), marked_boundary=synced.parent[still])
    synced = sync_gamma_to_bulk(gamma, new_bulk)
    new_gamma = refine_gamma(synced, map_segments(gamma, synced, marked_I), new_bulk)
    return new_bulk, new_gamma


def at_rounding_level(report, sol):
    """True when the estimator is indistinguishable from zero in floating point."""
    scale = max(1.0, *(np.abs(v).max(initial=0.0) for v in (sol.u, sol.p, sol.lam)))
    scale *= max(1.0, sol.dofs.scheme.sigma)
    return report.total <= ROUNDING_FACTOR * np.finfo(float).eps * scale


def adapt_step(state, config, step=0, with_error=None):
    """One solve-estimate-mark-refine cycle.

    Returns ``(new_state, record, converged, solution)``.
    """
    with_error = config.with_error if with_error is None else with_error
    dofs = build_spaces(state.bulk, state.gamma, state.scheme)
    sol = solve(assemble(dofs, state.data))
    report = attribute(estimate(sol, state.data), dofs)
    err = reference_error(sol, state.data).total if with_error else None
    record = ConvergenceRecord(step, dofs.n_u, dofs.n_p, dofs.n_lambda, report.total, err)
    if config.mode == "uniform":
        bulk = uniform_refine(state.bulk)
        gamma = uniform_refine_gamma(state.gamma, bulk)
        return AdaptState(bulk, gamma, state.scheme, state.data), record, False, sol
    if at_rounding_level(report, sol):
        return state, record, True, sol
    marked_T, marked_I, converged = doerfler_mark(report.eta_tilde_T2, report.eta_tilde_I2, config.theta)
    if converged:
        return state, record, True, sol
    bulk, gamma = refine_meshes(state.bulk, state.gamma, marked_T, marked_I)
    return AdaptState(bulk, gamma, state.scheme, state.data), record, False, sol


def adaptive_loop(config, state, on_solution=None):
    """Iterate :func:`adapt_step` until the stopping rule holds.

    Errors (when requested) are computed after the loop: in uniform mode the
    solution two levels up is the reference, so only the last two levels need
    extra solves.  ``on_solution(solution=..., step=...)`` is called every step.
    """
    table = ConvergenceTable(metadata={
        "mode": config.mode, "theta": config.theta, "sigma": state.scheme.sigma,
        "lambda_norm": LAMBDA_NORM,
    })
    window = config.error_window
    keep = deque(maxlen=None if config.mode == "uniform" else window)
    data = state.data
    for step in range(config.max_steps):
        state, record, converged, sol = adapt_step(state, config, step, with_error=False)
        table.append(record)
        if config.with_error:
            keep.append((step, sol))
        if on_solution is not None:
            on_solution(solution=sol, step=step)
        log.info("step %d dofs %d estimator %.4e error %s", step, record.dofs,
                 record.estimator, record.error)
        if converged:
            break
        if config.max_dofs is not None and record.dofs >= config.max_dofs:
            break
        if config.tol is not None and record.estimator <= config.tol:
            break
    if config.with_error:
        _fill_errors(table, list(keep), data, config)
    return table


def _fill_errors(table, kept, data, config):
    first = len(table) - (config.error_window or len(table))
    by_step = dict(kept)
    for step, sol in kept:
        if step < first:
            continue
        ref = by_step.get(step + 2) if config.mode == "uniform" else None
        if ref is not None:
            err = error_norms(sol, ref).total
        else:
            err = reference_error(sol, data).total
        table.rows[step].error = err
        log.info("step %d error %.4e", step, err)
