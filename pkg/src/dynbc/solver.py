"""Linear solves, nested-mesh prolongation and the discrete inf-sup diagnostic."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    SurfaceQuadrature, bulk_matrices, coupling_matrices, multiplier_mass, surface_matrices,
)
from .spaces import DofMap, prolong_bulk, prolong_multiplier, prolong_surface

RESIDUAL_TOL = 1e-10
#: componentwise backward error accepted when the relative residual stalls
BACKWARD_TOL = 1000 * np.finfo(float).eps

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Factorization breakdown or a residual above the solve contract."""


@dataclass
class SolutionTriple:
    """Coefficient vectors of (u_h, p_h, lambda_h) and the spaces they live in."""

    dofs: DofMap
    u: np.ndarray
    p: np.ndarray
    lam: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.u, self.p, self.lam])

    @property
    def bulk(self):
        return self.dofs.bulk

    @property
    def gamma(self):
        return self.dofs.gamma

    @classmethod
    def from_vector(cls, dofs, x):
        u, p, lam = dofs.split(x)
        return cls(dofs, u.copy(), p.copy(), lam.copy())

    @classmethod
    def zeros(cls, dofs):
        return cls(dofs, np.zeros(dofs.n_u), np.zeros(dofs.n_p), np.zeros(dofs.n_lambda))


def relative_residual(matrix, x, b):
    r = b - matrix @ x
    scale = max(np.linalg.norm(b), np.linalg.norm(matrix @ x), 1e-300)
    return np.linalg.norm(r) / scale


def backward_error(matrix, x, b):
    """Componentwise backward error max |r_i| / (|A| |x| + |b|)_i."""
    r = np.abs(b - matrix @ x)
    scale = abs(matrix) @ np.abs(x) + np.abs(b)
    return float(np.max(np.divide(r, scale, out=np.zeros_like(r), where=scale > 0), initial=0.0))


def symmetric_scaling(matrix):
    """Diagonal scaling that brings the saddle point blocks to unit size.

    Rows with a nonzero diagonal get ``1/sqrt|a_ii|``; constraint rows (zero
    diagonal) get the inverse norm of their already scaled coupling row.
    """
    A = sp.csr_matrix(matrix)
    d = np.abs(A.diagonal())
    primal = d > 0
    s = np.ones(A.shape[0])
    s[primal] = 1 / np.sqrt(d[primal])
    if not np.all(primal):
        C = A[~primal][:, primal] @ sp.diags(s[primal])
        norms = np.sqrt(np.asarray(C.multiply(C).sum(axis=1)).ravel())
        s[~primal] = np.where(norms > 0, 1 / np.where(norms > 0, norms, 1), 1.0)
    return s


def solve_matrix(matrix, b, tol=RESIDUAL_TOL, refinements=3):
    """Scaled sparse LU solve with iterative refinement up to ``tol`` relative residual.

    On strongly graded meshes the residual of the rounded solution itself can
    exceed ``tol`` relative to ``|b|``; the solve is then accepted only if
    ``x`` is backward stable componentwise, i.e. exact for a perturbation of
    the data at rounding level.
    """
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    s = symmetric_scaling(matrix)
    scaled = sp.diags(s) @ sp.csr_matrix(matrix) @ sp.diags(s)
    try:
        lu = spla.splu(sp.csc_matrix(scaled), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc

    def apply(r):
        return s * lu.solve(s * r)

    x = apply(b)
    for _ in range(refinements):
        if not np.all(np.isfinite(x)):
            raise SolverError("factorization produced non-finite values")
        if relative_residual(matrix, x, b) <= tol:
            return x
        x = x + apply(b - matrix @ x)
    res = relative_residual(matrix, x, b)
    if np.isfinite(res) and res > tol and backward_error(matrix, x, b) <= BACKWARD_TOL:
        log.debug("relative residual %.2e at rounding level; backward stable", res)
        return x
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds {tol:.0e}")
    return x


def solve(system, tol=RESIDUAL_TOL):
    """Solve the saddle point system; returns a :class:`SolutionTriple`."""
    x = solve_matrix(system.matrix, system.rhs, tol=tol)
    return SolutionTriple.from_vector(system.dofs, x)


def prolong(sol, fine):
    """Embed a solution into the spaces ``fine`` built on nested refined meshes."""
    coarse = sol.dofs
    return SolutionTriple(
        fine,
        prolong_bulk(coarse, fine, sol.u),
        prolong_surface(coarse, fine, sol.p),
        prolong_multiplier(coarse, fine, sol.lam),
    )


# -- inf-sup diagnostic --------------------------------------------------------

def infsup_from_matrices(C, N_X, N_M):
    """Smallest generalized singular value of C w.r.t. the norms N_X and N_M."""
    if C.shape[0] == 0:
        raise ValueError("empty multiplier space")
    lu = spla.splu(sp.csc_matrix(N_X))
    Y = lu.solve(np.asarray(C.T.todense()))
    S = np.asarray(C @ Y)
    S = 0.5 * (S + S.T)
    M = np.asarray(N_M.todense()) if sp.issparse(N_M) else np.asarray(N_M)
    try:
        w = la.eigh(S, M, eigvals_only=True, subset_by_index=[0, 0])
    except la.LinAlgError as exc:
        raise SolverError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.sqrt(max(w[0], 0.0)))


def infsup_matrices(dofs):
    """The coupling C = [C_u, -C_p] and the norm matrices of X_h and M_h."""
    sq = SurfaceQuadrature(dofs)
    M_u, K_u = bulk_matrices(dofs, unit=True)
    M_p, K_p = surface_matrices(dofs, sq, unit=True)
    C_u, C_p = coupling_matrices(dofs, sq)
    C = sp.hstack([C_u, -C_p]).tocsr()
    N_X = sp.block_diag([M_u + K_u, M_p + K_p]).tocsr()
    N_M = multiplier_mass(dofs, weighted=True)
    return C, N_X, N_M


def infsup_constant(dofs, max_dim=3000):
    """Discrete inf-sup constant of the coupling, H^1 x H^1 against the M_h norm."""
    if dofs.n_lambda == 0:
        raise ValueError("empty multiplier space")
    if dofs.n_total > max_dim:
        raise ValueError(f"problem too large for the dense eigen-solve ({dofs.n_total} > {max_dim})")
    return infsup_from_matrices(*infsup_matrices(dofs))
