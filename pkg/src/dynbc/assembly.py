"""Assembly of the bulk-surface saddle point system."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .spaces import (
    DofMap, _nodal, barycentric_gradients, line_basis, line_basis_deriv,
    multiplier_degree, segment_parent_coords, tri_basis, tri_basis_grad,
)

# 7-point symmetric rule, exact for degree 5 (barycentric points, weights sum to 1)
_a1 = (6 - np.sqrt(15)) / 21
_a2 = (6 + np.sqrt(15)) / 21
TRI_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _a1, 1 - 2 * _a1], [_a1, 1 - 2 * _a1, _a1], [1 - 2 * _a1, _a1, _a1],
    [_a2, _a2, 1 - 2 * _a2], [_a2, 1 - 2 * _a2, _a2], [1 - 2 * _a2, _a2, _a2],
])
TRI_WEIGHTS = np.array([9 / 40] + [(155 - np.sqrt(15)) / 1200] * 3 + [(155 + np.sqrt(15)) / 1200] * 3)

# 5-point Gauss-Legendre on [0, 1], exact for degree 9
_gx, _gw = np.polynomial.legendre.leggauss(5)
LINE_POINTS = 0.5 * (_gx + 1)
LINE_WEIGHTS = 0.5 * _gw


@dataclass
class ProblemData:
    """Sources of the stationary problem.

    ``f(x, y)`` acts in the bulk, ``g(x, y)`` on Gamma.  ``f_extra`` and
    ``g_extra`` are optional finite element coefficient vectors (in V_h and Q_h)
    added to the sources; the time stepper uses them for sigma * u^n.
    """

    f: Callable
    g: Callable
    f_extra: Optional[np.ndarray] = None
    g_extra: Optional[np.ndarray] = None

    def with_extra(self, f_extra=None, g_extra=None):
        return ProblemData(self.f, self.g, f_extra, g_extra)


def constant(c):
    """A vectorized constant source."""
    return lambda x, y: np.full(np.shape(x), float(c))


# -- quadrature data -------------------------------------------------------

class BulkQuadrature:
    """Quadrature points, weights and basis data on every triangle."""

    def __init__(self, dofs: DofMap, points=TRI_POINTS, weights=TRI_WEIGHTS):
        mesh = dofs.bulk
        deg = dofs.scheme.bulk_degree
        verts = mesh.vertices[mesh.triangles]
        self.bary = points
        self.x = np.einsum("qk,tkd->tqd", points, verts)
        self.w = mesh.areas[:, None] * weights[None, :]
        self.phi = tri_basis(points, deg)
        self.grad_l = barycentric_gradients(mesh)
        self.dphi = tri_basis_grad(np.broadcast_to(points, (mesh.n_triangles,) + points.shape),
                                   self.grad_l, deg)
        alpha_nodes = _nodal(dofs.scheme.alpha, verts[..., 0], verts[..., 1])
        self.alpha_nodes = alpha_nodes
        self.alpha = alpha_nodes @ points.T
        self.grad_alpha = np.einsum("tk,tkd->td", alpha_nodes, self.grad_l)
        self.dofs = dofs

    def values(self, coeffs):
        local = np.asarray(coeffs)[self.dofs.cell_dofs]
        return local @ self.phi.T

    def gradients(self, coeffs):
        local = np.asarray(coeffs)[self.dofs.cell_dofs]
        return np.einsum("tk,tqkd->tqd", local, self.dphi)

    def laplacian(self, coeffs):
        """Element-wise Laplacian of a V_h function (constant per triangle)."""
        if self.dofs.scheme.bulk_degree == 1:
            return np.zeros(self.dofs.bulk.n_triangles)
        local = np.asarray(coeffs)[self.dofs.cell_dofs]
        g = self.grad_l
        gg = np.einsum("tid,tjd->tij", g, g)
        # second derivatives of the P2 basis: vertex i -> 4 gi.gi, edge (i, j) -> 8 gi.gj
        lap = 4 * np.einsum("tk,tkk->t", local[:, :3], gg)
        for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
            lap += 8 * local[:, 3 + k] * gg[:, i, j]
        return lap


class SurfaceQuadrature:
    """Quadrature data on every segment of the boundary mesh."""

    def __init__(self, dofs: DofMap, points=LINE_POINTS, weights=LINE_WEIGHTS):
        gamma = dofs.gamma
        scheme = dofs.scheme
        h = gamma.sizes
        self.t = points
        self.s = gamma.segments[:, :1] + np.outer(h, points)
        self.x = gamma.point(self.s)
        self.w = h[:, None] * weights[None, :]
        self.h = h
        self.phi = line_basis(points, scheme.surface_degree)
        self.dphi = line_basis_deriv(points, scheme.surface_degree)[None] / h[:, None, None]
        te = segment_parent_coords(dofs, points)
        self.edge_t = te
        self.trace_phi = line_basis(te, scheme.bulk_degree)
        self.mult_phi = line_basis(te, multiplier_degree(scheme))
        ends = gamma.point(gamma.segments)
        kappa_nodes = _nodal(scheme.kappa, ends[..., 0], ends[..., 1])
        self.kappa = kappa_nodes[:, :1] + np.outer(kappa_nodes[:, 1] - kappa_nodes[:, 0], points)
        self.dkappa = (kappa_nodes[:, 1] - kappa_nodes[:, 0]) / h
        self.dofs = dofs

    def values(self, p):
        return np.asarray(p)[self.dofs.segment_dofs] @ self.phi.T

    def derivatives(self, p):
        local = np.asarray(p)[self.dofs.segment_dofs]
        return np.einsum("sk,sqk->sq", local, self.dphi)

    def trace(self, u):
        local = np.asarray(u)[self.dofs.trace_dofs[self.dofs.gamma.parent]]
        return np.einsum("sk,sqk->sq", local, self.trace_phi)

    def multiplier(self, lam):
        local = np.asarray(lam)[self.dofs.multiplier_dofs[self.dofs.gamma.parent]]
        return np.einsum("sk,sqk->sq", local, self.mult_phi)


# -- matrices ---------------------------------------------------------------

def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def bulk_matrices(dofs, quad=None, unit=False):
    """Mass and (alpha-weighted, unless ``unit``) stiffness matrices of V_h."""
    q = quad or BulkQuadrature(dofs)
    cd = dofs.cell_dofs
    n = dofs.n_u
    mass = np.einsum("tq,qa,qb->tab", q.w, q.phi, q.phi)
    wk = q.w if unit else q.w * q.alpha
    stiff = np.einsum("tq,tqad,tqbd->tab", wk, q.dphi, q.dphi)
    rows = np.repeat(cd[:, :, None], cd.shape[1], axis=2)
    cols = np.repeat(cd[:, None, :], cd.shape[1], axis=1)
    return _scatter(rows, cols, mass, (n, n)), _scatter(rows, cols, stiff, (n, n))


def surface_matrices(dofs, quad=None, unit=False):
    """Mass and (kappa-weighted, unless ``unit``) stiffness matrices of Q_h."""
    q = quad or SurfaceQuadrature(dofs)
    sd = dofs.segment_dofs
    n = dofs.n_p
    mass = np.einsum("sq,qa,qb->sab", q.w, q.phi, q.phi)
    wk = q.w if unit else q.w * q.kappa
    stiff = np.einsum("sq,sqa,sqb->sab", wk, q.dphi, q.dphi)
    rows = np.repeat(sd[:, :, None], sd.shape[1], axis=2)
    cols = np.repeat(sd[:, None, :], sd.shape[1], axis=1)
    return _scatter(rows, cols, mass, (n, n)), _scatter(rows, cols, stiff, (n, n))


def coupling_matrices(dofs, quad=None):
    """C_u (M_h x V_h) and C_p (M_h x Q_h), integrated segment by segment."""
    q = quad or SurfaceQuadrature(dofs)
    par = dofs.gamma.parent
    md = dofs.multiplier_dofs[par]
    td = dofs.trace_dofs[par]
    sd = dofs.segment_dofs
    cu = np.einsum("sq,sqa,sqb->sab", q.w, q.mult_phi, q.trace_phi)
    cp = np.einsum("sq,sqa,qb->sab", q.w, q.mult_phi, q.phi)
    nm = dofs.n_lambda

    def grid(r, c):
        return (np.repeat(r[:, :, None], c.shape[1], axis=2),
                np.repeat(c[:, None, :], r.shape[1], axis=1))

    C_u = _scatter(*grid(md, td), cu, (nm, dofs.n_u))
    C_p = _scatter(*grid(md, sd), cp, (nm, dofs.n_p))
    return C_u, C_p


def multiplier_mass(dofs, weighted=True):
    """L2 mass matrix of M_h on the trace mesh, optionally weighted by h_E."""
    bulk = dofs.bulk
    h = bulk.boundary_lengths
    deg = multiplier_degree(dofs.scheme)
    phi = line_basis(LINE_POINTS, deg)
    w = h[:, None] * LINE_WEIGHTS[None, :]
    if weighted:
        w = w * h[:, None]
    local = np.einsum("eq,qa,qb->eab", w, phi, phi)
    md = dofs.multiplier_dofs
    rows = np.repeat(md[:, :, None], md.shape[1], axis=2)
    cols = np.repeat(md[:, None, :], md.shape[1], axis=1)
    return _scatter(rows, cols, local, (dofs.n_lambda, dofs.n_lambda))


def load_vectors(dofs, data, bulk_quad=None, surf_quad=None):
    bq = bulk_quad or BulkQuadrature(dofs)
    sq = surf_quad or SurfaceQuadrature(dofs)
    fq = np.asarray(data.f(bq.x[..., 0], bq.x[..., 1]), dtype=float) * np.ones(bq.w.shape)
    if data.f_extra is not None:
        fq = fq + bq.values(data.f_extra)
    F = np.bincount(dofs.cell_dofs.ravel(), weights=((bq.w * fq) @ bq.phi).ravel(),
                    minlength=dofs.n_u)
    gq = np.asarray(data.g(sq.x[..., 0], sq.x[..., 1]), dtype=float) * np.ones(sq.w.shape)
    if data.g_extra is not None:
        gq = gq + sq.values(data.g_extra)
    G = np.bincount(dofs.segment_dofs.ravel(), weights=((sq.w * gq) @ sq.phi).ravel(),
                    minlength=dofs.n_p)
    return F, G


# -- the saddle point system --------------------------------------------------

@dataclass
class SaddleSystem:
    """Blocks, loads and the symmetric global matrix of the saddle point problem.

    The global matrix is ``[[A_u, 0, -C_u^T], [0, A_p, C_p^T], [-C_u, C_p, 0]]``;
    its last block row is the constraint ``C_u u - C_p p = 0`` multiplied by -1.
    """

    dofs: DofMap
    A_u: sp.csr_matrix
    A_p: sp.csr_matrix
    C_u: sp.csr_matrix
    C_p: sp.csr_matrix
    F: np.ndarray
    G: np.ndarray
    matrix: sp.csr_matrix

    @property
    def rhs(self):
        return np.concatenate([self.F, self.G, np.zeros(self.dofs.n_lambda)])

    @property
    def shape(self):
        return self.matrix.shape

    def dump(self):
        coo = self.matrix.tocoo()
        return "".join(f"{r} {c} {v:.17g}\n" for r, c, v in zip(coo.row, coo.col, coo.data))


def saddle_matrix(A_u, A_p, C_u, C_p):
    return sp.bmat([[A_u, None, -C_u.T], [None, A_p, C_p.T], [-C_u, C_p, None]], format="csr")


def assemble(dofs, data, scheme=None):
    """Assemble the stationary system for ``dofs`` with the sources in ``data``."""
    scheme = scheme or dofs.scheme
    bq = BulkQuadrature(dofs)
    sq = SurfaceQuadrature(dofs)
    M_u, K_u = bulk_matrices(dofs, bq)
    M_p, K_p = surface_matrices(dofs, sq)
    C_u, C_p = coupling_matrices(dofs, sq)
    A_u = (scheme.sigma * M_u + K_u).tocsr()
    A_p = (scheme.sigma * M_p + K_p).tocsr()
    F, G = load_vectors(dofs, data, bq, sq)
    return SaddleSystem(dofs, A_u, A_p, C_u, C_p, F, G, saddle_matrix(A_u, A_p, C_u, C_p))


def apply_saddle(system, x):
    """Global matrix-vector product."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != system.matrix.shape[1]:
        raise ValueError(f"expected a vector of length {system.matrix.shape[1]}, got {x.shape[0]}")
    return system.matrix @ x


def bilinear_form(system, x, y):
    """The (nonsymmetric) form B(x, y) of the weak problem for stacked triples."""
    nu, npp, _ = system.dofs.sizes
    u, p, lam = x[:nu], x[nu:nu + npp], x[nu + npp:]
    v, q, mu = y[:nu], y[nu:nu + npp], y[nu + npp:]
    return (v @ (system.A_u @ u) + q @ (system.A_p @ p)
            + mu @ (system.C_u @ u - system.C_p @ p)
            - lam @ (system.C_u @ v - system.C_p @ q))
