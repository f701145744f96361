"""Residual a posteriori error estimators and reference-solution error norms."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    LINE_POINTS, LINE_WEIGHTS, BulkQuadrature, SurfaceQuadrature, bulk_matrices,
    multiplier_mass, surface_matrices,
)
from .spaces import (
    _nodal, barycentric_gradients, line_basis, line_basis_deriv2, multiplier_degree,
    tri_basis_grad,
)
from .solver import prolong

#: metadata tag for the norm used for the multiplier
LAMBDA_NORM = "h-weighted-L2"


@dataclass
class EstimatorReport:
    """Squared local indicators.

    ``eta_T2`` per triangle, ``eta_E_int2`` per interior edge (ordered as
    ``mesh.interior_edge_ids``), ``eta_E_bd2`` per ordered boundary edge,
    ``eta_I2`` per boundary-mesh segment.  The ``tilde`` arrays hold the values
    after the edge indicators have been distributed to triangles and segments.
    """

    eta_T2: np.ndarray
    eta_E_int2: np.ndarray
    eta_E_bd2: np.ndarray
    eta_I2: np.ndarray
    eta_tilde_T2: np.ndarray = field(default=None, repr=False)
    eta_tilde_I2: np.ndarray = field(default=None, repr=False)

    @property
    def total2(self):
        return float(self.eta_T2.sum() + self.eta_E_int2.sum()
                     + self.eta_E_bd2.sum() + self.eta_I2.sum())

    @property
    def total(self):
        return float(np.sqrt(self.total2))

    def dump(self):
        lines = []
        for kind, values in (("T", self.eta_T2), ("Ein", self.eta_E_int2),
                             ("Ebd", self.eta_E_bd2), ("I", self.eta_I2)):
            lines += [f"{kind} {i} {v:.17g}" for i, v in enumerate(values)]
        return "\n".join(lines) + "\n"


def _edge_gradients(dofs, coeffs, edge_ids, side, t):
    """alpha * grad u_h on one side of the given edges, shape (n, nq, 2).

    ``t`` (shape (nq,) or (n, nq)) parametrizes each edge from ``edges[e, 0]``
    to ``edges[e, 1]``.
    """
    mesh = dofs.bulk
    tri = mesh.edge_tris[edge_ids, side]
    verts = mesh.triangles[tri]
    e = mesh.edges[edge_ids]
    pos0 = np.argmax(verts == e[:, :1], axis=1)
    pos1 = np.argmax(verts == e[:, 1:], axis=1)
    n = len(edge_ids)
    t = np.broadcast_to(t, (n, np.shape(t)[-1]))
    bary = np.zeros(t.shape + (3,))
    rows = np.arange(n)
    bary[rows, :, pos0] = 1 - t
    bary[rows, :, pos1] = t
    dphi = tri_basis_grad(bary, barycentric_gradients(mesh)[tri], dofs.scheme.bulk_degree)
    grad = np.einsum("nk,nqkd->nqd", np.asarray(coeffs)[dofs.cell_dofs[tri]], dphi)
    alpha = np.einsum("nk,nqk->nq", _alpha_nodes(dofs)[tri], bary)
    return alpha[..., None] * grad


def _alpha_nodes(dofs):
    verts = dofs.bulk.vertices[dofs.bulk.triangles]
    return _nodal(dofs.scheme.alpha, verts[..., 0], verts[..., 1])


def estimate(sol, data):
    """Local indicators eta_T, eta_E (interior and boundary) and eta_I, squared."""
    dofs = sol.dofs
    mesh, gamma, scheme = dofs.bulk, dofs.gamma, dofs.scheme
    sigma = scheme.sigma
    t, w = LINE_POINTS, LINE_WEIGHTS

    # element residual f - sigma u + div(alpha grad u)
    bq = BulkQuadrature(dofs)
    fq = np.asarray(data.f(bq.x[..., 0], bq.x[..., 1]), dtype=float) * np.ones(bq.w.shape)
    if data.f_extra is not None:
        fq = fq + bq.values(data.f_extra)
    div_flux = (bq.alpha * bq.laplacian(sol.u)[:, None]
                + np.einsum("td,tqd->tq", bq.grad_alpha, bq.gradients(sol.u)))
    res = fq - sigma * bq.values(sol.u) + div_flux
    eta_T2 = mesh.element_sizes ** 2 * np.sum(bq.w * res ** 2, axis=1)

    # interior flux jumps
    inner = mesh.interior_edge_ids
    n_e = mesh.edge_normals[inner]
    h_in = mesh.edge_lengths[inner]
    jump = (np.einsum("nqd,nd->nq", _edge_gradients(dofs, sol.u, inner, 0, t), n_e)
            - np.einsum("nqd,nd->nq", _edge_gradients(dofs, sol.u, inner, 1, t), n_e))
    eta_E_int2 = h_in * (h_in * (jump ** 2 @ w))

    # boundary edges: multiplier against the normal flux, on the trace mesh
    h_bd = mesh.boundary_lengths
    # the boundary list runs counterclockwise; map its parameter onto the sorted edge
    forward = mesh.boundary[:, 0] == mesh.edges[mesh.boundary_edge_ids, 0]
    te = np.where(forward[:, None], t[None, :], 1 - t[None, :])
    flux = np.einsum("nqd,nd->nq", _edge_gradients(dofs, sol.u, mesh.boundary_edge_ids, 0, te),
                     mesh.boundary_normals)
    lam_q = np.asarray(sol.lam)[dofs.multiplier_dofs] @ line_basis(t, multiplier_degree(scheme)).T
    eta_E_bd2 = h_bd * (h_bd * ((lam_q - flux) ** 2 @ w))

    # constraint mismatch u_h - p_h on the segments of each boundary edge
    sq = SurfaceQuadrature(dofs)
    mismatch = np.sum(sq.w * (sq.trace(sol.u) - sq.values(sol.p)) ** 2, axis=1) / gamma.sizes
    eta_E_bd2 = eta_E_bd2 + np.bincount(gamma.parent, weights=mismatch, minlength=mesh.n_boundary)

    # surface residual g - sigma p + (kappa p')' - lambda
    gq = np.asarray(data.g(sq.x[..., 0], sq.x[..., 1]), dtype=float) * np.ones(sq.w.shape)
    if data.g_extra is not None:
        gq = gq + sq.values(data.g_extra)
    local_p = np.asarray(sol.p)[dofs.segment_dofs]
    d2 = line_basis_deriv2(t, scheme.surface_degree) / gamma.sizes[:, None, None] ** 2
    p_ss = np.einsum("sk,sqk->sq", local_p, d2)
    lap_p = sq.kappa * p_ss + sq.dkappa[:, None] * sq.derivatives(sol.p)
    res_g = gq - sigma * sq.values(sol.p) + lap_p - sq.multiplier(sol.lam)
    eta_I2 = gamma.sizes ** 2 * np.sum(sq.w * res_g ** 2, axis=1)

    return EstimatorReport(eta_T2, eta_E_int2, eta_E_bd2, eta_I2)


def attribute(report, dofs):
    """Distribute edge indicators equally to their triangles and segments."""
    mesh, gamma = dofs.bulk, dofs.gamma
    nt = mesh.n_triangles
    tilde_T = report.eta_T2.copy()
    tilde_I = report.eta_I2.copy()
    inner_tris = mesh.edge_tris[mesh.interior_edge_ids]
    half = 0.5 * report.eta_E_int2
    tilde_T += np.bincount(inner_tris[:, 0], weights=half, minlength=nt)
    tilde_T += np.bincount(inner_tris[:, 1], weights=half, minlength=nt)
    n_seg = np.bincount(gamma.parent, minlength=mesh.n_boundary)
    share = report.eta_E_bd2 / (1 + n_seg)
    tilde_T += np.bincount(mesh.boundary_triangle, weights=share, minlength=nt)
    tilde_I += share[gamma.parent]
    return replace(report, eta_tilde_T2=tilde_T, eta_tilde_I2=tilde_I)


# -- errors ---------------------------------------------------------------------

@dataclass
class ErrorNorms:
    u: float
    p: float
    lam: float

    @property
    def total(self):
        return float(np.sqrt(self.u ** 2 + self.p ** 2 + self.lam ** 2))


def norm_matrices(dofs):
    M_u, K_u = bulk_matrices(dofs, unit=True)
    M_p, K_p = surface_matrices(dofs, unit=True)
    return M_u + K_u, M_p + K_p, multiplier_mass(dofs, weighted=True)


def triple_norm(dofs, u, p, lam, matrices=None):
    N_u, N_p, N_l = matrices or norm_matrices(dofs)
    return ErrorNorms(float(np.sqrt(max(u @ (N_u @ u), 0.0))),
                      float(np.sqrt(max(p @ (N_p @ p), 0.0))),
                      float(np.sqrt(max(lam @ (N_l @ lam), 0.0))))


def error_norms(coarse, reference):
    """Error of ``coarse`` measured against a solution on nested refined meshes."""
    fine = prolong(coarse, reference.dofs)
    return triple_norm(reference.dofs, reference.u - fine.u, reference.p - fine.p,
                       reference.lam - fine.lam)
