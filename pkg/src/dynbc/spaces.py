"""Lagrange spaces on the bulk mesh, the boundary mesh and the trace mesh."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .mesh import GammaMesh, Mesh2D, ancestor_map

Coefficient = Union[float, Callable]

MULTIPLIER_P1 = "P1"
MULTIPLIER_P0 = "P0"


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization scheme and problem coefficients.

    ``alpha`` is a constant or a callable ``alpha(x, y)``; it is interpolated as a
    piecewise linear (element-wise) function.  ``kappa`` is a constant or a callable
    ``kappa(x, y)`` evaluated on Gamma, likewise interpolated per segment.
    """

    bulk_degree: int = 1
    surface_degree: int = 1
    multiplier: str = MULTIPLIER_P1
    alpha: Coefficient = 1.0
    kappa: Coefficient = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        # P2/P2/P1 is the multiplier-swap variant used to cross-check the P2/P0 rates
        admitted = {(1, 1, MULTIPLIER_P1), (2, 2, MULTIPLIER_P0), (2, 2, MULTIPLIER_P1)}
        if (self.bulk_degree, self.surface_degree, self.multiplier) not in admitted:
            raise ValueError(
                f"unsupported scheme ({self.bulk_degree}, {self.surface_degree}, "
                f"{self.multiplier}); admitted: P1/P1/P1, P2/P2/P0, P2/P2/P1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for name in ("alpha", "kappa"):
            value = getattr(self, name)
            if not callable(value) and not value > 0:
                raise ValueError(f"{name} must be uniformly positive")

    @classmethod
    def p1(cls, **kw):
        return cls(1, 1, MULTIPLIER_P1, **kw)

    @classmethod
    def p2p0(cls, **kw):
        return cls(2, 2, MULTIPLIER_P0, **kw)

    def replace(self, **kw):
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(kw)
        return SchemeConfig(**values)


def _nodal(coef, x, y):
    if callable(coef):
        return np.asarray(coef(x, y), dtype=float) * np.ones_like(x)
    return np.full(np.shape(x), float(coef))


# -- reference bases ------------------------------------------------------

def tri_basis(bary, degree):
    """Basis values at points with barycentric coordinates ``bary[..., 3]``.

    P2 ordering: three vertex functions, then the edge functions opposite
    vertex 0, 1, 2.
    """
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=-1)


def tri_basis_grad(bary, grad_l, degree):
    """Physical gradients of the basis, shape (..., nloc, 2).

    ``bary`` has shape (nt, nq, 3) and ``grad_l`` (nt, 3, 2).
    """
    g = grad_l[:, None, :, :]
    if degree == 1:
        return np.broadcast_to(g, bary.shape[:2] + (3, 2))
    lam = bary[..., :, None]
    out = np.empty(bary.shape[:2] + (6, 2))
    out[..., 0:3, :] = (4 * lam - 1) * g
    for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        out[..., 3 + k, :] = 4 * (lam[..., j, :] * g[..., i, :] + lam[..., i, :] * g[..., j, :])
    return out


def line_basis(t, degree):
    """1D Lagrange basis on [0, 1]: left, right (, midpoint)."""
    t = np.asarray(t, dtype=float)
    if degree == 0:
        return np.ones(t.shape + (1,))
    if degree == 1:
        return np.stack([1 - t, t], axis=-1)
    return np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=-1)


def line_basis_deriv(t, degree):
    """d/dt of :func:`line_basis`."""
    t = np.asarray(t, dtype=float)
    if degree == 0:
        return np.zeros(t.shape + (1,))
    if degree == 1:
        return np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    return np.stack([4 * t - 3, 4 * t - 1, 4 - 8 * t], axis=-1)


def line_basis_deriv2(t, degree):
    t = np.asarray(t, dtype=float)
    if degree <= 1:
        return np.zeros(t.shape + (degree + 1,))
    return np.stack([4 * np.ones_like(t), 4 * np.ones_like(t), -8 * np.ones_like(t)], axis=-1)


def barycentric_gradients(mesh):
    """Gradients of the barycentric coordinates per triangle, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    return np.stack([-g1 - g2, g1, g2], axis=1)


# -- dof maps -------------------------------------------------------------

@dataclass
class DofMap:
    """Dof tables of V_h (bulk), Q_h (boundary mesh) and M_h (trace mesh)."""

    bulk: Mesh2D
    gamma: GammaMesh
    scheme: SchemeConfig
    cell_dofs: np.ndarray = field(repr=False)
    trace_dofs: np.ndarray = field(repr=False)
    segment_dofs: np.ndarray = field(repr=False)
    multiplier_dofs: np.ndarray = field(repr=False)
    n_u: int = 0
    n_p: int = 0
    n_lambda: int = 0

    @property
    def n_total(self):
        return self.n_u + self.n_p + self.n_lambda

    @property
    def sizes(self):
        return self.n_u, self.n_p, self.n_lambda

    def split(self, x):
        x = np.asarray(x)
        return x[:self.n_u], x[self.n_u:self.n_u + self.n_p], x[self.n_u + self.n_p:]

    # coordinates of the dofs, used for interpolation and prolongation
    @property
    def u_points(self):
        mesh = self.bulk
        if self.scheme.bulk_degree == 1:
            return mesh.vertices
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        return np.vstack([mesh.vertices, mids])

    @property
    def p_points(self):
        """Arc-length coordinates of the Q_h dofs."""
        seg = self.gamma.segments
        if self.scheme.surface_degree == 1:
            return seg[:, 0].copy()
        return np.concatenate([seg[:, 0], 0.5 * (seg[:, 0] + seg[:, 1])])


def build_spaces(bulk, gamma, scheme):
    """Dof maps for the three fields on matching bulk and boundary meshes."""
    if not isinstance(scheme, SchemeConfig):
        raise TypeError("scheme must be a SchemeConfig")
    if len(gamma.parent) and gamma.parent.max() >= bulk.n_boundary:
        raise ValueError("boundary mesh does not match the bulk mesh")
    nv, nb, ns = bulk.n_vertices, bulk.n_boundary, gamma.n_segments
    b = bulk.boundary
    if scheme.bulk_degree == 1:
        cell = bulk.triangles.copy()
        trace = b.copy()
        n_u = nv
    else:
        cell = np.hstack([bulk.triangles, nv + bulk.tri_edges])
        trace = np.column_stack([b, nv + bulk.boundary_edge_ids])
        n_u = nv + len(bulk.edges)
    k = np.arange(ns)
    if scheme.surface_degree == 1:
        seg = np.column_stack([k, (k + 1) % ns])
        n_p = ns
    else:
        seg = np.column_stack([k, (k + 1) % ns, ns + k])
        n_p = 2 * ns
    j = np.arange(nb)
    if scheme.multiplier == MULTIPLIER_P1:
        mult = np.column_stack([j, (j + 1) % nb])
    else:
        mult = j[:, None]
    return DofMap(bulk, gamma, scheme, cell, trace, seg, mult, n_u, n_p, nb)


def multiplier_degree(scheme):
    return 1 if scheme.multiplier == MULTIPLIER_P1 else 0


def segment_parent_coords(dofs, t):
    """Local coordinates on the parent bulk edge of points ``t`` in [0,1] on each segment.

    Returns an array of shape (ns, len(t)).
    """
    gamma, bulk = dofs.gamma, dofs.bulk
    seg = gamma.segments
    s = seg[:, :1] + np.outer(seg[:, 1] - seg[:, 0], t)
    br = bulk.boundary_breaks
    e0 = br[gamma.parent][:, None]
    he = (br[gamma.parent + 1] - br[gamma.parent])[:, None]
    return (s - e0) / he


# -- evaluation -----------------------------------------------------------

def _bary_pairs(p, points):
    """Barycentric coordinates of ``points[i]`` in triangle ``p[i]``."""
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    px, py = points[:, 0] - a[:, 0], points[:, 1] - a[:, 1]
    l1 = ((c[:, 1] - a[:, 1]) * px - (c[:, 0] - a[:, 0]) * py) / det
    l2 = (-(b[:, 1] - a[:, 1]) * px + (b[:, 0] - a[:, 0]) * py) / det
    return np.column_stack([1 - l1 - l2, l1, l2])


def evaluate_bulk(dofs, coeffs, points, grad=False):
    """Value (and gradient) of a V_h function at Cartesian points."""
    mesh = dofs.bulk
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.locate(points)
    if np.any(tri < 0):
        raise ValueError("point outside the domain")
    bary = _bary_pairs(mesh.vertices[mesh.triangles[tri]], points)
    deg = dofs.scheme.bulk_degree
    coeffs = np.asarray(coeffs)
    local = coeffs[dofs.cell_dofs[tri]]
    phi = tri_basis(bary, deg)
    val = np.einsum("pk,pk->p", phi, local)
    if not grad:
        return val
    gl = barycentric_gradients(mesh)[tri]
    dphi = tri_basis_grad(bary[:, None, :], gl, deg)[:, 0]
    return val, np.einsum("pk,pkd->pd", local, dphi)


def evaluate_surface(dofs, coeffs, s, deriv=False):
    """Value (and arc-length derivative) of a Q_h function at arc-length positions."""
    gamma = dofs.gamma
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < -1e-12) or np.any(s > gamma.length + 1e-12):
        raise ValueError("arc-length coordinate outside Gamma")
    i = gamma.locate(s)
    h = gamma.sizes[i]
    t = (s - gamma.segments[i, 0]) / h
    deg = dofs.scheme.surface_degree
    local = np.asarray(coeffs)[dofs.segment_dofs[i]]
    val = np.einsum("pk,pk->p", line_basis(t, deg), local)
    if not deriv:
        return val
    return val, np.einsum("pk,pk->p", line_basis_deriv(t, deg), local) / h


def evaluate_multiplier(dofs, coeffs, s):
    """Value of an M_h function at arc-length positions."""
    bulk = dofs.bulk
    s = np.atleast_1d(np.asarray(s, dtype=float))
    br = bulk.boundary_breaks
    k = np.clip(np.searchsorted(br, s, side="right") - 1, 0, bulk.n_boundary - 1)
    t = (s - br[k]) / (br[k + 1] - br[k])
    deg = multiplier_degree(dofs.scheme)
    local = np.asarray(coeffs)[dofs.multiplier_dofs[k]]
    return np.einsum("pk,pk->p", line_basis(t, deg), local)


def evaluate(dofs, coeffs, space, where, derivative=False):
    """Evaluate a finite element function of ``space`` in {"u", "p", "lambda"}."""
    if space == "u":
        return evaluate_bulk(dofs, coeffs, where, grad=derivative)
    if space == "p":
        return evaluate_surface(dofs, coeffs, where, deriv=derivative)
    if space == "lambda":
        if derivative:
            raise ValueError("the multiplier space has no tangential derivative")
        return evaluate_multiplier(dofs, coeffs, where)
    raise ValueError(f"unknown space {space!r}")


def trace_values(dofs, u):
    """Restriction of a V_h function to every segment of the boundary mesh.

    Returns Lagrange coefficients of shape (ns, degree+1) in the segment's own
    arc-length coordinate (ordering left, right, midpoint).
    """
    deg = dofs.scheme.bulk_degree
    nodes = np.array([0.0, 1.0]) if deg == 1 else np.array([0.0, 1.0, 0.5])
    te = segment_parent_coords(dofs, nodes)
    local = np.asarray(u)[dofs.trace_dofs[dofs.gamma.parent]]
    return np.einsum("snk,sk->sn", line_basis(te, deg), local)


# -- interpolation and prolongation ------------------------------------------

def interpolate_bulk(dofs, func):
    x = dofs.u_points
    return np.asarray(func(x[:, 0], x[:, 1]), dtype=float) * np.ones(len(x))


def interpolate_surface(dofs, func):
    """Nodal interpolant in Q_h of ``func(x, y)`` evaluated on Gamma."""
    xy = dofs.gamma.point(dofs.p_points)
    return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))


def interpolate_multiplier(dofs, func):
    bulk = dofs.bulk
    if dofs.scheme.multiplier == MULTIPLIER_P1:
        xy = bulk.vertices[bulk.boundary[:, 0]]
    else:
        xy = 0.5 * (bulk.vertices[bulk.boundary[:, 0]] + bulk.vertices[bulk.boundary[:, 1]])
    return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(len(xy))


def prolong_bulk(coarse, fine, u):
    """Exact embedding of a coarse V_h function into a nested fine V_h."""
    anc = ancestor_map(fine.bulk, coarse.bulk)
    deg_c = coarse.scheme.bulk_degree
    pts = fine.u_points
    # one owning fine triangle per fine dof
    owner = np.empty(fine.n_u, dtype=np.int64)
    local = fine.cell_dofs
    owner[local.ravel()] = np.repeat(np.arange(len(local)), local.shape[1])
    ctri = anc[owner]
    bary = _bary_pairs(coarse.bulk.vertices[coarse.bulk.triangles[ctri]], pts)
    phi = tri_basis(bary, deg_c)
    return np.einsum("pk,pk->p", phi, np.asarray(u)[coarse.cell_dofs[ctri]])


def prolong_surface(coarse, fine, p):
    """Exact embedding of a coarse Q_h function into a nested fine Q_h."""
    s = fine.p_points
    c_seg = coarse.gamma.segments
    tol = 1e-11 * coarse.gamma.length
    f_seg = fine.gamma.segments
    if not np.all(np.isin(np.round(c_seg[:, 0] / tol), np.round(f_seg[:, 0] / tol))):
        raise ValueError("boundary meshes are not nested")
    return evaluate_surface(coarse, p, s)


def prolong_multiplier(coarse, fine, lam):
    """Exact embedding of a coarse M_h function into a nested fine M_h."""
    bulk = fine.bulk
    br = bulk.boundary_breaks
    if fine.scheme.multiplier == MULTIPLIER_P1:
        s = br[:-1]
    else:
        s = 0.5 * (br[:-1] + br[1:])
    ancestor_map(fine.bulk, coarse.bulk)
    return evaluate_multiplier(coarse, lam, s)
