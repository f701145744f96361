"""Bulk triangulations, boundary meshes and their refinement.

The bulk mesh stores every triangle as ``(a, b, c)`` in counterclockwise order
with ``a`` the newest vertex, so the refinement edge is always ``(b, c)``.
The boundary ``Gamma`` is parametrized by arc length, starting at the first
corner of the domain polygon and running counterclockwise.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

#: relative tolerance for matching arc-length coordinates
ARC_TOL = 1e-11


class Mesh2D:
    """Conforming triangulation with newest-vertex-bisection state.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counterclockwise, newest vertex first
    boundary : (nb, 2) int array of boundary edges ordered counterclockwise,
        starting at ``corners[0]``
    corners : int array of the vertex indices of the polygon corners in
        counterclockwise order
    generation : (nt,) bisection depth of each triangle
    """

    def __init__(self, vertices, triangles, boundary, corners, generation=None,
                 parent=None, parent_mesh=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary = np.ascontiguousarray(boundary, dtype=np.int64)
        self.corners = np.asarray(corners, dtype=np.int64)
        if generation is None:
            generation = np.zeros(len(self.triangles), dtype=np.int64)
        self.generation = np.asarray(generation, dtype=np.int64)
        # child -> parent triangle maps back to the root, used for exact prolongation
        prev = None if parent_mesh is None else parent_mesh.lineage
        self.lineage = _Lineage(None if parent is None else np.asarray(parent, dtype=np.int64), prev)
        for arr in (self.vertices, self.triangles, self.boundary, self.generation):
            arr.setflags(write=False)

    # -- sizes ---------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_boundary(self):
        return len(self.boundary)

    @property
    def parent(self):
        return self.lineage.parent

    def forget_ancestry(self):
        """Drop the refinement history; this mesh becomes a root."""
        self.lineage.parent = None
        self.lineage.prev = None

    def __repr__(self):
        return (f"Mesh2D(nv={self.n_vertices}, nt={self.n_triangles}, "
                f"nb={self.n_boundary})")

    # -- topology --------------------------------------------------------
    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge k is opposite local vertex k
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(-1, 3)
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        owner = np.repeat(np.arange(len(t)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris[sorted_edges[first], 0] = owner[order[first]]
        edge_tris[sorted_edges[~first], 1] = owner[order[~first]]
        return edges, tri_edges, edge_tris

    @property
    def edges(self):
        """Unique edges as sorted vertex pairs, shape (ne, 2)."""
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """Edge index of the edge opposite each local vertex, shape (nt, 3)."""
        return self._edge_data[1]

    @property
    def edge_tris(self):
        """The (one or two) triangles of each edge; -1 marks a boundary edge."""
        return self._edge_data[2]

    @cached_property
    def boundary_edge_ids(self):
        """Global edge index of each (ordered) boundary edge."""
        edges = self.edges
        b = np.sort(self.boundary, axis=1)
        keys = edges[:, 0] * self.n_vertices + edges[:, 1]
        order = np.argsort(keys)
        pos = np.searchsorted(keys[order], b[:, 0] * self.n_vertices + b[:, 1])
        return order[pos]

    @cached_property
    def interior_edge_ids(self):
        return np.flatnonzero(self.edge_tris[:, 1] >= 0)

    @cached_property
    def boundary_triangle(self):
        """The triangle containing each ordered boundary edge."""
        return self.edge_tris[self.boundary_edge_ids, 0]

    # -- geometry --------------------------------------------------------
    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @cached_property
    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def element_sizes(self):
        """Diameter h_T of every triangle (its longest edge)."""
        return self.edge_lengths[self.tri_edges].max(axis=1)

    @cached_property
    def boundary_lengths(self):
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def boundary_normals(self):
        """Outward unit normals of the ordered boundary edges."""
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        d = d / self.boundary_lengths[:, None]
        return np.column_stack([d[:, 1], -d[:, 0]])

    @cached_property
    def edge_normals(self):
        """Unit normal of every edge, rotated from the direction edges[:,0] -> edges[:,1]."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        d = d / self.edge_lengths[:, None]
        return np.column_stack([d[:, 1], -d[:, 0]])

    def min_angle(self):
        """Smallest interior angle over all triangles, in radians."""
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(angles))

    # -- arc length on Gamma ---------------------------------------------
    @cached_property
    def polygon(self):
        return self.vertices[self.corners]

    @cached_property
    def corner_arclength(self):
        side = np.roll(self.polygon, -1, axis=0) - self.polygon
        return np.concatenate([[0.0], np.cumsum(np.hypot(side[:, 0], side[:, 1]))])

    @property
    def perimeter(self):
        return float(self.corner_arclength[-1])

    @cached_property
    def boundary_arclength(self):
        """Arc-length coordinates of the ordered boundary vertices (start points).

        Computed from the polygon side and the distance to the side's first corner,
        so a vertex keeps bit-identical coordinates across refinements.
        """
        is_corner = np.zeros(self.n_vertices, dtype=bool)
        is_corner[self.corners] = True
        start = self.boundary[:, 0]
        if start[0] != self.corners[0]:
            raise ValueError("boundary list must start at the first corner")
        side = np.cumsum(is_corner[start]) - 1
        offset = self.vertices[start] - self.polygon[side]
        return self.corner_arclength[side] + np.hypot(offset[:, 0], offset[:, 1])

    @cached_property
    def boundary_breaks(self):
        """Arc-length partition of Gamma induced by the boundary edges, length nb+1."""
        return np.append(self.boundary_arclength, self.perimeter)

    # -- patches ---------------------------------------------------------
    def element_size(self, t):
        return float(self.element_sizes[t])

    def edge_size(self, e):
        return float(self.edge_lengths[e])

    def outward_normal(self, k):
        """Outward normal of the ordered boundary edge ``k``."""
        return self.boundary_normals[k].copy()

    def element_patch(self, t):
        """Triangles sharing at least one vertex with triangle ``t``."""
        mask = np.isin(self.triangles, self.triangles[t]).any(axis=1)
        return np.flatnonzero(mask)

    def edge_patch(self, e):
        tris = self.edge_tris[e]
        return tris[tris >= 0]

    def boundary_edge_patch(self, k):
        """Ordered boundary edges whose closure meets the closure of edge ``k``."""
        nb = self.n_boundary
        return np.unique([(k - 1) % nb, k, (k + 1) % nb])

    def locate(self, points):
        """Index of a triangle containing each point; -1 if outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = -np.ones(len(points), dtype=np.int64)
        p = self.vertices[self.triangles]
        for start in range(0, len(points), 256):
            chunk = points[start:start + 256]
            bary = barycentric(p, chunk)
            inside = bary.min(axis=2) >= -1e-12
            hit = inside.any(axis=1)
            out[start:start + 256][hit] = np.argmax(inside[hit], axis=1)
        return out

    # -- I/O -------------------------------------------------------------
    def dump(self):
        lines = [f"{self.n_vertices} {self.n_triangles} {self.n_boundary}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        # refinement edge index 0: the edge opposite local vertex 0
        lines += [f"{a} {b} {c} 0 {g}" for (a, b, c), g in zip(self.triangles, self.generation)]
        lines += [f"{a} {b}" for a, b in self.boundary]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text):
        tokens = text.split("\n")
        nv, nt, nb = (int(v) for v in tokens[0].split())
        verts = np.array([[float(v) for v in line.split()] for line in tokens[1:1 + nv]])
        tri_rows = np.array([[int(v) for v in line.split()]
                             for line in tokens[1 + nv:1 + nv + nt]], dtype=np.int64)
        bnd = np.array([[int(v) for v in line.split()]
                        for line in tokens[1 + nv + nt:1 + nv + nt + nb]], dtype=np.int64)
        tris = np.array([np.roll(row[:3], -row[3]) for row in tri_rows])
        corners = _polygon_corners(verts, bnd)
        return cls(verts, tris, bnd, corners, generation=tri_rows[:, 4])


def barycentric(tri_points, points):
    """Barycentric coordinates, shape (npoints, ntri, 3)."""
    a, b, c = tri_points[:, 0], tri_points[:, 1], tri_points[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    px = points[:, None, 0] - a[None, :, 0]
    py = points[:, None, 1] - a[None, :, 1]
    l1 = ((c[:, 1] - a[:, 1]) * px - (c[:, 0] - a[:, 0]) * py) / det
    l2 = (-(b[:, 1] - a[:, 1]) * px + (b[:, 0] - a[:, 0]) * py) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=2)


def _polygon_corners(vertices, boundary):
    d_in = vertices[boundary[:, 1]] - vertices[boundary[:, 0]]
    d_prev = np.roll(d_in, 1, axis=0)
    cross = d_prev[:, 0] * d_in[:, 1] - d_prev[:, 1] * d_in[:, 0]
    scale = np.linalg.norm(d_prev, axis=1) * np.linalg.norm(d_in, axis=1)
    return boundary[np.abs(cross) > 1e-12 * scale, 0]


def _from_cells(vertices, cells, corners_xy):
    """Criss-cross triangulation: every cell is split into four by its diagonals."""
    verts = [tuple(v) for v in vertices]
    index = {v: i for i, v in enumerate(verts)}
    tris = []
    for x0, y0, h in cells:
        quad = [(x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)]
        centre = (x0 + h / 2, y0 + h / 2)
        index.setdefault(centre, len(verts))
        if len(verts) == index[centre]:
            verts.append(centre)
        for k in range(4):
            # centre is opposite the cell side, which is the longest edge
            tris.append((index[centre], index[quad[k]], index[quad[(k + 1) % 4]]))
    verts = np.array(verts, dtype=float)
    tris = np.array(tris, dtype=np.int64)
    # boundary: cell sides that belong to exactly one triangle
    sides = {(int(b), int(c)) for _, b, c in tris}
    nxt = dict((b, c) for b, c in sides if (c, b) not in sides)
    start = index[corners_xy[0]]
    ordered = []
    v = start
    for _ in range(len(nxt)):
        ordered.append((v, nxt[v]))
        v = nxt[v]
    if v != start:
        raise RuntimeError("boundary is not a single closed polygon")
    corners = [index[c] for c in corners_xy]
    return Mesh2D(verts, tris, np.array(ordered), corners)


def create_unit_square(n):
    """Criss-cross mesh of (0,1)^2 with n x n cells (4 n^2 triangles)."""
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    h = 1.0 / n
    grid = [(i * h, j * h) for j in range(n + 1) for i in range(n + 1)]
    cells = [(i * h, j * h, h) for j in range(n) for i in range(n)]
    return _from_cells(grid, cells, [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def create_lshape(n):
    """Criss-cross mesh of (0,1)^2 minus [1/2,1) x (0,1/2] with cells of size 1/(2n)."""
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    m = 2 * n
    h = 1.0 / m

    def inside(i, j):
        return not (i >= n and j < n)

    cells = [(i * h, j * h, h) for j in range(m) for i in range(m) if inside(i, j)]
    grid = sorted({(x0 + dx, y0 + dy) for x0, y0, _ in cells for dx in (0, h) for dy in (0, h)},
                  key=lambda p: (p[1], p[0]))
    corners = [(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0)]
    return _from_cells(grid, cells, corners)


# -- newest vertex bisection ---------------------------------------------

def bisect(mesh, marked=(), marked_boundary=()):
    """Newest vertex bisection of the marked triangles with conforming closure.

    ``marked_boundary`` lists ordered boundary edges that must be split as well.
    """
    marked = np.asarray(list(marked), dtype=np.int64)
    nt = mesh.n_triangles
    if marked.size and (marked.min() < 0 or marked.max() >= nt):
        raise IndexError("marked triangle index out of range")
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[mesh.tri_edges[marked, 0]] = True
    edge_marked[mesh.boundary_edge_ids[np.asarray(list(marked_boundary), dtype=np.int64)]] = True
    return _refine_edges(mesh, edge_marked)


def uniform_refine(mesh):
    """Split every triangle into four (two bisection generations)."""
    return _refine_edges(mesh, np.ones(len(mesh.edges), dtype=bool))


def _refine_edges(mesh, edge_marked):
    tri_edges = mesh.tri_edges
    # closure: a triangle with any marked edge must split its refinement edge
    while True:
        touched = edge_marked[tri_edges].any(axis=1)
        ref = tri_edges[touched, 0]
        if edge_marked[ref].all():
            break
        edge_marked[ref] = True
    if not edge_marked.any():
        return mesh

    nv = mesh.n_vertices
    new_ids = -np.ones(len(mesh.edges), dtype=np.int64)
    which = np.flatnonzero(edge_marked)
    new_ids[which] = nv + np.arange(len(which))
    mids = 0.5 * (mesh.vertices[mesh.edges[which, 0]] + mesh.vertices[mesh.edges[which, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    t = mesh.triangles
    gen = mesh.generation
    m_bc = new_ids[tri_edges[:, 0]]
    m_ca = new_ids[tri_edges[:, 1]]
    m_ab = new_ids[tri_edges[:, 2]]
    keep = m_bc < 0
    split = ~keep
    a, b, c = t[:, 0], t[:, 1], t[:, 2]

    new_tris = [t[keep]]
    new_gen = [gen[keep]]
    parents = [np.flatnonzero(keep)]

    # left child (m, a, b): split again if edge (a, b) is marked
    left_once = split & (m_ab < 0)
    left_twice = split & (m_ab >= 0)
    right_once = split & (m_ca < 0)
    right_twice = split & (m_ca >= 0)

    def emit(mask, cols, depth):
        idx = np.flatnonzero(mask)
        new_tris.append(np.column_stack(cols)[mask] if idx.size else np.empty((0, 3), dtype=np.int64))
        new_gen.append(gen[idx] + depth)
        parents.append(idx)

    emit(left_once, (m_bc, a, b), 1)
    emit(left_twice, (m_ab, m_bc, a), 2)
    emit(left_twice, (m_ab, b, m_bc), 2)
    emit(right_once, (m_bc, c, a), 1)
    emit(right_twice, (m_ca, m_bc, c), 2)
    emit(right_twice, (m_ca, a, m_bc), 2)

    tris = np.vstack(new_tris)
    generation = np.concatenate(new_gen)
    parent = np.concatenate(parents)

    # boundary edges: replace (v0, v1) by (v0, m), (m, v1) in place
    bmid = new_ids[mesh.boundary_edge_ids]
    counts = np.where(bmid >= 0, 2, 1)
    start = np.repeat(mesh.boundary[:, 0], counts)
    end = np.repeat(mesh.boundary[:, 1], counts)
    pos = np.cumsum(counts) - counts
    sp = pos[bmid >= 0]
    end[sp] = bmid[bmid >= 0]
    start[sp + 1] = bmid[bmid >= 0]
    boundary = np.column_stack([start, end])

    return Mesh2D(vertices, tris, boundary, mesh.corners, generation=generation,
                  parent=parent, parent_mesh=mesh)


class _Lineage:
    __slots__ = ("parent", "prev")

    def __init__(self, parent, prev):
        self.parent = parent
        self.prev = prev


def ancestor_map(fine, coarse):
    """For every triangle of ``fine``, the index of its ancestor in ``coarse``.

    Raises ``ValueError`` if ``coarse`` is not an ancestor of ``fine``.
    """
    mapping = np.arange(fine.n_triangles)
    node = fine.lineage
    while node is not coarse.lineage:
        if node.prev is None:
            raise ValueError("meshes are not nested")
        mapping = node.parent[mapping]
        node = node.prev
    return mapping


def check_conformity(mesh):
    """Raise AssertionError if the mesh violates a structural invariant."""
    if np.any(mesh.signed_areas <= 0):
        raise AssertionError("non-positive triangle area")
    n_bnd = np.count_nonzero(mesh.edge_tris[:, 1] < 0)
    if n_bnd != mesh.n_boundary:
        raise AssertionError("hanging node or inconsistent boundary list")
    b = mesh.boundary
    if not np.array_equal(b[:, 1], np.roll(b[:, 0], -1)):
        raise AssertionError("boundary edges do not form a closed chain")
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles] = True
    if not used.all():
        raise AssertionError("unused vertex")
    return True


# -- boundary mesh ---------------------------------------------------------

class GammaMesh:
    """Partition of Gamma into arc-length segments refining the bulk trace mesh.

    ``segments[i] = (s0, s1)`` and ``parent[i]`` is the ordered bulk boundary edge
    containing segment ``i``.
    """

    def __init__(self, segments, parent, polygon, rho=8.0):
        self.segments = np.ascontiguousarray(segments, dtype=float)
        self.parent = np.ascontiguousarray(parent, dtype=np.int64)
        self.polygon = np.asarray(polygon, dtype=float)
        self.rho = float(rho)
        side = np.roll(self.polygon, -1, axis=0) - self.polygon
        self.corner_arclength = np.concatenate([[0.0], np.cumsum(np.hypot(side[:, 0], side[:, 1]))])
        self.segments.setflags(write=False)
        self.parent.setflags(write=False)

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def length(self):
        return float(self.corner_arclength[-1])

    arc_length_total = length

    @property
    def sizes(self):
        return self.segments[:, 1] - self.segments[:, 0]

    def segment_size(self, i):
        return float(self.segments[i, 1] - self.segments[i, 0])

    def __repr__(self):
        return f"GammaMesh(ns={self.n_segments})"

    def point(self, s):
        """Cartesian coordinates of arc-length positions ``s``."""
        s = np.asarray(s, dtype=float)
        nc = len(self.polygon)
        side = np.clip(np.searchsorted(self.corner_arclength, s, side="right") - 1, 0, nc - 1)
        a = self.polygon[side]
        b = self.polygon[(side + 1) % nc]
        frac = (s - self.corner_arclength[side]) / (self.corner_arclength[side + 1] - self.corner_arclength[side])
        return a + frac[..., None] * (b - a)

    def locate(self, s):
        """Segment index containing each arc-length coordinate."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.segments[:, 0], s, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def dump(self):
        lines = [f"{self.n_segments}"]
        lines += [f"{s0:.17g} {s1:.17g} {p}" for (s0, s1), p in zip(self.segments, self.parent)]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text, bulk, rho=8.0):
        rows = text.split("\n")
        ns = int(rows[0])
        data = np.array([[float(v) for v in line.split()] for line in rows[1:1 + ns]])
        return cls(data[:, :2], data[:, 2].astype(np.int64), bulk.polygon, rho=rho)


def trace_gamma(bulk, rho=8.0):
    """The boundary mesh induced by the bulk triangulation."""
    br = bulk.boundary_breaks
    return GammaMesh(np.column_stack([br[:-1], br[1:]]), np.arange(bulk.n_boundary),
                     bulk.polygon, rho=rho)


def _parent_of(segments, breaks, tol):
    mid = 0.5 * (segments[:, 0] + segments[:, 1])
    parent = np.searchsorted(breaks, mid, side="right") - 1
    inside = (segments[:, 0] >= breaks[parent] - tol) & (segments[:, 1] <= breaks[parent + 1] + tol)
    return parent, inside


def sync_gamma_to_bulk(gamma, bulk):
    """Split segments at new bulk boundary vertices and re-link their parent edges."""
    breaks = bulk.boundary_breaks
    tol = ARC_TOL * gamma.length
    if abs(breaks[-1] - gamma.length) > tol:
        raise ValueError("boundary mesh and bulk mesh describe different polygons")
    ends = np.concatenate([gamma.segments[:, 0], [gamma.length]])
    # bulk vertices not already segment endpoints
    pos = np.searchsorted(ends, breaks)
    lo = np.abs(breaks - ends[np.clip(pos - 1, 0, len(ends) - 1)])
    hi = np.abs(ends[np.clip(pos, 0, len(ends) - 1)] - breaks)
    new = breaks[np.minimum(lo, hi) > tol]
    if new.size:
        ends = np.sort(np.concatenate([ends, new]))
    segments = np.column_stack([ends[:-1], ends[1:]])
    parent, inside = _parent_of(segments, breaks, tol)
    if not inside.all():
        raise ValueError("segment endpoints cannot be reconciled with bulk boundary vertices")
    if new.size == 0 and np.array_equal(parent, gamma.parent):
        return gamma
    return GammaMesh(segments, parent, gamma.polygon, rho=gamma.rho)


def ratio_blocked(gamma, marked, bulk):
    """Marked segments whose halves would violate h_E <= rho h_I on ``bulk``."""
    marked = np.asarray(list(marked), dtype=np.int64)
    if marked.size == 0:
        return marked
    h_e = bulk.boundary_lengths[gamma.parent[marked]]
    h_half = 0.5 * gamma.sizes[marked]
    return marked[h_e > gamma.rho * h_half * (1 + 1e-12)]


def refine_gamma(gamma, marked, bulk):
    """Bisect the marked segments at their arc-length midpoints.

    The bulk mesh must already be fine enough for the halves to respect the
    ratio bound; see :func:`ratio_blocked`.
    """
    gamma = sync_gamma_to_bulk(gamma, bulk)
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        return gamma
    if ratio_blocked(gamma, marked, bulk).size:
        raise ValueError("bisection would violate the boundary mesh ratio bound; "
                         "refine the bulk boundary edge first")
    seg = gamma.segments
    split = np.zeros(gamma.n_segments, dtype=bool)
    split[marked] = True
    counts = np.where(split, 2, 1)
    s0 = np.repeat(seg[:, 0], counts)
    s1 = np.repeat(seg[:, 1], counts)
    parent = np.repeat(gamma.parent, counts)
    pos = (np.cumsum(counts) - counts)[split]
    mid = 0.5 * (seg[split, 0] + seg[split, 1])
    s1[pos] = mid
    s0[pos + 1] = mid
    return GammaMesh(np.column_stack([s0, s1]), parent, gamma.polygon, rho=gamma.rho)


def uniform_refine_gamma(gamma, bulk):
    """Bisect every segment, then synchronize with the (refined) bulk mesh."""
    seg = gamma.segments
    mid = 0.5 * (seg[:, 0] + seg[:, 1])
    ends = np.empty(2 * gamma.n_segments + 1)
    ends[0:-1:2] = seg[:, 0]
    ends[1::2] = mid
    ends[-1] = gamma.length
    halved = GammaMesh(np.column_stack([ends[:-1], ends[1:]]), np.repeat(gamma.parent, 2),
                       gamma.polygon, rho=gamma.rho)
    return sync_gamma_to_bulk(halved, bulk)


def map_segments(old, new, indices):
    """Indices in ``new`` of segments identical (same endpoints) to ``old[indices]``."""
    indices = np.asarray(list(indices), dtype=np.int64)
    if indices.size == 0:
        return indices
    tol = ARC_TOL * old.length
    cand = new.locate(old.segments[indices, 0] + tol)
    same = (np.abs(new.segments[cand, 0] - old.segments[indices, 0]) <= tol) & \
           (np.abs(new.segments[cand, 1] - old.segments[indices, 1]) <= tol)
    return cand[same]


def check_gamma(gamma, bulk):
    """Raise AssertionError if covering, refinement relation or ratio bound fail."""
    seg = gamma.segments
    tol = ARC_TOL * gamma.length
    if abs(seg[0, 0]) > tol or abs(seg[-1, 1] - gamma.length) > tol:
        raise AssertionError("segments do not cover Gamma")
    if np.any(np.abs(seg[1:, 0] - seg[:-1, 1]) > tol) or np.any(seg[:, 1] <= seg[:, 0]):
        raise AssertionError("segments overlap or leave gaps")
    if abs(gamma.sizes.sum() - gamma.length) > tol:
        raise AssertionError("segment lengths do not sum to the perimeter")
    breaks = bulk.boundary_breaks
    parent, inside = _parent_of(seg, breaks, tol)
    if not inside.all() or not np.array_equal(parent, gamma.parent):
        raise AssertionError("refinement relation violated")
    h_e = bulk.boundary_lengths[gamma.parent]
    if np.any(h_e > gamma.rho * gamma.sizes * (1 + 1e-12)):
        raise AssertionError("ratio bound h_E <= rho h_I violated")
    corners = gamma.corner_arclength[1:-1]
    j = gamma.locate(corners)
    if np.any((seg[j, 0] < corners - tol) & (seg[j, 1] > corners + tol)):
        raise AssertionError("segment crosses a corner")
    return True
