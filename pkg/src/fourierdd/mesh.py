"""Structured triangular meshes of axis-aligned rectangles.

Every mesh is a uniform grid of rectangular cells, each split into two
triangles along the lower-left to upper-right diagonal.  Boundary edges
carry string tags ("left", "right", "bottom", "top", or interface tags
such as "interface:1") that downstream modules use to locate Dirichlet
boundaries and coupling interfaces.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

__all__ = [
    "Mesh",
    "MeshFamilySpec",
    "InterfaceEdge",
    "InterfacePartition",
    "structured_rect_mesh",
    "retag_boundary",
    "poisson_mesh_pair",
    "ns_mesh_family",
    "NS_SUBDOMAIN_RECTS",
    "NS_SUBDOMAIN_SIZES",
    "NS_INTERFACE_SEGMENTS",
    "NS_INTERFACE_SIDES",
    "interface_edge_partition",
    "locate_points",
    "triangle_areas",
    "write_mesh_text",
]

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Triangulated axis-aligned rectangle.

    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : tuple of ((v0, v1), tag)
    rect : (x0, x1, y0, y1) of the meshed rectangle
    nx, ny : cell subdivisions used to generate the mesh
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: tuple
    rect: tuple
    nx: int
    ny: int

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def boundary_tags(self):
        return sorted({tag for _, tag in self.boundary_edges})

    def edges_with_tag(self, tag):
        return [edge for edge, t in self.boundary_edges if t == tag]


@dataclass(frozen=True)
class MeshFamilySpec:
    """Parameters of one of the two experiment mesh families.

    problem : "poisson_two_domain" or "ns_five_domain"
    N : total x-subdivisions of the unit square (Poisson) or the
        reciprocal mesh size 1/h (Navier-Stokes).
    """

    problem: str
    N: int

    def __post_init__(self):
        if self.problem not in ("poisson_two_domain", "ns_five_domain"):
            raise ValueError(f"unknown mesh family {self.problem!r}")
        if self.N <= 0:
            raise ValueError("N must be positive")
        if self.problem == "poisson_two_domain" and self.N % 2 != 0:
            raise ValueError("poisson_two_domain requires even N")

    def build(self, conforming=True):
        if self.problem == "poisson_two_domain":
            return poisson_mesh_pair(self.N, conforming=conforming)
        return ns_mesh_family(Fraction(1, self.N))


def structured_rect_mesh(rect, nx, ny):
    """Uniform triangular mesh of the rectangle (x0,x1) x (y0,y1).

    Each of the nx*ny cells is split along the lower-left to upper-right
    diagonal.  Boundary edges are tagged "left", "right", "bottom", "top".
    """
    x0, x1, y0, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {rect}")
    if nx < 1 or ny < 1:
        raise ValueError("subdivision counts must be >= 1")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    t = 0
    for i in range(nx):
        for j in range(ny):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            triangles[t] = (a, b, c)       # lower triangle
            triangles[t + 1] = (a, c, d)   # upper triangle
            t += 2

    boundary = []
    for j in range(ny):
        boundary.append(((vid(0, j + 1), vid(0, j)), "left"))
        boundary.append(((vid(nx, j), vid(nx, j + 1)), "right"))
    for i in range(nx):
        boundary.append(((vid(i, 0), vid(i + 1, 0)), "bottom"))
        boundary.append(((vid(i + 1, ny), vid(i, ny)), "top"))

    return Mesh(vertices, triangles, tuple(boundary), (x0, x1, y0, y1), nx, ny)


def retag_boundary(mesh, new_tag, predicate):
    """Return a copy of the mesh with boundary edges retagged.

    Edges whose midpoint satisfies predicate(x, y) receive new_tag.
    """
    edges = []
    hits = 0
    for (v0, v1), tag in mesh.boundary_edges:
        mid = 0.5 * (mesh.vertices[v0] + mesh.vertices[v1])
        if predicate(mid[0], mid[1]):
            edges.append(((v0, v1), new_tag))
            hits += 1
        else:
            edges.append(((v0, v1), tag))
    if hits == 0:
        raise ValueError(f"no boundary edge matched for tag {new_tag!r}")
    return replace(mesh, boundary_edges=tuple(edges))


def poisson_mesh_pair(N, conforming=True):
    """Meshes of the two-subdomain split of the unit square at x = 0.5.

    Omega_1 = (0,0.5)x(0,1) gets N/2 columns and N rows of cells; the
    second subdomain gets N rows when conforming and N+1 otherwise, so
    the interface vertex sets differ in the non-conforming case.  The
    shared side x = 0.5 is retagged "interface:0" on both meshes.
    """
    if N <= 0 or N % 2 != 0:
        raise ValueError("N must be a positive even integer")
    on_interface = lambda x, y: abs(x - 0.5) < _GEOM_TOL
    m1 = structured_rect_mesh((0.0, 0.5, 0.0, 1.0), N // 2, N)
    m2 = structured_rect_mesh((0.5, 1.0, 0.0, 1.0), N // 2, N if conforming else N + 1)
    m1 = retag_boundary(m1, "interface:0", on_interface)
    m2 = retag_boundary(m2, "interface:0", on_interface)
    return m1, m2


# Five-subdomain partition of the unit square for the Navier-Stokes runs.
# Indices are 0-based internally.  The top half is one subdomain; below it
# sit two middle strips, and the two refined bottom corners contain the
# secondary recirculation zones.  Geometry is a constant so it can be
# adjusted without touching code.
NS_SUBDOMAIN_RECTS = (
    (0.0, 1.0, 0.5, 1.0),    # 0: top half
    (0.0, 0.5, 0.0, 0.25),   # 1: bottom-left corner (refined, h/2)
    (0.0, 0.5, 0.25, 0.5),   # 2: middle-left strip
    (0.5, 1.0, 0.0, 0.25),   # 3: bottom-right corner (refined, h/2)
    (0.5, 1.0, 0.25, 0.5),   # 4: middle-right strip
)
# mesh size of subdomain i = NS_SUBDOMAIN_SIZES[i] * h
NS_SUBDOMAIN_SIZES = (1, Fraction(1, 2), 1, Fraction(1, 2), 1)
# interface segments, lexicographically ordered endpoints
NS_INTERFACE_SEGMENTS = (
    ((0.0, 0.5), (1.0, 0.5)),     # 1: full-width, under the top half
    ((0.0, 0.25), (0.5, 0.25)),   # 2: middle-left strip over bottom-left
    ((0.5, 0.25), (1.0, 0.25)),   # 3: middle-right strip over bottom-right
    ((0.5, 0.0), (0.5, 0.5)),     # 4: vertical split of the lower half
)
# (subdomain index, jump sign) pairs per interface; +1 side minus -1 side
NS_INTERFACE_SIDES = (
    ((0, +1), (2, -1), (4, -1)),
    ((2, +1), (1, -1)),
    ((4, +1), (3, -1)),
    ((4, +1), (3, +1), (2, -1), (1, -1)),
)


def ns_mesh_family(h):
    """The five Navier-Stokes meshes for mesh size h (an exact Fraction).

    Subdomains 0, 2, 4 are meshed at size h, the two bottom corners at
    h/2.  All interface portions of each mesh are tagged "interface:<k>"
    with k in 1..4.
    """
    h = Fraction(h)
    if h <= 0 or h.numerator != 1:
        raise ValueError("h must be the reciprocal of a positive integer")
    if h.denominator % 2 != 0:
        raise ValueError("1/h must be divisible by 2")

    meshes = []
    for rect, size in zip(NS_SUBDOMAIN_RECTS, NS_SUBDOMAIN_SIZES):
        hi = h * size
        x0, x1, y0, y1 = (Fraction(v).limit_denominator(10**6) for v in rect)
        nx = (x1 - x0) / hi
        ny = (y1 - y0) / hi
        if nx.denominator != 1 or ny.denominator != 1:
            raise ValueError(
                f"mesh size {h} does not subdivide rectangle {rect} evenly "
                "(1/h must be divisible by 4 for this geometry)")
        meshes.append(structured_rect_mesh(rect, int(nx), int(ny)))

    tagged = []
    for sub, mesh in enumerate(meshes):
        for k, ((p0x, p0y), (p1x, p1y)) in enumerate(NS_INTERFACE_SEGMENTS, start=1):
            if not any(sub == s for s, _ in NS_INTERFACE_SIDES[k - 1]):
                continue
            if abs(p0x - p1x) < _GEOM_TOL:   # vertical segment
                pred = lambda x, y, px=p0x, ya=p0y, yb=p1y: (
                    abs(x - px) < _GEOM_TOL and ya - _GEOM_TOL < y < yb + _GEOM_TOL)
            else:                             # horizontal segment
                pred = lambda x, y, py=p0y, xa=p0x, xb=p1x: (
                    abs(y - py) < _GEOM_TOL and xa - _GEOM_TOL < x < xb + _GEOM_TOL)
            mesh = retag_boundary(mesh, f"interface:{k}", pred)
        tagged.append(mesh)
    return tagged


@dataclass(frozen=True)
class InterfaceEdge:
    """One mesh edge lying on an interface, with its arc-length span."""

    v0: int
    v1: int
    triangle: int
    s0: float
    s1: float


@dataclass(frozen=True)
class InterfacePartition:
    """Ordered interface edges of one mesh, tiling [0, L] in arc length."""

    edges: tuple
    start: tuple          # physical point at s = 0
    direction: tuple      # unit vector of increasing s
    length: float


def _boundary_edge_triangles(mesh):
    """Map each boundary edge (as a sorted vertex pair) to its triangle."""
    owner = {}
    tris = mesh.triangles
    for t in range(tris.shape[0]):
        a, b, c = tris[t]
        for e in ((a, b), (b, c), (c, a)):
            owner[tuple(sorted(e))] = t
    return owner


def interface_edge_partition(mesh, interface_tag):
    """Edges of the mesh tagged with interface_tag, sorted by arc length.

    The tagged edges must form one contiguous straight segment.  Arc
    length starts at 0 at the lexicographically smaller endpoint of the
    tagged segment; spans tile [0, L] exactly.
    """
    edges = mesh.edges_with_tag(interface_tag)
    if not edges:
        raise ValueError(f"tag {interface_tag!r} not present on mesh boundary")

    pts = mesh.vertices
    endpoints = np.array([pts[v] for e in edges for v in e])
    order = np.lexsort((endpoints[:, 1], endpoints[:, 0]))
    p_start = endpoints[order[0]]
    p_end = endpoints[order[-1]]
    direction = p_end - p_start
    length = float(np.hypot(*direction))
    if length < _GEOM_TOL:
        raise ValueError(f"tagged edges for {interface_tag!r} are degenerate")
    direction = direction / length

    # all tagged endpoints must be collinear with the segment
    rel = endpoints - p_start
    off = rel[:, 0] * direction[1] - rel[:, 1] * direction[0]
    if np.abs(off).max() > 1e-10:
        raise ValueError(f"tagged edges for {interface_tag!r} are not collinear")

    owner = _boundary_edge_triangles(mesh)
    entries = []
    for v0, v1 in edges:
        s0 = float(np.dot(pts[v0] - p_start, direction))
        s1 = float(np.dot(pts[v1] - p_start, direction))
        if s0 > s1:
            v0, v1, s0, s1 = v1, v0, s1, s0
        entries.append(InterfaceEdge(v0, v1, owner[tuple(sorted((v0, v1)))], s0, s1))
    entries.sort(key=lambda e: e.s0)

    for prev, nxt in zip(entries, entries[1:]):
        if abs(prev.s1 - nxt.s0) > 1e-10 or prev.v1 != nxt.v0:
            raise ValueError(f"tagged edges for {interface_tag!r} are not contiguous")
    if abs(entries[0].s0) > 1e-10 or abs(entries[-1].s1 - length) > 1e-10:
        raise ValueError(f"tagged edges for {interface_tag!r} do not tile the segment")

    return InterfacePartition(tuple(entries), tuple(p_start), tuple(direction), length)


def locate_points(mesh, points):
    """Locate points in a structured mesh.

    Returns (triangle indices, reference coordinates) where the reference
    triangle has vertices (0,0), (1,0), (0,1).  Points are clamped to the
    rectangle, so boundary points resolve to an adjacent cell.
    """
    x0, x1, y0, y1 = mesh.rect
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    fx = np.clip((pts[:, 0] - x0) / (x1 - x0) * mesh.nx, 0.0, mesh.nx * (1 - 1e-15))
    fy = np.clip((pts[:, 1] - y0) / (y1 - y0) * mesh.ny, 0.0, mesh.ny * (1 - 1e-15))
    ix = fx.astype(np.int64)
    iy = fy.astype(np.int64)
    # local cell coordinates in [0,1]^2; the diagonal runs from (0,0) to (1,1)
    u = fx - ix
    v = fy - iy
    lower = v <= u
    tri = 2 * (ix * mesh.ny + iy) + np.where(lower, 0, 1)
    # lower triangle (a,b,c): ref x along the bottom, ref y along the diagonal
    # upper triangle (a,c,d): ref x along the diagonal, ref y up the left side
    ref = np.empty_like(pts)
    ref[lower, 0] = (u - v)[lower]
    ref[lower, 1] = v[lower]
    ref[~lower, 0] = u[~lower]
    ref[~lower, 1] = (v - u)[~lower]
    return tri, ref


def triangle_areas(mesh):
    v = mesh.vertices[mesh.triangles]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def write_mesh_text(mesh, stream):
    """Plain-text mesh dump: header, one vertex per line, one triangle per line."""
    stream.write(f"vertices {mesh.num_vertices} triangles {mesh.num_triangles}\n")
    for x, y in mesh.vertices:
        stream.write(f"{x:.17g} {y:.17g}\n")
    for i, j, k in mesh.triangles:
        stream.write(f"{i} {j} {k}\n")
