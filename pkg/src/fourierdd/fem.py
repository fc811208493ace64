"""P1/P2 Lagrange elements on triangles and operator assembly.

Scalar spaces carry one degree of freedom per vertex (P1) or per vertex
and edge midpoint (P2).  Vector spaces are component-major: dof index =
component * n_scalar + scalar index.  All bilinear forms are integrated
with a degree-4 exact 6-point triangle rule.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

__all__ = [
    "TRIANGLE_RULES",
    "triangle_quadrature",
    "reference_basis_eval",
    "FunctionSpace",
    "DirichletSet",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "assemble_boundary_load",
    "assemble_ns_blocks",
    "NSBlocks",
    "apply_dirichlet",
    "eliminate_dirichlet",
    "eval_function",
    "eval_gradient",
    "interpolate",
]

_REF_TOL = 1e-12


def _rule_deg4():
    a, wa = 0.445948490915965, 0.223381589678011
    b, wb = 0.091576213509771, 0.109951743655322
    pts, wts = [], []
    for c, w in ((a, wa), (b, wb)):
        pts += [(c, c), (1 - 2 * c, c), (c, 1 - 2 * c)]
        wts += [w, w, w]
    return np.array(pts), 0.5 * np.array(wts)


def _rule_deg6():
    pts, wts = [], []
    for a, w in ((0.063089014491502, 0.050844906370207),
                 (0.249286745170910, 0.116786275726379)):
        pts += [(a, a), (1 - 2 * a, a), (a, 1 - 2 * a)]
        wts += [w, w, w]
    a, b = 0.636502499121399, 0.310352451033785
    c = 1.0 - a - b
    w = 0.082851075618374
    for l1, l2 in ((a, b), (a, c), (b, a), (b, c), (c, a), (c, b)):
        pts.append((l1, l2))
        wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


# reference-triangle rules by exactness degree; weights sum to area 1/2
TRIANGLE_RULES = {
    1: (np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    2: (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.array([1 / 6, 1 / 6, 1 / 6])),
    4: _rule_deg4(),
    6: _rule_deg6(),
}


def triangle_quadrature(degree):
    """Smallest stored rule integrating polynomials of the given degree."""
    for d in sorted(TRIANGLE_RULES):
        if d >= degree:
            return TRIANGLE_RULES[d]
    raise ValueError(f"no triangle rule of degree {degree}")


def _ref_values(degree, pts):
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    if degree == "P1":
        return np.stack([l0, x, y], axis=1)
    if degree == "P2":
        return np.stack([
            l0 * (2 * l0 - 1), x * (2 * x - 1), y * (2 * y - 1),
            4 * l0 * x, 4 * l0 * y, 4 * x * y,
        ], axis=1)
    raise ValueError(f"unknown degree {degree!r}")


def _ref_gradients(degree, pts):
    n = pts.shape[0]
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    if degree == "P1":
        g = np.empty((n, 3, 2))
        g[:, 0] = (-1.0, -1.0)
        g[:, 1] = (1.0, 0.0)
        g[:, 2] = (0.0, 1.0)
        return g
    if degree == "P2":
        g = np.empty((n, 6, 2))
        g[:, 0, 0] = 1 - 4 * l0
        g[:, 0, 1] = 1 - 4 * l0
        g[:, 1, 0] = 4 * x - 1
        g[:, 1, 1] = 0.0
        g[:, 2, 0] = 0.0
        g[:, 2, 1] = 4 * y - 1
        g[:, 3, 0] = 4 * (l0 - x)
        g[:, 3, 1] = -4 * x
        g[:, 4, 0] = -4 * y
        g[:, 4, 1] = 4 * (l0 - y)
        g[:, 5, 0] = 4 * y
        g[:, 5, 1] = 4 * x
        return g
    raise ValueError(f"unknown degree {degree!r}")


def reference_basis_eval(degree, point):
    """Basis values and gradients at one reference-triangle point."""
    x, y = float(point[0]), float(point[1])
    if x < -_REF_TOL or y < -_REF_TOL or x + y > 1.0 + _REF_TOL:
        raise ValueError(f"point {point} outside reference triangle")
    pts = np.array([[x, y]])
    return _ref_values(degree, pts)[0], _ref_gradients(degree, pts)[0]


class FunctionSpace:
    """Lagrange space on a triangular mesh.

    degree : "P1" or "P2"
    components : 1 for scalar fields, 2 for vector fields
    """

    def __init__(self, mesh, degree, components=1):
        if degree not in ("P1", "P2"):
            raise ValueError(f"unknown degree {degree!r}")
        if components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.components = components

        tris = mesh.triangles
        nv = mesh.num_vertices
        if degree == "P1":
            self.cell_dofs = tris.copy()
            self.dof_coords = mesh.vertices.copy()
            self._edge_rank = {}
        else:
            edges = set()
            for a, b, c in tris:
                edges.add((min(a, b), max(a, b)))
                edges.add((min(a, c), max(a, c)))
                edges.add((min(b, c), max(b, c)))
            ordered = sorted(edges)
            self._edge_rank = {e: nv + k for k, e in enumerate(ordered)}
            cd = np.empty((tris.shape[0], 6), dtype=np.int64)
            cd[:, :3] = tris
            for t, (a, b, c) in enumerate(tris):
                cd[t, 3] = self._edge_rank[(min(a, b), max(a, b))]
                cd[t, 4] = self._edge_rank[(min(a, c), max(a, c))]
                cd[t, 5] = self._edge_rank[(min(b, c), max(b, c))]
            self.cell_dofs = cd
            mids = np.array([0.5 * (mesh.vertices[a] + mesh.vertices[b])
                             for a, b in ordered])
            self.dof_coords = np.vstack([mesh.vertices, mids])

        self.n_scalar = self.dof_coords.shape[0]
        self.n_dofs = components * self.n_scalar
        self.n_local = self.cell_dofs.shape[1]

        # geometry shared by every assembler
        v = mesh.vertices[tris]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        self._det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 1, 0]
        inv[:, 1, 0] = -J[:, 0, 1]
        inv[:, 1, 1] = J[:, 0, 0]
        self._inv_jt = inv / self._det[:, None, None]
        self._v0 = v[:, 0]
        self._jac = J

    def scalar_dofs_on_boundary(self, tags):
        """Scalar dofs whose basis functions are supported on tagged edges."""
        tagset = {tags} if isinstance(tags, str) else set(tags)
        dofs = set()
        for (a, b), tag in self.mesh.boundary_edges:
            if tag in tagset:
                dofs.add(a)
                dofs.add(b)
                if self.degree == "P2":
                    dofs.add(self._edge_rank[(min(a, b), max(a, b))])
        return np.array(sorted(dofs), dtype=np.int64)

    def edge_scalar_dofs(self, a, b):
        """Scalar dofs with nonzero trace on the mesh edge (a, b)."""
        if self.degree == "P1":
            return [a, b]
        return [a, b, self._edge_rank[(min(a, b), max(a, b))]]

    def physical_points(self, quad_pts):
        """Map reference points to physical points per element: (nt, nq, 2)."""
        return self._v0[:, None, :] + np.einsum("tij,qj->tqi", self._jac, quad_pts)


@dataclass(frozen=True)
class DirichletSet:
    """Prescribed values at global dof indices (unique, in range)."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape:
            raise ValueError("indices and values must have equal length")
        if idx.size == 0:
            object.__setattr__(self, "indices", idx)
            object.__setattr__(self, "values", val)
            return
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        dup = idx[1:] == idx[:-1]
        if np.any(dup & (val[1:] != val[:-1])):
            bad = idx[1:][dup & (val[1:] != val[:-1])]
            raise ValueError(f"conflicting prescriptions at dofs {bad.tolist()}")
        keep = np.concatenate([[True], ~dup])
        object.__setattr__(self, "indices", idx[keep])
        object.__setattr__(self, "values", val[keep])
        self.indices.setflags(write=False)
        self.values.setflags(write=False)

    def __len__(self):
        return self.indices.size

    def validate(self, n_dofs):
        if len(self) and (self.indices.min() < 0 or self.indices.max() >= n_dofs):
            raise ValueError("dirichlet index out of range")

    @classmethod
    def from_tags(cls, space, tags, fn=None):
        """Dirichlet set over all dofs on tagged boundary edges.

        fn(x, y) returns the prescribed value (a length-2 sequence for
        vector spaces); defaults to zero.
        """
        sdofs = space.scalar_dofs_on_boundary(tags)
        coords = space.dof_coords[sdofs]
        if space.components == 1:
            vals = (np.zeros(len(sdofs)) if fn is None else
                    np.array([fn(x, y) for x, y in coords], dtype=float))
            return cls(sdofs, vals)
        idx, vals = [], []
        for d, (x, y) in zip(sdofs, coords):
            g = (0.0, 0.0) if fn is None else fn(x, y)
            for c in range(2):
                idx.append(c * space.n_scalar + d)
                vals.append(g[c])
        return cls(np.array(idx), np.array(vals))

    @classmethod
    def union(cls, *sets):
        sets = [s for s in sets if s is not None and len(s)]
        if not sets:
            return cls(np.empty(0, dtype=np.int64), np.empty(0))
        return cls(np.concatenate([s.indices for s in sets]),
                   np.concatenate([s.values for s in sets]))


def _scatter(space, local, n=None):
    """Assemble (nt, nloc, nloc) element matrices into a csr matrix."""
    n = space.n_scalar if n is None else n
    cd = space.cell_dofs
    rows = np.repeat(cd, cd.shape[1], axis=1).ravel()
    cols = np.tile(cd, (1, cd.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _grad_fields(space, quad_pts):
    """Physical gradients of all basis functions at quadrature points."""
    G = _ref_gradients(space.degree, quad_pts)
    return np.einsum("tij,qaj->tqai", space._inv_jt, G)


def assemble_stiffness(space, coefficient=1.0):
    """Scalar stiffness matrix of coefficient * (grad u, grad v)."""
    if space.components != 1:
        raise ValueError("assemble_stiffness expects a scalar space")
    pts, w = TRIANGLE_RULES[4]
    gradN = _grad_fields(space, pts)
    det = np.abs(space._det)
    local = coefficient * np.einsum("q,t,tqai,tqbi->tab", w, det, gradN, gradN)
    return _scatter(space, local)


def assemble_mass(space):
    """Scalar mass matrix (u, v)."""
    if space.components != 1:
        raise ValueError("assemble_mass expects a scalar space")
    pts, w = TRIANGLE_RULES[4]
    N = _ref_values(space.degree, pts)
    det = np.abs(space._det)
    local = np.einsum("q,t,qa,qb->tab", w, det, N, N)
    return _scatter(space, local)


def _eval_at(f, X, Y, components):
    """Evaluate a (possibly non-vectorized) callable on point arrays."""
    try:
        out = np.asarray(f(X, Y), dtype=float)
        want = X.shape if components == 1 else (components,) + X.shape
        if out.shape == want:
            return out
    except Exception:
        pass
    flatx, flaty = X.ravel(), Y.ravel()
    vals = np.array([f(x, y) for x, y in zip(flatx, flaty)], dtype=float)
    if components == 1:
        return vals.reshape(X.shape)
    return np.moveaxis(vals.reshape(X.shape + (components,)), -1, 0)


def assemble_load(space, f, quad_degree=4):
    """Load vector with entries integral of f * basis_i."""
    pts, w = triangle_quadrature(quad_degree)
    N = _ref_values(space.degree, pts)
    det = np.abs(space._det)
    P = space.physical_points(pts)
    fv = _eval_at(f, P[:, :, 0], P[:, :, 1], space.components)
    out = np.zeros(space.n_dofs)
    cd = space.cell_dofs
    if space.components == 1:
        local = np.einsum("q,t,qa,tq->ta", w, det, N, fv)
        np.add.at(out, cd.ravel(), local.ravel())
    else:
        for c in range(2):
            local = np.einsum("q,t,qa,tq->ta", w, det, N, fv[c])
            np.add.at(out, (c * space.n_scalar + cd).ravel(), local.ravel())
    return out


def assemble_boundary_load(space, tags, g, q=4):
    """Boundary load: integral of g . v over tagged boundary edges."""
    xg, wg = leggauss(q)
    tagset = {tags} if isinstance(tags, str) else set(tags)
    out = np.zeros(space.n_dofs)
    verts = space.mesh.vertices
    for (a, b), tag in space.mesh.boundary_edges:
        if tag not in tagset:
            continue
        pa, pb = verts[a], verts[b]
        length = float(np.hypot(*(pb - pa)))
        t = 0.5 * (xg + 1.0)
        pts = pa[None, :] + t[:, None] * (pb - pa)[None, :]
        dofs = space.edge_scalar_dofs(a, b)
        vals = _edge_trace_values(space.degree, t)
        gv = np.array([g(x, y) for x, y in pts], dtype=float)
        if space.components == 1:
            gv = gv[:, None]
        for c in range(space.components):
            contrib = (0.5 * length) * np.einsum("q,qa,q->a", wg, vals, gv[:, c])
            for ld, d in enumerate(dofs):
                out[c * space.n_scalar + d] += contrib[ld]
    return out


def _edge_trace_values(degree, t):
    """Trace of the edge-supported basis functions at edge parameter t."""
    if degree == "P1":
        return np.stack([1.0 - t, t], axis=1)
    return np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=1)


@dataclass(frozen=True)
class NSBlocks:
    """Navier-Stokes operator blocks on one subdomain.

    diffusion : mu * vector stiffness (n_u x n_u)
    divergence : D with D[q, j] = integral of q * div(phi_j)  (n_p x n_u)
    convection : (u_current . grad) u tested against v (n_u x n_u)
    convection_jacobian : convection + (delta u . grad) u_current term
    """

    diffusion: sp.csr_matrix
    divergence: sp.csr_matrix
    convection: sp.csr_matrix
    convection_jacobian: sp.csr_matrix


def assemble_ns_blocks(velocity_space, pressure_space, mu, u_current):
    if velocity_space.mesh is not pressure_space.mesh:
        raise ValueError("velocity and pressure spaces must share one mesh")
    if velocity_space.components != 2 or pressure_space.components != 1:
        raise ValueError("expected 2-component velocity and scalar pressure")
    u_current = np.asarray(u_current, dtype=float)
    if u_current.shape != (velocity_space.n_dofs,):
        raise ValueError("u_current sized to the velocity space expected")

    V, Q = velocity_space, pressure_space
    ns = V.n_scalar
    pts, w = TRIANGLE_RULES[4]
    det = np.abs(V._det)
    Nv = _ref_values(V.degree, pts)
    gradV = _grad_fields(V, pts)
    Np = _ref_values(Q.degree, pts)

    # scalar stiffness reused per component
    Ks = _scatter(V, np.einsum("q,t,tqai,tqbi->tab", w, det, gradV, gradV))
    diffusion = mu * sp.kron(sp.eye(2), Ks, format="csr")

    # divergence: rows pressure dofs, columns component-major velocity dofs
    cdv, cdp = V.cell_dofs, Q.cell_dofs
    rows, cols, vals = [], [], []
    for c in range(2):
        loc = np.einsum("q,t,qp,tqa->tpa", w, det, Np, gradV[:, :, :, c])
        rows.append(np.repeat(cdp, cdv.shape[1], axis=1).ravel())
        cols.append((c * ns + np.tile(cdv, (1, cdp.shape[1]))).ravel())
        vals.append(loc.ravel())
    divergence = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(Q.n_scalar, V.n_dofs)).tocsr()

    # velocity and its gradient at quadrature points from current coefficients
    uc = np.stack([u_current[c * ns + cdv] for c in range(2)], axis=-1)  # (nt,nloc,2)
    u_q = np.einsum("qa,tac->tqc", Nv, uc)
    gradu_q = np.einsum("tqai,tac->tqci", gradV, uc)  # (nt,nq,comp,deriv)

    conv_s = np.einsum("q,t,qa,tqc,tqbc->tab", w, det, Nv, u_q, gradV)
    Cs = _scatter(V, conv_s)
    convection = sp.kron(sp.eye(2), Cs, format="csr")

    # second linearization term: block (a,b) = integral Ni Nj d_b u_a
    rows, cols, vals = [], [], []
    ii = np.repeat(cdv, cdv.shape[1], axis=1).ravel()
    jj = np.tile(cdv, (1, cdv.shape[1])).ravel()
    for ca in range(2):
        for cb in range(2):
            loc = np.einsum("q,t,qa,qb,tq->tab", w, det, Nv, Nv, gradu_q[:, :, ca, cb])
            rows.append(ca * ns + ii)
            cols.append(cb * ns + jj)
            vals.append(loc.ravel())
    C2 = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V.n_dofs, V.n_dofs)).tocsr()

    return NSBlocks(diffusion.tocsr(), divergence, convection.tocsr(),
                    (convection + C2).tocsr())


def apply_dirichlet(matrix, rhs, bc):
    """Constrain dofs in place of the full system.

    Constrained rows become identity rows with the prescribed value on
    the right-hand side; the matching columns are moved to the rhs so the
    unconstrained block stays symmetric.
    """
    bc.validate(matrix.shape[0])
    A = matrix.tocsc(copy=True)
    b = np.asarray(rhs, dtype=float).copy()
    idx, vals = bc.indices, bc.values
    b -= A[:, idx] @ vals
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[idx] = True
    diag = sp.diags(np.where(mask, 0.0, 1.0))
    A = diag @ A @ diag
    A = A.tolil()
    A[idx, idx] = 1.0
    b[idx] = vals
    return A.tocsr(), b


def eliminate_dirichlet(matrix, rhs, bc):
    """Reduce the system to free dofs; returns (A_ff, b_f, free_indices)."""
    bc.validate(matrix.shape[0])
    n = matrix.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[bc.indices] = False
    free = np.nonzero(mask)[0]
    A = matrix.tocsc()
    b_f = np.asarray(rhs, dtype=float)[free] - A[free][:, bc.indices] @ bc.values
    return A[free][:, free].tocsr(), b_f, free


def eval_function(space, coeffs, points):
    """Evaluate the FE function at physical points: (npts, components)."""
    from .mesh import locate_points
    coeffs = np.asarray(coeffs, dtype=float)
    tri, ref = locate_points(space.mesh, np.atleast_2d(points))
    N = _ref_values(space.degree, ref)
    dofs = space.cell_dofs[tri]
    out = np.empty((dofs.shape[0], space.components))
    for c in range(space.components):
        out[:, c] = np.einsum("pa,pa->p", N, coeffs[c * space.n_scalar + dofs])
    return out


def eval_gradient(space, coeffs, points):
    """Gradient of the FE function at physical points: (npts, components, 2)."""
    coeffs = np.asarray(coeffs, dtype=float)
    pts = np.atleast_2d(points)
    from .mesh import locate_points
    tri, ref = locate_points(space.mesh, pts)
    G = _ref_gradients(space.degree, ref)
    inv = space._inv_jt[tri]
    gphys = np.einsum("pij,paj->pai", inv, G)
    dofs = space.cell_dofs[tri]
    out = np.empty((pts.shape[0], space.components, 2))
    for c in range(space.components):
        out[:, c, :] = np.einsum("pai,pa->pi", gphys, coeffs[c * space.n_scalar + dofs])
    return out


def interpolate(space, fn):
    """Nodal interpolation of a callable onto the space."""
    coords = space.dof_coords
    if space.components == 1:
        return np.array([fn(x, y) for x, y in coords], dtype=float)
    vals = np.array([fn(x, y) for x, y in coords], dtype=float)
    return np.concatenate([vals[:, 0], vals[:, 1]])
