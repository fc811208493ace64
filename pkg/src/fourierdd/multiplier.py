"""Fourier multiplier basis on interfaces and coupling-matrix assembly.

The basis on an interface of length L is 1, sin(i*pi*s/L), cos(i*pi*s/L)
for i = 1..n_omega, parametrized by arc length s measured from the
lexicographically smaller interface endpoint.  The set is orthogonal on
(0, 2L) but not on (0, L); the sampling-based map built here (Cholesky of
a fine piecewise-linear mass matrix followed by a thin QR) yields the
upper-triangular change of basis R whose inverse orthonormalizes it.
"""

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .fem import _edge_trace_values

__all__ = [
    "FourierBasis",
    "fourier_eval",
    "OrthoMap",
    "build_ortho_map",
    "cached_ortho_map",
    "CouplingMatrix",
    "assemble_coupling",
    "apply_ortho",
    "assemble_trace_mass",
    "gauss_gram",
    "multiplier_values",
]

_S_TOL = 1e-12


@dataclass(frozen=True)
class FourierBasis:
    """Truncated half-range Fourier basis on an interface of length L."""

    L: float
    n_omega: int

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("interface length must be positive")
        if self.n_omega < 0:
            raise ValueError("n_omega must be nonnegative")

    @property
    def n_gamma(self):
        return 2 * self.n_omega + 1

    def eval_matrix(self, s):
        """Values of all basis functions at arc lengths s: (len(s), n_gamma)."""
        s = np.asarray(s, dtype=float)
        V = np.empty(s.shape + (self.n_gamma,))
        V[..., 0] = 1.0
        for i in range(1, self.n_omega + 1):
            arg = i * np.pi * s / self.L
            V[..., 2 * i - 1] = np.sin(arg)
            V[..., 2 * i] = np.cos(arg)
        return V


def fourier_eval(basis, index, s):
    """Value of basis function `index` (1-based) at arc length s."""
    if not 1 <= index <= basis.n_gamma:
        raise ValueError(f"basis index {index} out of range 1..{basis.n_gamma}")
    s = float(s)
    if s < -_S_TOL or s > basis.L + _S_TOL:
        raise ValueError(f"arc length {s} outside [0, {basis.L}]")
    if index == 1:
        return 1.0
    i = index // 2
    arg = i * np.pi * s / basis.L
    return float(np.sin(arg)) if index % 2 == 0 else float(np.cos(arg))


@dataclass(frozen=True)
class OrthoMap:
    """Upper-triangular orthonormalization map for a Fourier basis.

    r_inv maps multiplier coefficients from the orthonormal frame back to
    the raw one; coupling matrices transform as B -> R^-T B.  The sample
    grid and the stable nodal values of the orthonormalized functions are
    kept for verification.
    """

    r_inv: np.ndarray
    sample_count: int
    samples: np.ndarray
    ortho_samples: np.ndarray

    def __post_init__(self):
        d = np.diag(self.r_inv)
        if np.any(d <= 0):
            raise ValueError("r_inv must have a strictly positive diagonal")
        for arr in (self.r_inv, self.samples, self.ortho_samples):
            arr.setflags(write=False)


def _sample_mass(x):
    """Mass matrix of the piecewise-linear hats on the sample grid."""
    h = np.diff(x)
    n = len(x)
    main = np.zeros(n)
    main[:-1] += h / 3
    main[1:] += h / 3
    off = h / 6
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


def build_ortho_map(basis, n_s=2000):
    """Sampling-based orthonormalization of the interface basis.

    Samples the basis at n_s uniform points of [0, L], forms the mass
    matrix M of the piecewise-linear hats on that grid, its Cholesky
    factor C with C^T C = M, and the thin QR of C V.  Raises if C V is
    numerically rank deficient (basis too rich for the sampling).
    """
    if n_s <= basis.n_gamma:
        raise ValueError("n_s must exceed the basis size")
    x = np.linspace(0.0, basis.L, n_s)
    V = basis.eval_matrix(x)
    M = _sample_mass(x).toarray()
    C = np.linalg.cholesky(M).T
    Q, R = np.linalg.qr(C @ V)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    R = signs[:, None] * R
    Q = Q * signs[None, :]
    # below ~sqrt(eps) the triangular factor is numerical noise; the richest
    # supported configuration (43 functions on 2000 samples) sits near 4e-7
    d = np.abs(np.diag(R))
    if d.min() <= 1e-7 * d.max():
        raise ValueError("C V is rank deficient: basis too rich for the sampling")
    r_inv = np.linalg.inv(R)
    ortho = np.linalg.solve(C, Q)   # stable nodal values of the mapped basis
    return OrthoMap(r_inv, n_s, x, ortho)


@lru_cache(maxsize=64)
def cached_ortho_map(basis, n_s=2000):
    """build_ortho_map memoized on (basis, n_s); treat the result as frozen."""
    return build_ortho_map(basis, n_s)


@dataclass(frozen=True)
class CouplingMatrix:
    """Rows: multiplier basis functions; columns: scalar trace dofs."""

    entries: sp.csr_matrix
    side_sign: int = 1

    def __post_init__(self):
        if self.side_sign not in (-1, 1):
            raise ValueError("side_sign must be +1 or -1")

    @property
    def shape(self):
        return self.entries.shape


def assemble_coupling(basis, space, partition, q=4, arc_offset=0.0, side_sign=1):
    """Coupling matrix of multiplier rows against subdomain trace dofs.

    Entry (m, n) approximates the interface integral of phi_n * xi_m by
    composite q-point Gauss quadrature over the edge partition induced by
    the subdomain's own mesh.  arc_offset shifts the local arc length
    into the interface's global parametrization (nonzero when this mesh
    covers only part of the interface).
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    xg, wg = leggauss(q)
    t = 0.5 * (xg + 1.0)
    rows, cols, vals = [], [], []
    for edge in partition.edges:
        half = 0.5 * (edge.s1 - edge.s0)
        s_glob = arc_offset + edge.s0 + t * (edge.s1 - edge.s0)
        Xi = basis.eval_matrix(s_glob)                  # (q, n_gamma)
        tr = _edge_trace_values(space.degree, t)        # (q, n_edge_dofs)
        dofs = space.edge_scalar_dofs(edge.v0, edge.v1)
        contrib = half * np.einsum("q,qm,qa->ma", wg, Xi, tr)
        for a, d in enumerate(dofs):
            rows.extend(range(basis.n_gamma))
            cols.extend([d] * basis.n_gamma)
            vals.extend(contrib[:, a])
    B = sp.coo_matrix((vals, (rows, cols)),
                      shape=(basis.n_gamma, space.n_scalar)).tocsr()
    return CouplingMatrix(B, side_sign)


def apply_ortho(B, omap):
    """Change the coupling matrix to the orthonormalized multiplier frame."""
    n_gamma = B.entries.shape[0]
    if omap.r_inv.shape != (n_gamma, n_gamma):
        raise ValueError("orthonormalization map does not match basis size")
    mapped = sp.csr_matrix(omap.r_inv.T @ B.entries.toarray())
    return replace(B, entries=mapped)


def assemble_trace_mass(space, partition, q=4):
    """1D mass matrix of the FE traces along the interface partition."""
    xg, wg = leggauss(q)
    t = 0.5 * (xg + 1.0)
    n = space.n_scalar
    rows, cols, vals = [], [], []
    for edge in partition.edges:
        half = 0.5 * (edge.s1 - edge.s0)
        tr = _edge_trace_values(space.degree, t)
        dofs = space.edge_scalar_dofs(edge.v0, edge.v1)
        local = half * np.einsum("q,qa,qb->ab", wg, tr, tr)
        for a, da in enumerate(dofs):
            for b, db in enumerate(dofs):
                rows.append(da)
                cols.append(db)
                vals.append(local[a, b])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def multiplier_values(basis, coeffs, s, omap=None):
    """Reconstruct the multiplier function at arc lengths s.

    coeffs are the solved multiplier coefficients; when an OrthoMap was
    used in assembly they live in the orthonormal frame and are mapped
    back through r_inv.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if omap is not None:
        coeffs = omap.r_inv @ coeffs
    return basis.eval_matrix(np.asarray(s, dtype=float)) @ coeffs


def gauss_gram(basis, panels=64, q=64, upper=None, r_inv=None):
    """Gram matrix of the (optionally mapped) basis by composite Gauss.

    Integrates over (0, upper) split into `panels` panels with a q-point
    Gauss rule each; upper defaults to the interface length L.
    """
    upper = basis.L if upper is None else upper
    xg, wg = leggauss(q)
    edges = np.linspace(0.0, upper, panels + 1)
    G = np.zeros((basis.n_gamma, basis.n_gamma))
    for a, b in zip(edges[:-1], edges[1:]):
        s = 0.5 * (b - a) * xg + 0.5 * (a + b)
        w = 0.5 * (b - a) * wg
        V = basis.eval_matrix(s)
        if r_inv is not None:
            V = V @ r_inv
        G += V.T @ (V * w[:, None])
    return G
