"""Numerical inf-sup constants via the small generalized eigenproblem.

The estimate is the square root of the smallest eigenvalue of

    B X_X^-1 B^T  eta = sigma X_Lambda eta,

with the trace-space surrogate norms: X_X is the L2 interface mass
matrix of the finite element traces (both adjacent subdomains stacked
block-diagonally), X_Lambda the L2 Gram of the multiplier basis, which
is the identity once the basis is orthonormalized.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .multiplier import apply_ortho, assemble_coupling, assemble_trace_mass, gauss_gram

__all__ = ["InfSupProblem", "beta_estimate", "beta_estimate_full", "build_surrogate"]


@dataclass(frozen=True)
class InfSupProblem:
    """Coupling matrix with the norm matrices of the two spaces."""

    B: np.ndarray
    X_X: np.ndarray
    X_Lambda: np.ndarray

    def __post_init__(self):
        n_gamma, n = np.atleast_2d(self.B).shape
        if self.X_X.shape != (n, n) or self.X_Lambda.shape != (n_gamma, n_gamma):
            raise ValueError("norm matrix dimensions do not match B")


def _chol_spd(M, name):
    try:
        return la.cholesky(np.asarray(M), lower=True)
    except la.LinAlgError as exc:
        raise ValueError(f"{name} is not symmetric positive definite") from exc


def beta_estimate(problem):
    """Square root of the minimum eigenvalue of the reduced problem."""
    B = np.atleast_2d(np.asarray(problem.B, dtype=float))
    L = _chol_spd(problem.X_X, "X_X")
    _chol_spd(problem.X_Lambda, "X_Lambda")
    W = la.solve_triangular(L, B.T, lower=True)   # X_X^-1/2 B^T
    S = W.T @ W                                   # B X_X^-1 B^T
    sigma = la.eigh(0.5 * (S + S.T), np.asarray(problem.X_Lambda),
                    eigvals_only=True)
    return float(np.sqrt(max(sigma[0], 0.0)))


def beta_estimate_full(problem):
    """Same constant from the full (n + n_gamma) generalized pencil."""
    B = np.atleast_2d(np.asarray(problem.B, dtype=float))
    n_gamma, n = B.shape
    XX = np.asarray(problem.X_X, dtype=float)
    XL = np.asarray(problem.X_Lambda, dtype=float)
    lhs = np.block([[XX, B.T], [B, np.zeros((n_gamma, n_gamma))]])
    rhs = np.zeros((n + n_gamma, n + n_gamma))
    rhs[n:, n:] = -XL
    vals = la.eig(lhs, rhs, right=False)
    vals = vals[np.isfinite(vals)].real
    vals = vals[vals > -1e-10]
    if vals.size == 0:
        return 0.0
    return float(np.sqrt(max(vals.min(), 0.0)))


def build_surrogate(basis, sides, q=4, ortho_map=None):
    """Trace-space surrogate inf-sup problem for one interface.

    sides : list of (FunctionSpace, InterfacePartition, arc offset), one
        entry per adjacent subdomain.  All trace dofs enter; Dirichlet
        elimination plays no role in the surrogate.
    ortho_map : orthonormalization map; when given, the multiplier norm
        matrix is the identity, otherwise the raw L2 Gram of the basis.
    """
    if not sides:
        raise ValueError("at least one trace space is required")
    blocks_B, blocks_M = [], []
    for space, part, offset in sides:
        cm = assemble_coupling(basis, space, part, q=q, arc_offset=offset)
        if ortho_map is not None:
            cm = apply_ortho(cm, ortho_map)
        mass = assemble_trace_mass(space, part, q=max(q, 3))
        trace = np.unique(mass.tocoo().col)
        blocks_B.append(cm.entries.toarray()[:, trace])
        blocks_M.append(mass.toarray()[np.ix_(trace, trace)])
    B = np.hstack(blocks_B)
    X_X = la.block_diag(*blocks_M)
    if ortho_map is not None:
        X_Lambda = np.eye(basis.n_gamma)
    else:
        X_Lambda = gauss_gram(basis)
    return InfSupProblem(B, X_X, X_Lambda)
