import numpy as np
import pytest

from fourierdd.fem import FunctionSpace
from fourierdd.harness import poisson_infsup
from fourierdd.infsup import (InfSupProblem, beta_estimate, beta_estimate_full,
                              build_surrogate)
from fourierdd.mesh import interface_edge_partition, poisson_mesh_pair
from fourierdd.multiplier import FourierBasis, cached_ortho_map


def test_scalar_closed_form():
    p = InfSupProblem(np.array([[2.0]]), np.array([[4.0]]), np.array([[1.0]]))
    assert beta_estimate(p) == pytest.approx(1.0)


def test_zero_coupling_gives_zero():
    p = InfSupProblem(np.zeros((3, 6)), np.eye(6), np.eye(3))
    assert beta_estimate(p) == 0.0


def test_non_spd_norm_rejected():
    X = np.eye(4)
    X[0, 0] = -1.0
    p = InfSupProblem(np.ones((2, 4)), X, np.eye(2))
    with pytest.raises(ValueError, match="positive definite"):
        beta_estimate(p)


def test_dimension_validation():
    with pytest.raises(ValueError):
        InfSupProblem(np.ones((2, 4)), np.eye(3), np.eye(2))


def _poisson_surrogate(N, n_gamma, ortho, degree="P2"):
    m1, m2 = poisson_mesh_pair(N, conforming=True)
    basis = FourierBasis(1.0, (n_gamma - 1) // 2)
    omap = cached_ortho_map(basis, 2000) if ortho else None
    sides = [(FunctionSpace(m, degree), interface_edge_partition(m, "interface:0"), 0.0)
             for m in (m1, m2)]
    return build_surrogate(basis, sides, ortho_map=omap), basis


def test_surrogate_norm_matrices():
    prob, basis = _poisson_surrogate(8, 5, ortho=True)
    assert np.allclose(prob.X_Lambda, np.eye(basis.n_gamma))
    raw, _ = _poisson_surrogate(8, 1, ortho=False)
    assert raw.X_Lambda[0, 0] == pytest.approx(1.0)   # integral of 1^2 over L=1


def test_surrogate_p1_trace_mass_tridiagonal():
    m1, m2 = poisson_mesh_pair(8, conforming=True)
    basis = FourierBasis(1.0, 0)
    sides = [(FunctionSpace(m1, "P1"), interface_edge_partition(m1, "interface:0"), 0.0)]
    prob = build_surrogate(basis, sides)
    X = prob.X_X
    n = X.shape[0]
    h = 1.0 / 8.0
    expect = np.zeros((n, n))
    for e in range(n - 1):
        expect[e:e + 2, e:e + 2] += h / 6.0 * np.array([[2, 1], [1, 2]])
    assert np.allclose(X, expect, atol=1e-14)


def test_full_and_reduced_formulations_agree():
    prob, _ = _poisson_surrogate(4, 3, ortho=True)
    assert prob.B.shape[1] <= 50
    b_red = beta_estimate(prob)
    b_full = beta_estimate_full(prob)
    assert abs(b_red - b_full) < 1e-10


def test_beta_monotone_in_n_gamma():
    betas = [poisson_infsup(20, ng) for ng in (3, 5, 7, 9, 13, 17, 21)]
    for a, b in zip(betas, betas[1:]):
        assert b <= a + 1e-9


def test_plateau_grows_with_refinement():
    grid = (3, 5, 7, 9, 13, 17, 21, 25, 31)
    widths = []
    for N in (20, 40, 80):
        betas = {ng: poisson_infsup(N, ng) for ng in grid}
        widths.append(max(ng for ng in grid if betas[ng] >= 1.0))
    assert widths[0] <= widths[1] <= widths[2]


def test_surrogate_requires_sides():
    with pytest.raises(ValueError):
        build_surrogate(FourierBasis(1.0, 1), [])
