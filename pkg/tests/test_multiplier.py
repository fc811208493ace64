import math

import numpy as np
import pytest
import scipy.sparse as sp

from fourierdd.fem import FunctionSpace
from fourierdd.mesh import interface_edge_partition, poisson_mesh_pair
from fourierdd.multiplier import (CouplingMatrix, FourierBasis, OrthoMap,
                                  apply_ortho, assemble_coupling,
                                  assemble_trace_mass, build_ortho_map,
                                  fourier_eval, gauss_gram, multiplier_values)


# ------------------------------------------------------------------- basis

def test_fourier_eval_values():
    b = FourierBasis(1.0, 2)
    assert b.n_gamma == 5
    assert fourier_eval(b, 1, 0.37) == 1.0
    assert fourier_eval(b, 2, 0.5) == pytest.approx(1.0)          # sin(pi/2)
    assert fourier_eval(b, 3, 0.0) == pytest.approx(1.0)          # cos(0)
    assert fourier_eval(b, 4, 0.25) == pytest.approx(1.0)         # sin(2 pi /4)
    assert fourier_eval(b, 2, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_fourier_eval_range_checks():
    b = FourierBasis(2.0, 1)
    with pytest.raises(ValueError):
        fourier_eval(b, 0, 0.5)
    with pytest.raises(ValueError):
        fourier_eval(b, 4, 0.5)
    with pytest.raises(ValueError):
        fourier_eval(b, 1, 2.5)
    with pytest.raises(ValueError):
        FourierBasis(0.0, 1)
    with pytest.raises(ValueError):
        FourierBasis(1.0, -1)


def test_raw_basis_orthogonal_on_doubled_interval():
    b = FourierBasis(0.7, 3)
    G = gauss_gram(b, upper=2 * 0.7)
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-10


# ---------------------------------------------------------------- ortho map

def test_ortho_map_constant_only():
    om = build_ortho_map(FourierBasis(1.0, 0), 200)
    assert om.r_inv.shape == (1, 1)
    assert om.r_inv[0, 0] == pytest.approx(1.0, abs=1e-9)
    om2 = build_ortho_map(FourierBasis(2.0, 0), 200)
    assert om2.r_inv[0, 0] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)


def test_ortho_map_gram_small_basis():
    # oracle: 64-panel composite Gauss integration of the mapped functions
    b = FourierBasis(1.0, 2)
    om = build_ortho_map(b, 2000)
    G = gauss_gram(b, r_inv=om.r_inv)
    # the analytic mapped basis carries the sampling error of the n_s grid
    assert np.abs(G - np.eye(5)).max() < 5e-6


def test_ortho_map_construction_functions_orthonormal():
    # the piecewise-linear functions produced by the construction are
    # orthonormal to machine accuracy even for large bases
    for n_omega in (2, 10, 21):
        b = FourierBasis(1.0, n_omega)
        om = build_ortho_map(b, 2000)
        x = om.samples
        h = np.diff(x)
        main = np.zeros(len(x))
        main[:-1] += h / 3
        main[1:] += h / 3
        M = sp.diags([h / 6, main, h / 6], [-1, 0, 1])
        G = om.ortho_samples.T @ (M @ om.ortho_samples)
        assert np.abs(G - np.eye(b.n_gamma)).max() < 1e-9


def test_ortho_map_triangular_positive():
    om = build_ortho_map(FourierBasis(1.0, 3), 1500)
    r = om.r_inv
    assert np.abs(np.tril(r, -1)).max() == 0.0
    assert np.all(np.diag(r) > 0)
    with pytest.raises(ValueError):
        OrthoMap(-om.r_inv, om.sample_count, om.samples.copy(),
                 om.ortho_samples.copy())


def test_ortho_map_rank_guards():
    with pytest.raises(ValueError, match="exceed"):
        build_ortho_map(FourierBasis(1.0, 2), 5)
    # numerically rank-deficient sampling of a very rich basis
    with pytest.raises(ValueError, match="rank deficient"):
        build_ortho_map(FourierBasis(1.0, 30), 64)


# ----------------------------------------------------------------- coupling

@pytest.fixture(scope="module")
def poisson20():
    m1, _ = poisson_mesh_pair(20, conforming=True)
    V = FunctionSpace(m1, "P2")
    part = interface_edge_partition(m1, "interface:0")
    return m1, V, part


def test_coupling_constant_row_partition_of_unity(poisson20):
    _, V, part = poisson20
    b = FourierBasis(1.0, 2)
    B = assemble_coupling(b, V, part, q=4)
    assert abs(B.entries[0].sum() - 1.0) < 1e-12   # integral of 1 over Gamma


def test_coupling_hat_entry_is_h():
    m1, _ = poisson_mesh_pair(4, conforming=True)
    V = FunctionSpace(m1, "P1")
    part = interface_edge_partition(m1, "interface:0")
    B = assemble_coupling(FourierBasis(1.0, 0), V, part, q=4).entries.toarray()
    # interior interface vertex at (0.5, 0.25): hat integrates to h = 1/4
    dof = int(np.argmin(np.sum((V.dof_coords - [0.5, 0.25]) ** 2, axis=1)))
    assert B[0, dof] == pytest.approx(0.25, abs=1e-14)


def test_coupling_sin_row_total(poisson20):
    _, V, part = poisson20
    b = FourierBasis(1.0, 1)
    B = assemble_coupling(b, V, part, q=4)
    # row 2 against the all-ones trace vector = integral of sin(pi s)
    assert B.entries[1].sum() == pytest.approx(2.0 / math.pi, abs=1e-8)


def test_coupling_rejects_bad_q(poisson20):
    _, V, part = poisson20
    with pytest.raises(ValueError):
        assemble_coupling(FourierBasis(1.0, 1), V, part, q=0)


def test_coupling_quadrature_convergence():
    m1, _ = poisson_mesh_pair(40, conforming=True)
    V = FunctionSpace(m1, "P2")
    part = interface_edge_partition(m1, "interface:0")
    b = FourierBasis(1.0, 6)
    B4 = assemble_coupling(b, V, part, q=4).entries.toarray()
    B8 = assemble_coupling(b, V, part, q=8).entries.toarray()
    assert np.abs(B4 - B8).max() < 1e-8


def test_apply_ortho_identity(poisson20):
    _, V, part = poisson20
    b = FourierBasis(1.0, 1)
    B = assemble_coupling(b, V, part, q=4)
    eye = OrthoMap(np.eye(3), 10, np.linspace(0, 1, 10), np.zeros((10, 3)))
    mapped = apply_ortho(B, eye)
    assert np.abs((mapped.entries - B.entries).toarray()).max() == 0.0
    with pytest.raises(ValueError):
        apply_ortho(B, OrthoMap(np.eye(5), 10, np.linspace(0, 1, 10),
                                np.zeros((10, 5))))


def test_apply_ortho_constant_basis_unit_length(poisson20):
    _, V, part = poisson20
    b = FourierBasis(1.0, 0)
    B = assemble_coupling(b, V, part, q=4)
    om = build_ortho_map(b, 2000)
    mapped = apply_ortho(B, om)
    assert np.abs((mapped.entries - B.entries).toarray()).max() < 1e-9


def test_coupling_matrix_sign_validation():
    with pytest.raises(ValueError):
        CouplingMatrix(sp.csr_matrix((2, 3)), side_sign=2)


# --------------------------------------------------------------- trace mass

def test_trace_mass_unit_edge_p1():
    from fourierdd.mesh import retag_boundary, structured_rect_mesh
    m = structured_rect_mesh((0.0, 1.0, 0.0, 1.0), 1, 1)
    m = retag_boundary(m, "trace", lambda x, y: abs(x) < 1e-12)
    V = FunctionSpace(m, "P1")
    part = interface_edge_partition(m, "trace")
    M = assemble_trace_mass(V, part, q=3).toarray()
    nz = sorted(set(np.nonzero(M)[0]))
    assert np.allclose(M[np.ix_(nz, nz)], np.array([[2, 1], [1, 2]]) / 6.0,
                       atol=1e-14)


def test_multiplier_values_roundtrip():
    b = FourierBasis(1.0, 2)
    om = build_ortho_map(b, 2000)
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=b.n_gamma)
    s = np.linspace(0, 1, 17)
    direct = b.eval_matrix(s) @ (om.r_inv @ coeffs)
    assert np.allclose(multiplier_values(b, coeffs, s, om), direct)
    assert np.allclose(multiplier_values(b, coeffs, s),
                       b.eval_matrix(s) @ coeffs)
