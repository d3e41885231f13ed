import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bltrecon import fem
from bltrecon.fem import (
    ConsistencyError,
    MediumParams,
    RegionWeights,
    ScalarField,
    SolverError,
    SparseSystem,
    assemble_bilinear_a,
    assemble_boundary_mass,
    assemble_mass,
    assemble_region_mass,
    l2_norm,
    solve_sparse,
)
from bltrecon.levelset import Disk, classify, init_levelset
from bltrecon.mesh import TriMesh, generate_square_mesh

from conftest import dense_mass


def unit_right_triangle():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def test_element_stiffness_analytic():
    m = unit_right_triangle()
    med = MediumParams(np.array([1.0]), np.array([0.0]), A=0.5)
    K = assemble_bilinear_a(m, med).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expected, atol=1e-14)


def test_stiffness_row_sums_vanish(mesh8):
    med = MediumParams.uniform(mesh8, D=1.3, mu_a=0.0)
    K = assemble_bilinear_a(mesh8, med)
    assert np.abs(K @ np.ones(mesh8.vertex_count)).max() < 1e-12


def test_spd_on_16_triangle_mesh(mesh2, medium2):
    # dense eigensolve oracle on the tiny mesh
    K = assemble_bilinear_a(mesh2, medium2).toarray()
    assert np.allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() > 0


def test_coefficient_linearity(mesh8):
    rng = np.random.default_rng(3)
    D1 = rng.uniform(0.5, 2.0, mesh8.element_count)
    D2 = rng.uniform(0.5, 2.0, mesh8.element_count)
    a, b = 0.7, 1.9
    K1 = assemble_bilinear_a(mesh8, MediumParams(D1, np.zeros_like(D1)))
    K2 = assemble_bilinear_a(mesh8, MediumParams(D2, np.zeros_like(D2)))
    K12 = assemble_bilinear_a(mesh8, MediumParams(a * D1 + b * D2, np.zeros_like(D1)))
    assert np.abs((K12 - (a * K1 + b * K2))).max() < 1e-12


def test_medium_invariants():
    with pytest.raises(ValueError):
        MediumParams(np.array([0.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        MediumParams(np.array([1.0]), np.array([-0.1]))
    with pytest.raises(ValueError):
        MediumParams(np.array([1.0]), np.array([1.0]), A=0.0)


# -- boundary mass -------------------------------------------------------------


def test_boundary_mass_single_edge_constant(mesh2):
    B = assemble_boundary_mass(mesh2)
    # constants integrate the edge length: row sums of one edge block sum to L
    e = mesh2.boundary_edges[0]
    L = mesh2.boundary_lengths[0]
    block = B[np.ix_(e, e)].toarray()
    # the two vertices of edge 0 belong to neighboring edges too; isolate by
    # assembling a one-edge mesh instead
    assert block.sum() >= L - 1e-12


def test_boundary_mass_total_perimeter(coarse_mesh):
    B = assemble_boundary_mass(coarse_mesh)
    one = np.ones(coarse_mesh.vertex_count)
    assert one @ (B @ one) == pytest.approx(8.0, abs=1e-12)


def _gauss5_edge_integral(mesh, f):
    """Independent 5-point Gauss-Legendre quadrature of f over the boundary."""
    xg, wg = np.polynomial.legendre.leggauss(5)
    total = 0.0
    for (a, b), L in zip(mesh.boundary_edges, mesh.boundary_lengths):
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        mids = 0.5 * (pa + pb)[None, :] + 0.5 * xg[:, None] * (pb - pa)[None, :]
        total += 0.5 * L * np.dot(wg, f(mids))
    return total


def test_boundary_mass_quadratic_exactness(coarse_mesh):
    # int_Gamma x^2 ds: P1-exact since x is linear along the straight edges
    B = assemble_boundary_mass(coarse_mesh)
    x = coarse_mesh.vertices[:, 0]
    assembled = x @ (B @ x)
    oracle = _gauss5_edge_integral(coarse_mesh, lambda p: p[:, 0] ** 2)
    assert oracle == pytest.approx(16.0 / 3.0, abs=1e-12)
    assert assembled == pytest.approx(oracle, abs=1e-12)


def test_boundary_mass_interior_rows_zero(mesh8):
    B = assemble_boundary_mass(mesh8)
    interior = np.setdiff1d(np.arange(mesh8.vertex_count), mesh8.boundary_vertices)
    assert np.abs(B[interior]).max() == 0


# -- region mass ---------------------------------------------------------------


def test_region_mass_full_equals_mass(mesh8):
    R = assemble_region_mass(mesh8, RegionWeights.full(mesh8))
    M = assemble_mass(mesh8)
    assert np.abs((R - M)).max() < 1e-14


def test_region_mass_empty_is_zero(mesh8):
    R = assemble_region_mass(mesh8, RegionWeights.empty(mesh8))
    assert R.nnz == 0 or np.abs(R.data).max() == 0


def test_region_mass_disk_area(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.4))
    _, w = classify(coarse_mesh, ls)
    R = assemble_region_mass(coarse_mesh, w)
    one = np.ones(coarse_mesh.vertex_count)
    assert one @ (R @ one) == pytest.approx(np.pi * 0.16, abs=2e-3)


def test_region_mass_requires_classification(mesh8):
    frac = np.zeros(mesh8.element_count)
    frac[0] = 0.5
    with pytest.raises(ConsistencyError):
        assemble_region_mass(mesh8, RegionWeights(frac, mesh8))


def test_region_mass_mismatched_classification(coarse_mesh):
    ls = init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.4))
    cls, w = classify(coarse_mesh, ls)
    bad = RegionWeights(np.clip(w.fractions + 0.3, 0, 1), coarse_mesh, cls)
    with pytest.raises(ConsistencyError):
        assemble_region_mass(coarse_mesh, bad)


@settings(max_examples=20, deadline=None)
@given(
    r1=st.floats(0.15, 0.45),
    grow=st.floats(0.01, 0.3),
    cx=st.floats(-0.3, 0.3),
)
def test_region_mass_monotone_under_growth(r1, grow, cx):
    m = generate_square_mesh(12)
    one = np.ones(m.vertex_count)
    _, w1 = classify(m, init_levelset(m, Disk((cx, 0.0), r1)))
    _, w2 = classify(m, init_levelset(m, Disk((cx, 0.0), r1 + grow)))
    t1 = one @ (assemble_region_mass(m, w1) @ one)
    t2 = one @ (assemble_region_mass(m, w2) @ one)
    assert t2 >= t1 - 1e-12


# -- sparse solve ----------------------------------------------------------------


def test_solve_identity():
    from scipy import sparse

    b = np.array([1.0, -2.0, 3.0])
    x = solve_sparse(SparseSystem(sparse.identity(3, format="csr"), b))
    assert np.allclose(x, b, atol=1e-14)


def test_solve_matches_dense_oracle():
    from scipy import sparse

    rng = np.random.default_rng(11)
    Q = rng.standard_normal((4, 4))
    A = Q @ Q.T + 4 * np.eye(4)
    b = rng.standard_normal(4)
    x = solve_sparse(SparseSystem(sparse.csr_matrix(A), b, symmetric=True))
    # dense elimination oracle
    assert np.abs(x - np.linalg.solve(A, b)).max() < 1e-12


def test_solve_singular_raises():
    from scipy import sparse

    A = sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverError):
        solve_sparse(SparseSystem(A, np.array([1.0, 1.0])))


# -- norms -----------------------------------------------------------------------


def test_l2_norm_constant(coarse_mesh):
    f = ScalarField(np.ones(coarse_mesh.vertex_count), coarse_mesh)
    assert l2_norm(f) == pytest.approx(2.0, abs=1e-12)


def test_l2_norm_zero(mesh8):
    f = ScalarField(np.zeros(mesh8.vertex_count), mesh8)
    assert l2_norm(f) == 0.0


def test_l2_norm_region_disk(coarse_mesh):
    _, w = classify(coarse_mesh, init_levelset(coarse_mesh, Disk((0.0, 0.0), 0.2)))
    f = ScalarField(np.ones(coarse_mesh.vertex_count), coarse_mesh)
    assert l2_norm(f, w) == pytest.approx(np.sqrt(np.pi * 0.04), abs=1e-2)


def test_mass_matches_dense_oracle(mesh2):
    M = assemble_mass(mesh2).toarray()
    assert np.abs(M - dense_mass(mesh2)).max() < 1e-14


def test_manufactured_convergence_one_halving():
    from bltrecon.experiments import manufactured_convergence

    errs = manufactured_convergence([16, 32])
    ratio = errs[0] / errs[1]
    assert 3.6 <= ratio <= 4.4
