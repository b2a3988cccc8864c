import numpy as np
import pytest
import scipy.linalg as sla

from lamestab.boundary import (DtnMatrix, assemble_dtn, assemble_h_half_gram, build_sigma_basis,
                               solve_columns, star_norm)
from lamestab.errors import InputError
from lamestab.forward import assemble_stiffness, energy
from lamestab.geometry import build_layered_partition, generate_mesh
from lamestab.material import LameParams

from conftest import bench_truth

Q = LameParams.from_layers([0.5, 1.5], [1.3, 0.9])


@pytest.fixture(scope="module")
def dtn6(bench6):
    mesh, basis, gram, cache = bench6
    return assemble_dtn(mesh, bench_truth(), basis, gram, cache=cache, keep_solutions=True)


# ---------------------------------------------------------------- basis

def test_basis_count(cube4):
    basis = build_sigma_basis(cube4)
    assert basis.m == 27
    np.testing.assert_allclose(cube4.vertices[basis.vertices, 2], 1.0)


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_basis_grid_scaling(cube_domain, n):
    assert build_sigma_basis(generate_mesh(cube_domain, n)).m == 3 * (n - 1) ** 2


def test_basis_vertices_strictly_inside_patch():
    dom = build_layered_partition(sigma=((0.25, 0.75), (0.0, 0.5)))
    mesh = generate_mesh(dom, 8)
    basis = build_sigma_basis(mesh)
    x, y = mesh.vertices[basis.vertices, :2].T
    assert basis.m == 3 * 3 * 3
    assert np.all((x > 0.25) & (x < 0.75) & (y > 0) & (y < 0.5))


def test_empty_basis():
    dom = build_layered_partition(sigma=((0.3, 0.45), (0.0, 1.0)))
    with pytest.raises(InputError) as ei:
        build_sigma_basis(generate_mesh(dom, 2))
    assert ei.value.code == "EMPTY_BASIS"


# ---------------------------------------------------------------- H^1/2 Gram

def test_gram_spd_and_oracle(bench6):
    mesh, basis, gram, _ = bench6
    G, (M, S, theta, V) = assemble_h_half_gram(mesh, basis, return_pencil=True)
    np.testing.assert_array_equal(G, gram)
    np.testing.assert_array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() > 0
    # independent route: M^1/2 (I + M^-1/2 S M^-1/2)^1/2 M^1/2
    Mh = sla.sqrtm(M).real
    Mhi = np.linalg.inv(Mh)
    ref = Mh @ sla.sqrtm(np.eye(len(M)) + Mhi @ S @ Mhi).real @ Mh
    np.testing.assert_allclose(G, ref, atol=1e-10 * np.abs(ref).max())


def test_gram_eigenvector_consistency(bench6):
    mesh, basis, _, _ = bench6
    G, (M, S, theta, V) = assemble_h_half_gram(mesh, basis, return_pencil=True)
    # with V^T M V = I the pencil coefficients of v_i are e_i
    for i in (0, 5, len(theta) // 2, len(theta) - 1):
        v = V[:, i]
        assert v @ M @ v == pytest.approx(1.0, rel=1e-10)
        assert v @ G @ v == pytest.approx(np.sqrt(1 + theta[i]), rel=1e-8)


def test_gram_constant_vector_bounds(bench6):
    # hat functions vanish on the rim, so S c != 0; Jensen brackets the norm
    mesh, basis, _, _ = bench6
    G, (M, S, _, _) = assemble_h_half_gram(mesh, basis, return_pencil=True)
    for comp in range(3):
        c = np.zeros(basis.m)
        c[comp::3] = 1.0
        a, b, g = c @ M @ c, c @ S @ c, c @ G @ c
        assert b > 0
        assert a <= g <= np.sqrt(a * (a + b)) * (1 + 1e-12)


def test_surface_matrices_quadrature(cube_domain):
    # f = sin(pi x) sin(pi y) vanishes on the rim: int f^2 = 1/4, int |grad f|^2 = pi^2 / 2
    mesh = generate_mesh(cube_domain, 16)
    basis = build_sigma_basis(mesh)
    _, (M, S, _, _) = assemble_h_half_gram(mesh, basis, return_pencil=True)
    x, y = mesh.vertices[basis.vertices, :2].T
    f = np.zeros(basis.m)
    f[0::3] = np.sin(np.pi * x) * np.sin(np.pi * y)
    assert f @ M @ f == pytest.approx(0.25, rel=0.02)
    assert f @ S @ f == pytest.approx(np.pi ** 2 / 2, rel=0.02)


def test_gram_r0_scaling(bench6):
    mesh, basis, _, _ = bench6
    _, (M1, S1, _, _) = assemble_h_half_gram(mesh, basis, 1.0, return_pencil=True)
    _, (M2, S2, _, _) = assemble_h_half_gram(mesh, basis, 2.0, return_pencil=True)
    np.testing.assert_allclose(M2, M1 / 4, rtol=1e-15)
    np.testing.assert_array_equal(S2, S1)


# ---------------------------------------------------------------- DtN

def test_dtn_symmetric_psd(dtn6):
    assert dtn6.asymmetry() < 1e-8
    w = np.linalg.eigvalsh(0.5 * (dtn6.L + dtn6.L.T))
    assert w.min() > -1e-10 * w.max()


def test_dtn_deterministic(bench6, dtn6):
    mesh, basis, gram, _ = bench6
    again = assemble_dtn(mesh, bench_truth(), basis, gram)
    assert np.array_equal(again.L, dtn6.L)


def test_dtn_linear_in_moduli(bench6):
    mesh, basis, gram, cache = bench6
    a = assemble_dtn(mesh, LameParams.from_layers([0.0, 0.0], [0.8, 1.3]), basis, gram, cache=cache)
    b = assemble_dtn(mesh, LameParams.from_layers([0.0, 0.0], [1.6, 2.6]), basis, gram, cache=cache)
    np.testing.assert_array_equal(b.L, 2.0 * a.L)


def test_discrete_duality_lifting_independent(bench6, dtn6, rng):
    mesh, basis, _, cache = bench6
    sys = assemble_stiffness(mesh, bench_truth(), cache=cache)
    psi, phi = rng.standard_normal((2, basis.m))
    u = dtn6.solutions @ psi
    K = sys.K
    ref = phi @ dtn6.L @ psi
    for _ in range(3):
        v = np.zeros(mesh.n_dofs)
        v[basis.dofs] = phi
        v[sys.interior_dofs] = rng.standard_normal(sys.interior_dofs.size)
        assert v @ (K @ u) == pytest.approx(ref, abs=1e-8 * abs(ref) + 1e-9 * np.abs(dtn6.L).max())
    # harmonic lifting: the bilinear form is the DtN entry itself
    w = dtn6.solutions @ phi
    assert w @ (K @ u) == pytest.approx(ref, rel=1e-8)
    e = energy(u, mesh, bench_truth(), cache=cache)
    assert e == pytest.approx(psi @ dtn6.L @ psi, rel=1e-8)


def test_dtn_persistence(dtn6, tmp_path):
    dtn6.save(tmp_path / "dtn")
    back = DtnMatrix.load(tmp_path / "dtn.bin")
    assert np.array_equal(back.L, dtn6.L)
    assert np.array_equal(back.gram_half, dtn6.gram_half)
    assert np.array_equal(back.basis_dofs, dtn6.basis_dofs)
    assert back.mesh_hash == dtn6.mesh_hash and back.r0 == dtn6.r0
    raw = (tmp_path / "dtn.bin").read_bytes()
    assert len(raw) == 2 * 8 * dtn6.m ** 2
    np.testing.assert_array_equal(np.frombuffer(raw[:8 * dtn6.m], "<f8"), dtn6.L[0])


def test_dtn_load_rejects_bad_files(dtn6, tmp_path):
    dtn6.save(tmp_path / "dtn")
    (tmp_path / "dtn.bin").write_bytes((tmp_path / "dtn.bin").read_bytes()[:-8])
    with pytest.raises(InputError) as ei:
        DtnMatrix.load(tmp_path / "dtn")
    assert ei.value.code == "BAD_DTN_FILE"
    skew = DtnMatrix(dtn6.L + np.triu(np.ones_like(dtn6.L)), dtn6.gram_half, 1.0, dtn6.basis_dofs)
    skew.save(tmp_path / "skew")
    with pytest.raises(InputError):
        DtnMatrix.load(tmp_path / "skew")


# ---------------------------------------------------------------- star norm

def test_star_norm_examples(dtn6):
    G = dtn6.gram_half
    assert star_norm(dtn6, dtn6) == 0.0
    assert star_norm(dtn6.L + G, dtn6.L, G) == pytest.approx(1.0, rel=1e-10)
    Z = np.zeros_like(G)
    assert star_norm(3.0 * dtn6.L, Z, G) == pytest.approx(3.0 * star_norm(dtn6.L, Z, G), rel=1e-12)


def test_star_norm_generalized_eigen_oracle(bench6, dtn6):
    mesh, basis, gram, cache = bench6
    other = assemble_dtn(mesh, Q, basis, gram, cache=cache)
    D = dtn6.L - other.L
    D = 0.5 * (D + D.T)
    ref = np.abs(sla.eigh(D, gram, eigvals_only=True)).max()
    assert star_norm(dtn6.L, dtn6.L - D, gram) == pytest.approx(ref, rel=1e-9)


def test_star_norm_is_a_norm(dtn6, rng):
    G = dtn6.gram_half
    m = G.shape[0]
    Z = np.zeros_like(G)
    for _ in range(20):
        A, B = rng.standard_normal((2, m, m))
        c = rng.uniform(-5, 5)
        na, nb = star_norm(A, Z, G), star_norm(B, Z, G)
        assert star_norm(A + B, Z, G) <= (na + nb) * (1 + 1e-12)
        assert star_norm(c * A, Z, G) == pytest.approx(abs(c) * na, rel=1e-12)


def test_star_norm_gram_mismatch(dtn6):
    with pytest.raises(InputError) as ei:
        star_norm(dtn6.L, dtn6.L, np.eye(3))
    assert ei.value.code == "GRAM_MISMATCH"
    other = DtnMatrix(dtn6.L, 2 * dtn6.gram_half, 1.0, dtn6.basis_dofs)
    with pytest.raises(InputError):
        star_norm(dtn6, other)


def test_star_norm_mesh_refinement_stability(bench_domain):
    vals = []
    for n in (4, 8):
        mesh = generate_mesh(bench_domain, n)
        basis = build_sigma_basis(mesh)
        G = assemble_h_half_gram(mesh, basis)
        vals.append(star_norm(assemble_dtn(mesh, bench_truth(), basis, G), assemble_dtn(mesh, Q, basis, G)))
    assert abs(vals[1] - vals[0]) < 0.2 * vals[0]


def test_solve_columns_subset(bench6, dtn6):
    mesh, basis, _, cache = bench6
    sys = assemble_stiffness(mesh, bench_truth(), cache=cache)
    U = solve_columns(sys, basis, [3, 10])
    np.testing.assert_allclose(U, dtn6.solutions[:, [3, 10]], atol=1e-9)
