import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from lamestab.errors import InputError
from lamestab.material import (LameParams, admissible_mask, apply_isotropic, check_admissible,
                               polytope_vertices, project_admissible, project_pair, sup_distance)

finite = st.floats(-3.0, 3.0, allow_nan=False)
matrices = st.lists(finite, min_size=9, max_size=9).map(lambda v: np.array(v).reshape(3, 3))


def ddot(A, B):
    return float(np.sum(A * B))


# ---------------------------------------------------------------- tensor algebra

def test_isotropic_identity():
    np.testing.assert_array_equal(apply_isotropic(1.0, 1.0, np.eye(3)), 5.0 * np.eye(3))


def test_isotropic_kills_antisymmetric():
    W = np.array([[0, 1, -2], [-1, 0, 3], [2, -3, 0]], dtype=float)
    np.testing.assert_array_equal(apply_isotropic(0.0, 1.0, W), np.zeros((3, 3)))


def test_isotropic_uniaxial():
    E = np.zeros((3, 3))
    E[0, 0] = 1.0
    np.testing.assert_array_equal(apply_isotropic(2.0, 0.5, E), 2.0 * np.eye(3) + E)


@settings(max_examples=100, deadline=None)
@given(A=matrices, B=matrices, lam=st.floats(-0.5, 2.0), mu=st.floats(0.5, 2.0))
def test_minor_and_major_symmetry(A, B, lam, mu):
    CA = apply_isotropic(lam, mu, A)
    np.testing.assert_allclose(CA, CA.T, rtol=0, atol=1e-12 * (1 + np.abs(CA).max()))
    np.testing.assert_allclose(CA, apply_isotropic(lam, mu, 0.5 * (A + A.T)), rtol=1e-12, atol=1e-12)
    lhs, rhs = ddot(CA, B), ddot(apply_isotropic(lam, mu, B), A)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * (1 + abs(lhs)))


def test_strong_convexity_bound():
    rng = np.random.default_rng(7)
    a0, b0 = 0.5, 1.0
    verts = polytope_vertices(a0, b0)
    # corners are the extreme cases for the quadratic form
    pairs = list(verts) + [(1.0, 1.0), (0.2, 0.6)]
    A = rng.standard_normal((100_000, 3, 3))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    for lam, mu in pairs:
        p = LameParams.from_layers([lam], [mu], a0, b0)
        xi0 = check_admissible(p).xi0
        q = np.einsum("nij,nij->n", apply_isotropic(lam, mu, A), A)
        assert np.all(q >= xi0 * np.einsum("nij,nij->n", A, A) * (1 - 1e-12))


# ---------------------------------------------------------------- admissibility

def test_xi0():
    assert check_admissible(LameParams.from_layers([1.0], [1.0], 0.5, 1.0)).xi0 == 1.0


def test_poisson_ratio_reported():
    rep = check_admissible(LameParams.from_layers([1.0], [1.0]))
    assert rep.passed
    assert rep.nu[1] == 0.25


def test_small_mu_fails():
    rep = check_admissible(LameParams.from_layers([1.0], [0.1], 0.5, 1.0))
    assert not rep.passed
    assert "subdomain 1" in rep.violations[0]


def test_d0_entry_frozen():
    p = LameParams.from_layers([1.0, 2.0], [1.0, 1.5])
    assert (p.lam[0], p.mu[0]) == (0.0, 1.0)
    assert p.vector().tolist() == [1.0, 1.0, 2.0, 1.5]
    assert LameParams.from_vector(p.vector()) == p


def test_poisson_bounds_implied_by_polytope():
    rng = np.random.default_rng(3)
    for a0 in (0.2, 0.5, 0.9, 1.0):
        for b0 in (0.1, 1.0, 2.0):
            lam = rng.uniform(-2 / a0, 2 / a0, 20000)
            mu = rng.uniform(0, 2 / a0, 20000)
            linear = (mu >= a0) & (mu <= 1 / a0) & (lam <= 1 / a0) & (2 * mu + 3 * lam >= b0)
            np.testing.assert_array_equal(admissible_mask(lam, mu, a0, b0), linear)


# ---------------------------------------------------------------- distance

def test_sup_distance_examples():
    p = LameParams.from_layers([1.0, 2.0], [1.0, 1.0])
    q = LameParams.from_layers([1.0, 2.3], [1.0, 1.0])
    assert sup_distance(p, p) == 0.0
    assert sup_distance(p, q) == pytest.approx(0.3, abs=1e-15)
    assert sup_distance(p, q) == sup_distance(q, p)


def test_sup_distance_dim_mismatch():
    with pytest.raises(InputError) as ei:
        sup_distance(LameParams.from_layers([1.0], [1.0]), LameParams.from_layers([1.0, 1.0], [1.0, 1.0]))
    assert ei.value.code == "DIM_MISMATCH"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 2), min_size=6, max_size=6))
def test_sup_distance_metric(v):
    p, q, r = (LameParams.from_vector(v[i:i + 2]) for i in (0, 2, 4))
    assert sup_distance(p, r) <= sup_distance(p, q) + sup_distance(q, r) + 1e-15


# ---------------------------------------------------------------- projection

def _slsqp_projection(pt, a0, b0):
    cons = [{"type": "ineq", "fun": f} for f in (
        lambda z: z[1] - a0, lambda z: 1 / a0 - z[1], lambda z: 1 / a0 - z[0],
        lambda z: 2 * z[1] + 3 * z[0] - b0)]
    res = minimize(lambda z: np.sum((z - pt) ** 2), x0=np.array([1.0, 1.0]), constraints=cons,
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 200})
    return res.x


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(-4, 4), mu=st.floats(-2, 4), a0=st.floats(0.2, 1.0), b0=st.floats(0.1, 2.0))
def test_projection_matches_generic_optimizer(lam, mu, a0, b0):
    got = np.array(project_pair(lam, mu, a0, b0))
    l, m = got
    tol = 1e-12
    assert a0 - tol <= m <= 1 / a0 + tol and l <= 1 / a0 + tol and 2 * m + 3 * l >= b0 - tol
    ref = _slsqp_projection(np.array([lam, mu]), a0, b0)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_projection_idempotent_inside():
    p = LameParams.from_layers([1.0, 0.2], [1.2, 0.8])
    assert project_admissible(p) == p
