import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidlab.errors import FrameMismatch, OutsideInjectivityRadius, ResolutionTooSmall
from rigidlab.fields import conformal_field, random_smooth_field
from rigidlab.killing import (
    TangentField,
    covariant_gradient,
    deficit_linearization_check,
    exp_field,
    face_gradient,
    killing_basis,
    killing_gram,
    killing_l2_norm,
    korn_nullspace,
    korn_operator,
    log_field,
    minimize_killing,
    psi_expansion_ratio,
    psi_K,
)
from rigidlab.manifolds import FlatTorus, Sphere
from rigidlab.maps import DiscreteMap, constant_map, identity_map, isometry_map
from rigidlab.mesh import build_mesh


@pytest.fixture(params=[("sphere", 3), ("flat_torus", 24)], ids=["sphere", "flat_torus"])
def mesh(request):
    return build_mesh(*request.param)


def smooth_tangent(mesh, seed, scale=1.0):
    return TangentField.from_function(mesh, random_smooth_field(mesh.manifold, np.random.default_rng(seed), scale))


def sym_l2(mesh, G):
    S = G + np.swapaxes(G, 1, 2)
    return math.sqrt(math.fsum(mesh.face_areas * np.sum(S**2, axis=(1, 2))))


# -- tangent fields ----------------------------------------------------------------

def test_field_must_be_tangent():
    m = build_mesh("sphere", 1)
    with pytest.raises(FrameMismatch):
        TangentField(m, m.vertices)
    with pytest.raises(ValueError):
        TangentField(m, np.zeros((3, 3)))


def test_field_arithmetic_and_coefficients(mesh):
    X, Y = smooth_tangent(mesh, 1), smooth_tangent(mesh, 2)
    np.testing.assert_allclose((X + 2 * Y - Y).vectors, (X + Y).vectors, atol=1e-14)
    again = TangentField.from_coefficients(mesh, X.coefficients)
    np.testing.assert_allclose(again.vectors, X.vectors, atol=1e-14)
    assert X.inner(X) == pytest.approx(X.l2_norm() ** 2)


# -- gradients -------------------------------------------------------------------

def test_torus_translation_has_zero_gradient():
    m = build_mesh("flat_torus", 12)
    for K in killing_basis(m):
        assert np.max(np.abs(face_gradient(K))) < 1e-12
        assert np.max(np.abs(covariant_gradient(K))) < 1e-12


@pytest.mark.parametrize("grad", [covariant_gradient, face_gradient], ids=["vertex", "face"])
def test_conformal_gradient_converges(grad):
    # grad P_T(a) = -<a, p> Id on the unit sphere
    a = np.array([0.3, -0.5, 0.8])
    errs = []
    for L in (2, 3, 4):
        m = build_mesh("sphere", L)
        X = TangentField.from_function(m, conformal_field(a))
        G = grad(X)
        pts = m.vertices if grad is covariant_gradient else m.centers
        exact = -(pts @ a)[:, None, None] * np.eye(2)
        errs.append(np.max(np.linalg.norm(G - exact, axis=(1, 2))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.05


def test_killing_fields_have_small_symmetric_gradient():
    m = build_mesh("sphere", 4)
    for K in killing_basis(m):
        G = face_gradient(K)
        S = G + np.swapaxes(G, 1, 2)
        W = G - np.swapaxes(G, 1, 2)
        assert np.max(np.linalg.norm(S, axis=(1, 2))) < 0.05
        assert np.max(np.linalg.norm(W, axis=(1, 2))) > 1.0


def test_korn_operator_matches_face_gradient(mesh):
    X = smooth_tangent(mesh, 3)
    G = face_gradient(X)
    S = (korn_operator(mesh) @ X.coefficients.ravel()).reshape(-1, 2, 2)
    np.testing.assert_allclose(S, G + np.swapaxes(G, 1, 2), atol=1e-12)


@pytest.mark.parametrize("kind,levels", [("sphere", (2, 3)), ("flat_torus", (12, 24))])
def test_korn_constant_is_mesh_independent(kind, levels):
    # C = max ||grad X|| / (||sym grad X|| + ||X||) over 50 random fields;
    # frozen: 0.466 (sphere), 0.42 (torus)
    C = []
    for r in levels:
        m = build_mesh(kind, r)
        vals = []
        for i in range(50):
            X = TangentField.from_function(m, random_smooth_field(m.manifold, np.random.default_rng([400, i])))
            G = face_gradient(X)
            g = math.sqrt(math.fsum(m.face_areas * np.sum(G**2, axis=(1, 2))))
            vals.append(g / (sym_l2(m, G) + X.l2_norm()))
        C.append(max(vals))
    assert C[1] / C[0] == pytest.approx(1.0, abs=0.3)
    assert C[1] == pytest.approx({"sphere": 0.4667, "flat_torus": 0.4231}[kind], rel=0.02)


# -- Korn nullspace ----------------------------------------------------------------

def test_nullspace_dimension(mesh):
    res = korn_nullspace(mesh)
    assert res.null_dim == mesh.manifold.killing_dim
    assert len(res.basis) == res.null_dim and len(res.aligned) == mesh.manifold.killing_dim
    assert res.max_angle_deg < 1.0


def test_nullspace_rejects_coarse_mesh():
    with pytest.raises(ResolutionTooSmall):
        korn_nullspace(build_mesh("sphere", 1))


def test_killing_gram_positive_definite(mesh):
    G = killing_gram(mesh)
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(G)) > 0
    c = np.arange(1.0, mesh.manifold.killing_dim + 1)
    assert killing_l2_norm(mesh, c) == pytest.approx(math.sqrt(c @ G @ c))


# -- log / exp and Psi_K ---------------------------------------------------------

def test_log_exp_round_trip(mesh):
    X = smooth_tangent(mesh, 4, scale=0.5)
    Y = log_field(exp_field(X))
    assert np.max(np.abs(Y.vectors - X.vectors)) < 1e-12


def test_log_of_identity_vanishes(mesh):
    assert log_field(identity_map(mesh)).c0_norm() < 1e-14


def test_log_of_small_rotation():
    m = build_mesh("sphere", 3)
    M = m.manifold
    w = np.array([0.2, -0.4, 0.9])
    eps = 1e-3
    X = log_field(isometry_map(m, M.flow(eps * w)))
    lin = eps * m.vertices @ M.killing_matrix(w).T
    G = M.killing_matrix(w)
    np.testing.assert_allclose(G, -G.T, atol=1e-15)
    # the time-one flow of a Killing field moves each point along a geodesic
    assert np.max(np.linalg.norm(X.vectors - lin, axis=1)) < 1e-3 * eps


def test_log_of_antipodal_map_fails():
    m = build_mesh("sphere", 2)
    with pytest.raises(OutsideInjectivityRadius):
        log_field(DiscreteMap(m, -m.vertices), max_dist=np.pi / 2)


def test_log_respects_max_dist():
    m = build_mesh("sphere", 2)
    f = isometry_map(m, m.manifold.flow(np.array([0.0, 0.0, 1.0])))
    with pytest.raises(OutsideInjectivityRadius):
        log_field(f, max_dist=0.5)


def test_psi_trivial_cases(mesh):
    M = mesh.manifold
    X = smooth_tangent(mesh, 5, scale=0.2)
    np.testing.assert_allclose(psi_K(X, np.zeros(M.killing_dim)).vectors, X.vectors, atol=1e-12)
    c = 0.1 * np.ones(M.killing_dim)
    K = TangentField(mesh, mesh.vertices @ M.killing_matrix(c).T)
    zero = TangentField(mesh, np.zeros_like(mesh.vertices))
    Y = psi_K(zero, c)
    np.testing.assert_allclose(exp_field(Y).images, M.flow(c).apply(mesh.vertices), atol=1e-12)
    # the log of the time-one flow agrees with the generator to first order
    assert np.max(np.linalg.norm(Y.vectors - K.vectors, axis=1)) < 0.1 * K.c0_norm()


def test_psi_is_consistent_with_exp(mesh):
    M = mesh.manifold
    X = smooth_tangent(mesh, 6, scale=0.3)
    c = 0.2 * np.random.default_rng(7).standard_normal(M.killing_dim)
    Y = psi_K(X, c)
    np.testing.assert_allclose(exp_field(Y).images, M.flow(c).apply(exp_field(X).images), atol=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.3))
@settings(max_examples=15)
def test_psi_expansion_ratio_bounded(seed, s):
    m = build_mesh("sphere", 2)
    M = m.manifold
    rng = np.random.default_rng(seed)
    X = TangentField.from_function(m, random_smooth_field(M, rng, s))
    c = rng.standard_normal(M.killing_dim)
    c *= s / M.killing_sup_norm(c)
    assert psi_expansion_ratio(X, c) < 2.0


def test_psi_rejects_large_inputs(mesh):
    M = mesh.manifold
    with pytest.raises(OutsideInjectivityRadius):
        psi_K(smooth_tangent(mesh, 8, scale=1.0), np.zeros(M.killing_dim))
    c = np.ones(M.killing_dim)
    c *= M.inj_radius / M.killing_sup_norm(c)
    with pytest.raises(OutsideInjectivityRadius):
        psi_K(smooth_tangent(mesh, 8, scale=0.1), c)


# -- Killing fitting ----------------------------------------------------------------

def test_minimize_zero_field(mesh):
    zero = TangentField(mesh, np.zeros_like(mesh.vertices))
    fit = minimize_killing(zero)
    assert fit.converged and fit.objective < 1e-12 and np.all(fit.coeffs == 0)
    assert fit.orthogonality_ratio == 0.0


def test_minimize_removes_small_killing_field(mesh):
    M = mesh.manifold
    c = 0.05 * np.random.default_rng(9).standard_normal(M.killing_dim)
    X = log_field(isometry_map(mesh, M.flow(c)))
    fit = minimize_killing(X)
    assert fit.converged and fit.iterations <= 10
    assert fit.objective < 1e-8
    np.testing.assert_allclose(M.flow(fit.coeffs).apply(M.flow(c).apply(mesh.vertices)), mesh.vertices, atol=1e-8)


def test_minimize_leaves_orthogonal_field_nearly_unchanged(mesh):
    M = mesh.manifold
    X = smooth_tangent(mesh, 10, scale=0.05)
    basis = killing_basis(mesh)
    coef = np.linalg.solve(killing_gram(mesh), [X.inner(K) for K in basis])
    perp = X - sum((a * K for a, K in zip(coef, basis)), TangentField(mesh, np.zeros_like(mesh.vertices)))
    fit = minimize_killing(perp)
    assert killing_l2_norm(mesh, fit.coeffs) <= 0.1 * perp.l2_norm()
    assert fit.objective <= fit.objective_initial
    assert fit.orthogonality_ratio < 1.0


def test_minimize_rejects_large_field(mesh):
    with pytest.raises(OutsideInjectivityRadius):
        minimize_killing(smooth_tangent(mesh, 11, scale=1.0))


def test_fit_to_dict(mesh):
    d = minimize_killing(smooth_tangent(mesh, 12, scale=0.05)).to_dict()
    assert {"coeffs", "objective", "converged", "orthogonality_ratio"} <= set(d)


# -- deficit linearisation ---------------------------------------------------------

@pytest.mark.parametrize("M", [Sphere(), FlatTorus()], ids=["sphere", "flat_torus"])
def test_deficit_linearization_random(M):
    out = deficit_linearization_check(M, n_trials=3, seed=1)
    assert out["passed"], out["trials"]


def test_deficit_linearization_exact_on_torus():
    # on the flat torus the remainder is eps^2 A^T A, so every ratio is 1/4
    M = FlatTorus()
    p = M.embed(np.array([0.4, 1.1]))
    samples = [(p, np.zeros(2), np.array([[0.0, 1.0], [-1.0, 0.0]])), (p, np.zeros(2), np.eye(2))]
    out = deficit_linearization_check(M, samples=samples)
    for t in out["trials"]:
        np.testing.assert_allclose(t["ratios"], 0.25, rtol=1e-6)


def test_deficit_linearization_scale_validation():
    with pytest.raises(ValueError):
        deficit_linearization_check(Sphere(), scales=(1.0, 0.5))


def test_constant_map_log_field_fails():
    m = build_mesh("sphere", 2)
    with pytest.raises(OutsideInjectivityRadius):
        log_field(constant_map(m), max_dist=np.pi / 2)
