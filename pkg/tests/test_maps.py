import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidlab.errors import ExponentOutOfRange, FaceImageTooSpread, MeshMismatch
from rigidlab.fields import random_smooth_field, shear_field
from rigidlab.linalg import dist_to_so
from rigidlab.maps import (
    MAP_FORMAT,
    DiscreteMap,
    check_exponent,
    clamp_gradient,
    constant_map,
    dist_to_isom,
    energy_Ep,
    identity_map,
    isometry_map,
    load_map,
    map_from_dict,
    map_to_dict,
    metric_deficit,
    save_map,
    sobolev_distance,
    torus_power_map,
)
from rigidlab.mesh import build_mesh
from rigidlab.rigidity import perturbed_map

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(params=[("sphere", 3), ("flat_torus", 24)], ids=["sphere", "flat_torus"])
def mesh(request):
    return build_mesh(*request.param)


def smooth_map(mesh, seed, eps=0.2):
    M = mesh.manifold
    rng = np.random.default_rng(seed)
    return perturbed_map(mesh, random_smooth_field(M, rng), eps, M.random_isometry(rng))


# -- differentials -----------------------------------------------------------

def test_identity_differential(mesh):
    D = identity_map(mesh).differentials
    s = np.linalg.svd(D.matrix, compute_uv=False)
    assert np.max(np.abs(s - 1)) < mesh.h
    if mesh.manifold.kind == "flat_torus":
        assert np.max(np.abs(s - 1)) < 1e-12


def test_constant_map_differential_is_zero(mesh):
    assert np.max(np.abs(constant_map(mesh).differentials.matrix)) < 1e-12


def test_rotation_differential_in_so(mesh):
    g = mesh.manifold.random_isometry(np.random.default_rng(0))
    d = isometry_map(mesh, g).differentials.dist
    assert np.max(d) < 1e-12


def test_differential_tangent_map(mesh):
    f = smooth_map(mesh, 1)
    T = f.differential(5)
    np.testing.assert_allclose(T.matrix, f.differentials.matrix[5])
    assert T.dist_to_so()[0] == pytest.approx(f.differentials.dist[5], abs=1e-12)


def test_ambient_differential_is_tangent(mesh):
    f = smooth_map(mesh, 2)
    D = f.differentials
    for a in range(2):
        assert np.max(np.abs(f.manifold.normal_part(D.image_points, D.ambient[..., a]))) < 1e-12


def test_face_image_too_spread():
    m = build_mesh("sphere", 0)
    y = m.vertices.copy()
    a, b, _ = m.faces[0]
    y[b] = -y[a]
    with pytest.raises(FaceImageTooSpread):
        DiscreteMap(m, y).differentials


def test_images_must_lie_on_manifold():
    m = build_mesh("sphere", 1)
    with pytest.raises(ValueError):
        DiscreteMap(m, 2 * m.vertices)


# -- energy --------------------------------------------------------------------

def test_energy_of_isometries_vanishes(mesh):
    g = mesh.manifold.random_isometry(np.random.default_rng(3))
    assert energy_Ep(isometry_map(mesh, g))[0] < 1e-20
    assert energy_Ep(identity_map(mesh), 3.0)[0] < 1e-20


def test_torus_double_energy():
    m = build_mesh("flat_torus", 24)
    E, e = energy_Ep(torus_power_map(m, 2, 1))
    assert E == pytest.approx(4 * np.pi**2, rel=1e-12)
    assert e == pytest.approx(2 * np.pi, rel=1e-12)
    np.testing.assert_allclose(torus_power_map(m, 2, 1).differentials.matrix, np.broadcast_to(np.diag([2.0, 1]), (m.n_faces, 2, 2)), atol=1e-12)


def test_constant_map_energy():
    m = build_mesh("sphere", 3)
    # dist(0, SO(2)) = sqrt 2 on every face
    assert energy_Ep(constant_map(m))[0] == pytest.approx(2 * m.total_area, rel=1e-12)


def test_energy_rate_stabilises(mesh):
    # e(f_eps) / eps converges; frozen: 3.1184 (sphere), 3.1955 (torus) for seed 9
    M = mesh.manifold
    X = random_smooth_field(M, np.random.default_rng(9))
    r = [energy_Ep(perturbed_map(mesh, X, eps, M.identity()))[1] / eps for eps in (1e-2, 1e-3)]
    assert r[0] / r[1] == pytest.approx(1.0, abs=0.05)
    frozen = {"sphere": 3.1184, "flat_torus": 3.1955}[M.kind]
    assert r[1] == pytest.approx(frozen, rel=1e-3)


def test_energy_rate_matches_symmetric_gradient_on_torus():
    # shear field sin(phi) e_theta: |sym grad X| = |cos phi| / sqrt 2 pointwise
    m = build_mesh("flat_torus", 96)
    X = shear_field(1.0)
    eps = 1e-4
    e = energy_Ep(perturbed_map(m, X, eps, m.manifold.identity()))[1] / eps
    # sqrt(int cos^2(phi) / 2) over the torus = pi
    assert e == pytest.approx(np.pi, rel=5e-3)


@pytest.mark.parametrize("p", [1.1, 10.0, 0.5, float("inf")])
def test_exponent_range(p):
    with pytest.raises(ExponentOutOfRange):
        check_exponent(p)


def test_exponent_error_is_value_error():
    with pytest.raises(ValueError):
        energy_Ep(identity_map(build_mesh("sphere", 1)), 1.0)


# -- distances -------------------------------------------------------------------

def test_distance_to_self_is_zero(mesh):
    f = smooth_map(mesh, 4)
    assert sobolev_distance(f, f) == 0.0


def test_constant_maps_distance(mesh):
    M = mesh.manifold
    a, b = M.random_points(np.random.default_rng(5), 2)
    for p in (2.0, 3.0):
        d = sobolev_distance(constant_map(mesh, a), constant_map(mesh, b), p)
        assert d == pytest.approx(mesh.total_area ** (1 / p) * np.linalg.norm(a - b), rel=1e-12)


@given(seeds, st.floats(1.2, 9.0))
@settings(max_examples=10)
def test_sobolev_distance_is_metric(seed, p):
    m = build_mesh("sphere", 2)
    f, g, h = (smooth_map(m, seed + k) for k in range(3))
    dfg, dgh, dfh = sobolev_distance(f, g, p), sobolev_distance(g, h, p), sobolev_distance(f, h, p)
    assert dfg == pytest.approx(sobolev_distance(g, f, p), abs=1e-12)
    assert dfh <= dfg + dgh + 1e-12
    assert dfg > 0


def test_post_composition_invariance(mesh):
    # ambient orthogonal isometries leave the distance unchanged
    rng = np.random.default_rng(6)
    f, g = smooth_map(mesh, 7), smooth_map(mesh, 8)
    psi = mesh.manifold.random_isometry(rng)
    assert sobolev_distance(f.compose_left(psi), g.compose_left(psi)) == pytest.approx(sobolev_distance(f, g), rel=1e-10)


def test_mesh_mismatch():
    f = identity_map(build_mesh("sphere", 1))
    g = identity_map(build_mesh("sphere", 2))
    with pytest.raises(MeshMismatch):
        sobolev_distance(f, g)


def test_dist_to_isom_rotation(mesh):
    g = mesh.manifold.random_isometry(np.random.default_rng(9))
    d, phi = dist_to_isom(isometry_map(mesh, g))
    assert d < 1e-10
    assert mesh.manifold.group_distance(phi, g) < 1e-6


def test_dist_to_isom_bounded_by_any_isometry(mesh):
    f = smooth_map(mesh, 10)
    d, phi = dist_to_isom(f)
    M = mesh.manifold
    rng = np.random.default_rng(11)
    for _ in range(5):
        other = phi @ M.flow(0.01 * rng.standard_normal(M.killing_dim))
        assert d <= sobolev_distance(f, isometry_map(mesh, other)) + 1e-12


def test_dist_to_isom_constant_map():
    # frozen: 7.08 on the level-3 sphere
    d, _ = dist_to_isom(constant_map(build_mesh("sphere", 3)))
    assert d == pytest.approx(7.08, abs=0.01)


# -- metric deficit --------------------------------------------------------------

def test_deficit_of_isometry_vanishes(mesh):
    g = mesh.manifold.random_isometry(np.random.default_rng(12))
    assert np.max(np.abs(metric_deficit(isometry_map(mesh, g)))) < 1e-12


def test_deficit_torus_double():
    H = metric_deficit(torus_power_map(build_mesh("flat_torus", 12), 2, 1))
    np.testing.assert_allclose(H, np.broadcast_to(np.diag([3.0, 0.0]), H.shape), atol=1e-12)


def test_deficit_symmetric_and_invariant(mesh):
    f = smooth_map(mesh, 13)
    H = metric_deficit(f)
    np.testing.assert_allclose(H, np.swapaxes(H, 1, 2), atol=1e-14)
    psi = mesh.manifold.random_isometry(np.random.default_rng(14))
    assert np.max(np.abs(metric_deficit(f.compose_left(psi)) - H)) < 1e-10


def test_deficit_pointwise_bound(mesh):
    # |F^T F - I| <= (|F| + 1) dist(F, SO) for every face
    f = smooth_map(mesh, 15, eps=0.5)
    D = f.differentials
    lhs = np.linalg.norm(metric_deficit(f), axis=(1, 2))
    assert np.all(lhs <= (D.norm + 1) * D.dist + 1e-12)


# -- clamping ----------------------------------------------------------------

def test_clamp_leaves_bounded_maps_unchanged(mesh):
    f = smooth_map(mesh, 16)
    r = clamp_gradient(f)
    assert r.map is f and not r.capped and len(r.moved_vertices) == 0


def test_clamp_spike_is_local_and_reduces_energy():
    m = build_mesh("sphere", 3)
    M = m.manifold
    y = m.vertices.copy()
    y[17] = M.exp(y[17], M.frame(y[17])[:, 0])
    f = DiscreteMap(m, y)
    r = clamp_gradient(f, 3.0)
    assert not r.capped and r.max_norm <= 3.0
    changed = np.flatnonzero(np.any(r.map.images != f.images, axis=1))
    assert set(changed) <= {17} | set(m.neighbors(17))
    assert energy_Ep(r.map)[0] <= 1.5 * energy_Ep(f)[0]
    # empirical c in d(f, clamped) <= c e(f); frozen at 1.12 for this spike
    assert sobolev_distance(r.map, f) / energy_Ep(f)[1] < 1.5


def test_clamp_bound_must_exceed_sqrt2():
    with pytest.raises(ValueError):
        clamp_gradient(identity_map(build_mesh("sphere", 1)), 1.0)


def test_clamp_cap_flag():
    m = build_mesh("sphere", 3)
    y = m.vertices.copy()
    y[17] = m.manifold.exp(y[17], m.manifold.frame(y[17])[:, 0])
    r = clamp_gradient(DiscreteMap(m, y), 3.0, max_iter=0)
    assert r.capped and r.max_norm > 3.0 and len(r.moved_vertices) == 0


# -- serialisation -----------------------------------------------------------

def test_map_round_trip(tmp_path, mesh):
    f = smooth_map(mesh, 17)
    save_map(f, tmp_path / "f.json")
    data = json.loads((tmp_path / "f.json").read_text())
    assert data["format"] == MAP_FORMAT and data["mesh_hash"] == mesh.mesh_hash
    g = load_map(tmp_path / "f.json", mesh)
    np.testing.assert_allclose(g.images, f.images, atol=1e-14)


def test_map_dict_rejects_other_mesh():
    f = identity_map(build_mesh("sphere", 1))
    with pytest.raises(MeshMismatch):
        map_from_dict(map_to_dict(f), build_mesh("sphere", 2))
    with pytest.raises(ValueError):
        map_from_dict({**map_to_dict(f), "format": "other"}, f.mesh)


@given(seeds)
@settings(max_examples=20)
def test_energy_is_frame_invariant_sum(seed):
    # energy equals the area-weighted sum of per-face SVD distances
    m = build_mesh("sphere", 1)
    f = smooth_map(m, seed, eps=0.3)
    d, _ = dist_to_so(f.differentials.matrix)
    assert energy_Ep(f)[0] == pytest.approx(float(np.sum(m.face_areas * d**2)), rel=1e-12, abs=1e-14)
