import numpy as np
import pytest

from rigidlab.errors import LipschitzBoundViolated
from rigidlab.fields import random_smooth_field
from rigidlab.heatflow import (
    MONITOR_COLUMNS,
    default_dt,
    dirichlet_energy,
    explicit_velocity,
    initial_state,
    smooth,
    step,
)
from rigidlab.maps import constant_map, identity_map, isometry_map, sobolev_distance, torus_power_map
from rigidlab.mesh import build_mesh
from rigidlab.rigidity import perturbed_map


@pytest.fixture(params=[("sphere", 2), ("flat_torus", 12)], ids=["sphere", "flat_torus"])
def mesh(request):
    return build_mesh(*request.param)


def rough_map(mesh, seed=1, eps=0.4):
    M = mesh.manifold
    return perturbed_map(mesh, random_smooth_field(M, np.random.default_rng(seed)), eps, M.identity())


def test_constant_map_is_fixed_point(mesh):
    f = constant_map(mesh)
    g, rep = smooth(f, t1=0.01, dt=1e-3)
    np.testing.assert_allclose(g.images, f.images, atol=1e-14)
    assert rep.energy_final == pytest.approx(0.0, abs=1e-12)


def test_energy_decreases_strictly(mesh):
    state = initial_state(rough_map(mesh))
    energies = [state.dirichlet_energy]
    for _ in range(12):
        state = step(state, 1e-3)
        energies.append(state.dirichlet_energy)
    assert np.all(np.diff(energies) < 0)
    assert state.step_count == 12 and len(state.history) == 13


def test_constraint_residual_stays_at_roundoff(mesh):
    g, rep = smooth(rough_map(mesh), t1=0.02, dt=1e-3, monitor_every=1)
    assert max(row["constraint_residual"] for row in rep.history) < 1e-12
    assert g.constraint_residual() < 1e-12


def test_history_rows(mesh):
    _, rep = smooth(rough_map(mesh), t1=0.01, dt=1e-3, monitor_every=3)
    assert all(tuple(row) == MONITOR_COLUMNS for row in rep.history)
    # initial row, every third step and the last step
    assert [row["step"] for row in rep.history] == [0, 3, 6, 9, 10]
    e = [row["dirichlet_energy"] for row in rep.history]
    assert all(a >= b for a, b in zip(e, e[1:]))
    assert rep.history[0]["w1p_dist_to_initial"] == 0.0


def test_isometry_ratio_is_nan(mesh):
    g = mesh.manifold.random_isometry(np.random.default_rng(2))
    _, rep = smooth(isometry_map(mesh, g), t1=0.005, dt=1e-3)
    assert np.isnan(rep.ratio)
    assert rep.h_norm < 1e-10


def test_isometry_drift_bounded_by_h(mesh):
    # isometries are discrete harmonic only up to O(h)
    f = identity_map(mesh)
    g, _ = smooth(f, t1=0.01, dt=1e-3)
    assert sobolev_distance(g, f) < mesh.h


def test_torus_isometry_is_exact_fixed_point():
    m = build_mesh("flat_torus", 12)
    f = isometry_map(m, m.manifold.random_isometry(np.random.default_rng(3)))
    g, _ = smooth(f, t1=0.01, dt=1e-3)
    assert sobolev_distance(g, f) < 1e-12


def test_smoothing_change_is_linear_in_perturbation():
    # frozen on the torus N=24, seed 17: change / eps = 0.5235
    m = build_mesh("flat_torus", 24)
    M = m.manifold
    X = random_smooth_field(M, np.random.default_rng(17))
    rates = []
    for eps in (1e-1, 3e-2, 1e-2):
        _, rep = smooth(perturbed_map(m, X, eps, M.identity()), t1=0.05, dt=5e-3)
        rates.append(rep.w1p_change / eps)
    assert max(rates) / min(rates) < 1.3
    assert rates[-1] == pytest.approx(0.5235, rel=0.05)


def test_ratio_is_finite_for_perturbations(mesh):
    _, rep = smooth(rough_map(mesh), t1=0.02, dt=1e-3)
    assert np.isfinite(rep.ratio) and rep.ratio > 0
    assert rep.energy_final < rep.energy_initial


@pytest.mark.parametrize("scheme", ["tangent", "heat_project"])
def test_schemes_are_consistent_with_explicit_velocity(scheme):
    m = build_mesh("sphere", 2)
    f = rough_map(m)
    v = explicit_velocity(f)
    errs = []
    for dt in (1e-4, 5e-5):
        g = step(initial_state(f), dt, scheme).map
        errs.append(np.max(np.abs((g.images - f.images) / dt - v)))
    # first order in dt
    assert errs[1] < 0.7 * errs[0]
    assert errs[1] < 0.05 * np.max(np.abs(v))


def test_heat_project_scheme_runs():
    m = build_mesh("sphere", 2)
    g, rep = smooth(rough_map(m), t1=0.01, dt=1e-3, scheme="heat_project")
    assert rep.scheme == "heat_project" and g.constraint_residual() < 1e-12


def test_bad_arguments():
    m = build_mesh("sphere", 1)
    f = identity_map(m)
    with pytest.raises(ValueError):
        smooth(f, t1=0.0)
    with pytest.raises(ValueError):
        step(initial_state(f), -1.0)
    with pytest.raises(ValueError):
        step(initial_state(f), 1e-3, scheme="explicit")


def test_gradient_cap_rejects_steep_input():
    m = build_mesh("flat_torus", 12)
    with pytest.raises(LipschitzBoundViolated):
        smooth(torus_power_map(m, 2, 1), t1=0.01, bound=2.0)


def test_torus_double_is_stationary():
    # (2 theta, phi) is harmonic and linear on each face
    m = build_mesh("flat_torus", 12)
    f = torus_power_map(m, 2, 1)
    g, rep = smooth(f, t1=0.01, dt=1e-3)
    assert sobolev_distance(g, f) < 1e-10
    assert rep.energy_final == pytest.approx(dirichlet_energy(f, m), rel=1e-12)


def test_default_dt_scales_with_h2():
    a, b = build_mesh("flat_torus", 12), build_mesh("flat_torus", 24)
    assert default_dt(a) / default_dt(b) == pytest.approx(4.0)
