"""Quantitative rigidity of nearly isometric maps on the round sphere and the flat torus.

Submodules are imported lazily so that ``rigidlab.cli`` can configure BLAS
threading before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "linalg": ("TangentMap", "det", "cof", "det_and_cof", "hs_inner", "hs_norm", "dist_to_so", "nearest_rotation"),
    "manifolds": ("Sphere", "FlatTorus", "IsometryElement", "get_manifold"),
    "mesh": ("SurfaceMesh", "icosphere", "torus_grid", "build_mesh", "read_off"),
    "maps": (
        "DiscreteMap", "energy_Ep", "sobolev_distance", "dist_to_isom", "metric_deficit", "degree",
        "clamp_gradient", "identity_map", "constant_map", "isometry_map", "map_from_function",
        "torus_power_map", "save_map", "load_map",
    ),
    "piola": ("piola_residual", "almost_harmonic_parts", "tension_field", "piola_record"),
    "heatflow": ("smooth", "step", "initial_state", "dirichlet_energy", "default_dt"),
    "killing": (
        "TangentField", "covariant_gradient", "korn_nullspace", "log_field", "exp_field", "psi_K",
        "minimize_killing", "deficit_linearization_check",
    ),
    "rigidity": ("nearest_isometry", "RigidityReport", "perturbed_map", "scaling_study", "ScalingResult"),
    "config": ("ExperimentConfig", "PipelineConfig", "load_config", "config_from_dict"),
    "fields": ("SmoothField", "killing_field", "conformal_field", "shear_field", "random_smooth_field"),
    "errors": ("RigidlabError",),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        return getattr(import_module(f".{_WHERE[name]}", __name__), name)
    raise AttributeError(f"module 'rigidlab' has no attribute {name!r}")
