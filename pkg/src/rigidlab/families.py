"""Seeded generators for the map families driven by experiment configs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .fields import SmoothField, conformal_field, killing_field, random_smooth_field, shear_field
from .manifolds import IsometryElement, Manifold
from .maps import DiscreteMap, constant_map, identity_map, isometry_map, torus_power_map
from .mesh import SurfaceMesh, build_mesh
from .rigidity import perturbed_map

__all__ = ["FamilyMember", "member_rng", "make_field", "make_base", "build_family", "mesh_for"]


@dataclass
class FamilyMember:
    map_id: str
    field: SmoothField | None
    base: IsometryElement
    epsilon: float
    map: DiscreteMap


def member_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def mesh_for(cfg: ExperimentConfig) -> SurfaceMesh:
    return build_mesh(cfg.manifold, cfg.resolution)


def make_field(M: Manifold, kind: str, rng: np.random.Generator, scale: float = 1.0) -> SmoothField:
    if kind == "random":
        return random_smooth_field(M, rng, scale)
    if kind == "conformal":
        a = rng.standard_normal(3)
        return conformal_field(scale * a / np.linalg.norm(a))
    if kind == "shear":
        return shear_field(scale)
    if kind == "killing":
        c = rng.standard_normal(M.killing_dim)
        return killing_field(M, scale * c / np.linalg.norm(c))
    raise ValueError(f"unknown field kind {kind!r}")


def make_base(M: Manifold, kind: str, rng: np.random.Generator) -> IsometryElement:
    return M.random_isometry(rng) if kind == "random" else M.identity()


def build_family(cfg: ExperimentConfig, mesh: SurfaceMesh | None = None) -> list[FamilyMember]:
    """Materialise the configured family; member ``i`` draws from ``rng([seed, i])``."""
    mesh = mesh or mesh_for(cfg)
    M = mesh.manifold
    fam = cfg.family
    eps = float(fam.epsilons[0])
    ident = M.identity()
    if fam.kind == "identity":
        return [FamilyMember("identity", None, ident, 0.0, identity_map(mesh))]
    if fam.kind == "torus_double":
        return [FamilyMember("torus_double", None, ident, 0.0, torus_power_map(mesh, 2, 1))]
    out = []
    for i in range(fam.count):
        rng = member_rng(cfg.seed, i)
        if fam.kind == "constant":
            point = M.random_points(rng, 1)[0]
            out.append(FamilyMember(f"constant_{i:02d}", None, ident, 0.0, constant_map(mesh, point)))
        elif fam.kind == "isometry":
            g = make_base(M, fam.base_isometry, rng)
            out.append(FamilyMember(f"isometry_{i:02d}", None, g, 0.0, isometry_map(mesh, g)))
        else:
            kind = "killing" if fam.kind == "killing" else fam.field
            X = make_field(M, kind, rng, fam.field_scale)
            g = make_base(M, fam.base_isometry, rng)
            out.append(FamilyMember(f"{fam.kind}_{i:02d}", X, g, eps, perturbed_map(mesh, X, eps, g)))
    return out
