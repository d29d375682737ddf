"""Cofactor field, almost-harmonic decomposition, weak Piola residual and tension."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LipschitzBoundViolated
from .linalg import cof, hs_inner, hs_norm
from .maps import DiscreteMap, check_exponent, degree

__all__ = [
    "cof_field",
    "piola_residual",
    "AlmostHarmonicParts",
    "almost_harmonic_parts",
    "tension_field",
    "TensionReport",
    "piola_record",
    "degree",
]


def cof_field(f: DiscreteMap, ambient: bool = True) -> np.ndarray:
    """Per-face ``Cof dF``.

    The cofactor is taken of the frame matrix of ``df`` and pushed to ambient
    coordinates with the image frame, giving an ``(F, d, 2)`` array.  With
    ``ambient=False`` the ``(F, 2, 2)`` frame matrices are returned.
    """
    D = f.differentials
    C = cof(D.matrix)
    return D.image_frames @ C if ambient else C


def _vertex_gradient(f: DiscreteMap, xi):
    """Per-face chart gradient of the P1 interpolant of vertex data, ``(F, d, 2)``."""
    mesh = f.mesh
    return np.einsum("faj,fjd->fda", mesh.gradient_ops, np.asarray(xi, dtype=float)[mesh.faces])


def piola_residual(f: DiscreteMap, xi) -> float:
    """Quadrature of ``int <Cof dF, d xi> - <A(F)(Cof dF, dF), xi>``.

    ``xi`` is an ambient vector per vertex, interpolated linearly on faces;
    the zeroth-order term uses the face-centroid value.
    """
    mesh, M = f.mesh, f.manifold
    xi = np.asarray(xi, dtype=float)
    D = f.differentials
    C = cof_field(f)
    first = mesh.face_areas * hs_inner(C, _vertex_gradient(f, xi))
    curv = M.trace_form(D.image_points, C, D.ambient)
    second = mesh.face_areas * np.einsum("fd,fd->f", curv, xi[mesh.faces].mean(axis=1))
    return math.fsum(first) - math.fsum(second)


@dataclass(frozen=True)
class AlmostHarmonicParts:
    """Per-face ``h = dF - Cof dF`` and ``h' = -A(F)(h, dF)`` with bound diagnostics."""

    h: np.ndarray
    h_prime: np.ndarray
    dist: np.ndarray
    ratio: np.ndarray
    ratio_max: float
    h_norm: float
    h_prime_norm: float
    p: float


def almost_harmonic_parts(f: DiscreteMap, bound: float | None = None, p: float = 2.0) -> AlmostHarmonicParts:
    """Split the failure of harmonicity into ``h`` and ``h'``.

    Raises
    ------
    LipschitzBoundViolated
        If some face has ``|df| > bound`` (default ``10 sqrt 2``).
    """
    p = check_exponent(p)
    bound = 10.0 * np.sqrt(2.0) if bound is None else float(bound)
    D = f.differentials
    worst = float(np.max(D.norm))
    if worst > bound:
        raise LipschitzBoundViolated(f"max face |df| = {worst:.6g} exceeds {bound:.6g}")
    h = D.ambient - cof_field(f)
    hp = -f.manifold.trace_form(D.image_points, h, D.ambient)
    hn = hs_norm(h)
    hpn = np.linalg.norm(hp, axis=-1)
    dist = D.dist
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 1e-12, (hn + hpn) / np.where(dist > 1e-12, dist, 1.0), np.nan)
    finite = ratio[np.isfinite(ratio)]
    areas = f.mesh.face_areas
    return AlmostHarmonicParts(
        h=h,
        h_prime=hp,
        dist=dist,
        ratio=ratio,
        ratio_max=float(finite.max()) if finite.size else float("nan"),
        h_norm=math.fsum(areas * hn**p) ** (1.0 / p),
        h_prime_norm=math.fsum(areas * hpn**p) ** (1.0 / p),
        p=p,
    )


@dataclass(frozen=True)
class TensionReport:
    """Tension per vertex, its largest normal component and the L2 ratio normal / total."""

    tension: np.ndarray
    max_normal: float
    relative_normal: float


def tension_field(f: DiscreteMap) -> TensionReport:
    """Per-vertex ``-Delta_h F - A(F)(dF, dF)`` and its normal component.

    ``Delta_h`` is the cotangent Laplacian with lumped mass applied to each
    ambient coordinate; the curvature term is averaged from faces to
    vertices with area weights.
    """
    mesh, M = f.mesh, f.manifold
    D = f.differentials
    lap = -mesh.laplacian(f.images)
    curv = mesh.face_to_vertex(M.trace_form(D.image_points, D.ambient, D.ambient))
    tau = lap - curv
    normal = np.linalg.norm(M.normal_part(f.images, tau), axis=-1)
    scale = np.linalg.norm(tau, axis=-1)
    w = mesh.vertex_mass
    # pointwise ratios stall along the seams of subdivided meshes, so the
    # relative measure is an L2 one
    total = math.fsum(w * scale**2)
    rel = math.sqrt(math.fsum(w * normal**2) / total) if total > 0 else 0.0
    return TensionReport(tau, float(np.max(normal)), rel)


def piola_record(f: DiscreteMap, xi, map_id: str, bound: float | None = None, p: float = 2.0) -> dict:
    """JSON-ready summary ``{mesh_level, map_id, residual, h_norm, ratio_max}``."""
    parts = almost_harmonic_parts(f, bound, p)
    return {
        "mesh_level": f.mesh.resolution,
        "map_id": map_id,
        "residual": piola_residual(f, xi),
        "h_norm": parts.h_norm,
        "ratio_max": parts.ratio_max,
    }
