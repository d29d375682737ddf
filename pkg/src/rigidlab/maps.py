"""Discrete self-maps of a meshed manifold and their first-order quantities.

A :class:`DiscreteMap` stores one image point per vertex.  Its differential is
constant per face: the corner images are written in the log chart of the
projected image centroid ``y`` and the resulting affine map between the two
face charts is read off,

    df = E_y [z1 - z0, z2 - z0] (face_inv),   z_i = E_y^T log_y(f(v_i)).

Because the charts are geodesic normal coordinates, every isometry has a
differential that is exactly a rotation, and on the flat torus the charts are
unwrapped parameter coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateFit,
    DegenerateProjection,
    ExponentOutOfRange,
    FaceImageTooSpread,
    MeshMismatch,
    OutsideInjectivityRadius,
)
from .linalg import dist_to_so, hs_norm
from .manifolds import IsometryElement
from .mesh import SurfaceMesh

__all__ = [
    "DiscreteMap",
    "FaceDifferentials",
    "MAP_FORMAT",
    "check_exponent",
    "face_differentials",
    "energy_Ep",
    "sobolev_distance",
    "dist_to_isom",
    "metric_deficit",
    "clamp_gradient",
    "ClampResult",
    "degree",
    "identity_map",
    "constant_map",
    "isometry_map",
    "map_from_function",
    "torus_power_map",
    "save_map",
    "load_map",
]

MAP_FORMAT = "rigidlab-map-v1"
P_MIN, P_MAX = 1.1, 10.0


def check_exponent(p: float) -> float:
    p = float(p)
    if not (P_MIN < p < P_MAX):
        raise ExponentOutOfRange(f"exponent p={p} outside ({P_MIN}, {P_MAX})")
    return p


def _fsum(x) -> float:
    # order-independent reduction
    return math.fsum(np.ravel(x))


@dataclass(frozen=True)
class FaceDifferentials:
    """Per-face differentials of a discrete map.

    Attributes
    ----------
    matrix : (F, 2, 2) matrix of df in (source face frame, image frame).
    image_points : (F, d) projected image centroids ``y``.
    image_frames : (F, d, 2) frames at ``y``.
    """

    matrix: np.ndarray
    image_points: np.ndarray
    image_frames: np.ndarray

    @cached_property
    def ambient(self) -> np.ndarray:
        """``d(iota o f)`` as ``(F, d, 2)`` ambient columns."""
        return self.image_frames @ self.matrix

    @cached_property
    def dist(self) -> np.ndarray:
        return dist_to_so(self.matrix)[0]

    @cached_property
    def norm(self) -> np.ndarray:
        return hs_norm(self.matrix)


@dataclass(frozen=True, eq=False)
class DiscreteMap:
    """Per-vertex images of a self-map, ``images[i] = iota(f(v_i))``."""

    mesh: SurfaceMesh
    images: np.ndarray

    def __post_init__(self):
        y = np.array(self.images, dtype=float)
        if y.shape != self.mesh.vertices.shape:
            raise ValueError(f"images must have shape {self.mesh.vertices.shape}, got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("images must be finite")
        if np.max(self.mesh.manifold.constraint_residual(y)) > 1e-12:
            raise ValueError("images do not lie on the manifold")
        y.setflags(write=False)
        object.__setattr__(self, "images", y)

    @classmethod
    def from_ambient(cls, mesh: SurfaceMesh, points) -> "DiscreteMap":
        return cls(mesh, mesh.manifold.project(points))

    @property
    def manifold(self):
        return self.mesh.manifold

    @cached_property
    def differentials(self) -> FaceDifferentials:
        return face_differentials(self)

    def differential(self, face: int):
        """Differential on one face as a :class:`~rigidlab.linalg.TangentMap`."""
        from .linalg import TangentMap

        return TangentMap(self.differentials.matrix[face], f"face:{face}", f"image:{face}")

    def compose_left(self, g: IsometryElement) -> "DiscreteMap":
        """The map ``g o f``."""
        return DiscreteMap(self.mesh, g.apply(self.images))

    def constraint_residual(self) -> float:
        return float(np.max(self.manifold.constraint_residual(self.images)))


def face_differentials(f: DiscreteMap) -> FaceDifferentials:
    mesh, M = f.mesh, f.manifold
    Y = f.images[mesh.faces]
    # pairwise image distances on each face
    spread = np.max(
        np.stack([M.distance(Y[:, i], Y[:, (i + 1) % 3]) for i in range(3)], axis=-1), axis=-1
    )
    bad = spread >= M.inj_radius - 1e-9
    if np.any(bad):
        raise FaceImageTooSpread(
            f"{int(bad.sum())} face images have diameter >= {M.inj_radius:.6g} (first face {int(np.argmax(bad))})"
        )
    try:
        y = M.project(Y.mean(axis=1))
        logs = M.log(y[:, None, :], Y)
    except (DegenerateProjection, OutsideInjectivityRadius) as exc:
        raise FaceImageTooSpread(f"face image has no well-defined centre: {exc}") from exc
    Ey = M.frame(y)
    z = np.einsum("fid,fda->fia", logs, Ey)
    Dz = np.stack([z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]], axis=-1)
    return FaceDifferentials(Dz @ mesh.face_inv, y, Ey)


def energy_Ep(f: DiscreteMap, p: float = 2.0) -> tuple[float, float]:
    """``E_p = sum_faces area * dist(df, SO)^p`` and ``e = E_p^(1/p)``."""
    p = check_exponent(p)
    E = _fsum(f.mesh.face_areas * f.differentials.dist**p)
    return E, E ** (1.0 / p)


def _check_same_mesh(f: DiscreteMap, g: DiscreteMap):
    if f.mesh is not g.mesh and f.mesh.mesh_hash != g.mesh.mesh_hash:
        raise MeshMismatch("maps are defined on different meshes")


def _w1p(mesh: SurfaceMesh, dU, dG, p: float) -> float:
    """``||U - G||_{W^{1,p}}`` from vertex differences and face gradient differences."""
    val = _fsum(mesh.vertex_mass * np.linalg.norm(dU, axis=-1) ** p)
    val += _fsum(mesh.face_areas * hs_norm(dG) ** p)
    return val ** (1.0 / p)


def sobolev_distance(f: DiscreteMap, g: DiscreteMap, p: float = 2.0) -> float:
    """Discrete ``||iota o f - iota o g||_{W^{1,p}}``."""
    p = check_exponent(p)
    _check_same_mesh(f, g)
    return _w1p(f.mesh, f.images - g.images, f.differentials.ambient - g.differentials.ambient, p)


def _isometry_distance(f: DiscreteMap, Q: np.ndarray, p: float) -> float:
    # the discrete differential of an isometry restricted to the mesh is
    # exactly Q E_c on every face
    mesh = f.mesh
    dphi = np.einsum("ij,fja->fia", Q, mesh.frames)
    return _w1p(mesh, f.images - mesh.vertices @ Q.T, f.differentials.ambient - dphi, p)


def dist_to_isom(f: DiscreteMap, p: float = 2.0, seed: IsometryElement | None = None):
    """Distance from ``f`` to the identity component of the isometry group.

    The search is seeded by a mass-weighted isometry fit of the vertex images
    (identity if the fit is degenerate) and refined by L-BFGS over the Killing
    coefficients of ``seed o flow(K)``.

    Returns
    -------
    dist : float
    phi : IsometryElement
    """
    p = check_exponent(p)
    M = f.manifold
    if seed is None:
        try:
            seed = M.isometry_fit(f.mesh.vertices, f.images, f.mesh.vertex_mass)
        except DegenerateFit:
            seed = M.identity()

    def objective(c):
        return _isometry_distance(f, seed.matrix @ M.flow(c).matrix, p) ** p

    # L-BFGS-B stops cleanly at round-off, unlike BFGS whose line search warns there
    res = minimize(objective, np.zeros(M.killing_dim), method="L-BFGS-B", options={"gtol": 1e-14, "ftol": 1e-16})
    c = res.x if res.fun <= objective(np.zeros(M.killing_dim)) else np.zeros(M.killing_dim)
    phi = seed @ M.flow(c)
    return _isometry_distance(f, phi.matrix, p), phi


def metric_deficit(f: DiscreteMap) -> np.ndarray:
    """Per-face pullback metric minus the metric, ``df^T df - Id``, in source frames."""
    D = f.differentials.matrix
    return np.swapaxes(D, -1, -2) @ D - np.eye(2)


def degree(f: DiscreteMap) -> float:
    """``sum area * det(df) / area(M)``."""
    D = f.differentials.matrix
    det = D[:, 0, 0] * D[:, 1, 1] - D[:, 0, 1] * D[:, 1, 0]
    return _fsum(f.mesh.face_areas * det) / f.mesh.total_area


# -- gradient clamping -----------------------------------------------------

@dataclass(frozen=True)
class ClampResult:
    map: DiscreteMap
    capped: bool
    iterations: int
    moved_vertices: np.ndarray
    max_norm: float


def _karcher_mean(M, points, iters=20):
    y = M.project(points.mean(axis=0))
    for _ in range(iters):
        try:
            step = M.log(y[None, :], points).mean(axis=0)
        except OutsideInjectivityRadius:
            break
        y = M.exp(y, step)
        if np.linalg.norm(step) < 1e-14:
            break
    return y


def clamp_gradient(f: DiscreteMap, bound: float | None = None, max_iter: int = 200) -> ClampResult:
    """Contract offending vertex images until every face has ``|df| <= bound``.

    On each face with ``|df| > bound`` the corner whose image lies farthest
    from the Karcher mean of its neighbours' images is moved to that mean.
    Vertices outside violating faces are never touched.  If the cap is hit
    the last iterate is returned with ``capped=True``.
    """
    mesh, M = f.mesh, f.manifold
    bound = 10.0 * np.sqrt(2.0) if bound is None else float(bound)
    if bound <= np.sqrt(2.0):
        raise ValueError(f"clamp bound must exceed sqrt(2), got {bound}")
    images = f.images.copy()
    moved = np.zeros(mesh.n_vertices, dtype=bool)
    current = f
    for it in range(max_iter + 1):
        try:
            norms = current.differentials.norm
            violating = np.flatnonzero(norms > bound)
        except FaceImageTooSpread:
            violating = None
        if violating is not None and len(violating) == 0:
            return ClampResult(current, False, it, np.flatnonzero(moved), float(np.max(norms)))
        if it == max_iter:
            break
        if violating is None:
            # spread faces: treat every face with a large image diameter as violating
            Y = images[mesh.faces]
            spread = np.max(
                np.stack([M.distance(Y[:, i], Y[:, (i + 1) % 3]) for i in range(3)], axis=-1), axis=-1
            )
            violating = np.flatnonzero(spread >= 0.5 * M.inj_radius)
        candidates = np.unique(mesh.faces[violating])
        targets = {}
        offsets = {}
        for v in candidates:
            t = _karcher_mean(M, images[mesh.neighbors(v)])
            targets[v] = t
            offsets[v] = float(M.distance(images[v], t))
        chosen = {max(mesh.faces[fi], key=lambda v: (offsets[v], -v)) for fi in violating}
        for v in sorted(chosen):
            images[v] = targets[v]
            moved[v] = True
        current = DiscreteMap(mesh, images.copy())
    try:
        max_norm = float(np.max(current.differentials.norm))
    except FaceImageTooSpread:
        max_norm = float("inf")
    return ClampResult(current, True, max_iter, np.flatnonzero(moved), max_norm)


# -- map families ----------------------------------------------------------

def identity_map(mesh: SurfaceMesh) -> DiscreteMap:
    return DiscreteMap(mesh, mesh.vertices)


def constant_map(mesh: SurfaceMesh, point=None) -> DiscreteMap:
    point = mesh.vertices[0] if point is None else mesh.manifold.project(point)
    return DiscreteMap(mesh, np.broadcast_to(point, mesh.vertices.shape))


def isometry_map(mesh: SurfaceMesh, g: IsometryElement) -> DiscreteMap:
    return DiscreteMap(mesh, mesh.manifold.project(g.apply(mesh.vertices)))


def map_from_function(mesh: SurfaceMesh, fn: Callable[[np.ndarray], np.ndarray]) -> DiscreteMap:
    """Discrete map from an ambient-to-ambient formula (projected onto the manifold)."""
    return DiscreteMap.from_ambient(mesh, fn(mesh.vertices))


def torus_power_map(mesh: SurfaceMesh, k: int = 2, l: int = 1) -> DiscreteMap:
    """Torus map ``(theta, phi) -> (k theta, l phi)``."""
    M = mesh.manifold
    if M.kind != "flat_torus":
        raise ValueError("torus_power_map needs a flat torus mesh")
    t, s = M.params(mesh.vertices).T
    return DiscreteMap(mesh, M.embed(np.stack([k * t, l * s], axis=-1)))


# -- serialisation ---------------------------------------------------------

def map_to_dict(f: DiscreteMap) -> dict:
    M = f.manifold
    return {
        "format": MAP_FORMAT,
        "manifold": M.kind,
        "resolution": f.mesh.resolution,
        "mesh_hash": f.mesh.mesh_hash,
        "images": M.params(f.images).tolist(),
    }


def map_from_dict(data: dict, mesh: SurfaceMesh) -> DiscreteMap:
    if data.get("format") != MAP_FORMAT:
        raise ValueError(f"unsupported map format {data.get('format')!r}")
    if data.get("mesh_hash") != mesh.mesh_hash:
        raise MeshMismatch("map file refers to a different mesh")
    M = mesh.manifold
    return DiscreteMap(mesh, M.embed(np.asarray(data["images"], dtype=float)))


def save_map(f: DiscreteMap, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(map_to_dict(f), indent=1) + "\n")


def load_map(path, mesh: SurfaceMesh) -> DiscreteMap:
    with open(path) as fh:
        return map_from_dict(json.load(fh), mesh)
