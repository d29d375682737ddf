"""Tangent fields, the Korn operator X -> grad X + grad X^T and Killing-field fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateStar, OutsideInjectivityRadius, ResolutionTooSmall, SolverFailure
from .maps import DiscreteMap, metric_deficit
from .manifolds import Manifold
from .mesh import SurfaceMesh

__all__ = [
    "TangentField",
    "covariant_gradient",
    "face_gradient",
    "korn_operator",
    "NullspaceResult",
    "korn_nullspace",
    "killing_basis",
    "killing_gram",
    "killing_l2_norm",
    "log_field",
    "exp_field",
    "psi_K",
    "psi_expansion_ratio",
    "KillingFit",
    "minimize_killing",
    "deficit_linearization_check",
]


@dataclass(frozen=True, eq=False)
class TangentField:
    """One ambient tangent vector per mesh vertex."""

    mesh: SurfaceMesh
    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.shape != self.mesh.vertices.shape:
            raise ValueError(f"vectors must have shape {self.mesh.vertices.shape}, got {v.shape}")
        self.mesh.manifold.check_tangent(self.mesh.vertices, v, "field")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def from_function(cls, mesh: SurfaceMesh, fn) -> "TangentField":
        return cls(mesh, mesh.manifold.tangent_part(mesh.vertices, fn(mesh.vertices)))

    @classmethod
    def from_coefficients(cls, mesh: SurfaceMesh, alpha) -> "TangentField":
        """Field with frame coefficients ``alpha`` of shape ``(V, 2)``."""
        return cls(mesh, np.einsum("vda,va->vd", mesh.vertex_frames, np.asarray(alpha).reshape(-1, 2)))

    @cached_property
    def coefficients(self) -> np.ndarray:
        return np.einsum("vda,vd->va", self.mesh.vertex_frames, self.vectors)

    def __add__(self, other: "TangentField") -> "TangentField":
        return TangentField(self.mesh, self.vectors + other.vectors)

    def __sub__(self, other: "TangentField") -> "TangentField":
        return TangentField(self.mesh, self.vectors - other.vectors)

    def __mul__(self, s: float) -> "TangentField":
        return TangentField(self.mesh, s * self.vectors)

    __rmul__ = __mul__

    def c0_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.vectors, axis=-1)))

    def inner(self, other: "TangentField") -> float:
        return math.fsum(self.mesh.vertex_mass * np.einsum("vd,vd->v", self.vectors, other.vectors))

    def l2_norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))


# -- gradients -------------------------------------------------------------

def covariant_gradient(X: TangentField) -> np.ndarray:
    """Per-vertex ``grad X`` in the vertex frame, shape ``(V, 2, 2)``.

    Entry ``[a, b]`` is the derivative of component ``a`` in direction
    ``b``.  It is the least-squares fit over the vertex star of
    ``P_{q->p} X(q) - X(p) = grad X(p) log_p(q)``.

    Raises
    ------
    DegenerateStar
        If a vertex star does not span its tangent plane.
    """
    mesh, M = X.mesh, X.mesh.manifold
    e = mesh.edges
    src = np.r_[e[:, 0], e[:, 1]]
    dst = np.r_[e[:, 1], e[:, 0]]
    P, Q = mesh.vertices[src], mesh.vertices[dst]
    E = mesh.vertex_frames[src]
    a = np.einsum("nda,nd->na", E, M.log(P, Q))
    b = np.einsum("nda,nd->na", E, M.transport(Q, P, X.vectors[dst]) - X.vectors[src])
    AtA = np.zeros((mesh.n_vertices, 2, 2))
    AtB = np.zeros((mesh.n_vertices, 2, 2))
    np.add.at(AtA, src, a[:, :, None] * a[:, None, :])
    np.add.at(AtB, src, a[:, :, None] * b[:, None, :])
    det = AtA[:, 0, 0] * AtA[:, 1, 1] - AtA[:, 0, 1] ** 2
    scale = np.trace(AtA, axis1=1, axis2=2) ** 2
    if np.any(det <= 1e-12 * scale):
        raise DegenerateStar(f"vertex {int(np.argmin(det / scale))} has a degenerate star")
    return np.swapaxes(np.linalg.solve(AtA, AtB), -1, -2)


def face_gradient(X: TangentField) -> np.ndarray:
    """Per-face ``grad X`` of the P1 interpolant, in the face chart frame, ``(F, 2, 2)``.

    Corner vectors are transported to the face centre before differencing.
    """
    mesh = X.mesh
    R = mesh.corner_transport
    z = np.einsum("fiab,fib->fia", R, X.coefficients[mesh.faces])
    return np.einsum("fia,fbi->fab", z, mesh.gradient_ops)


def korn_operator(mesh: SurfaceMesh) -> sp.csr_matrix:
    """Sparse map from frame coefficients ``(2V,)`` to per-face ``grad X + grad X^T`` ``(4F,)``."""
    R = mesh.corner_transport
    G = mesh.gradient_ops  # (F, 2, 3): [direction, corner]
    F = mesh.n_faces
    # S[a, b] = sum_i sum_c (R_i[a, c] G[b, i] + R_i[b, c] G[a, i]) alpha_{v_i, c}
    coef = np.einsum("fiac,fbi->fabic", R, G)
    coef = coef + np.swapaxes(coef, 1, 2)
    rows = np.broadcast_to((np.arange(F)[:, None, None] * 4 + np.arange(4).reshape(2, 2)[None])[..., None, None], coef.shape)
    cols = np.broadcast_to(2 * mesh.faces[:, None, None, :, None] + np.arange(2), coef.shape)
    return sp.csr_matrix((coef.ravel(), (rows.ravel(), cols.ravel())), shape=(4 * F, 2 * mesh.n_vertices))


# -- Killing fields --------------------------------------------------------

def killing_basis(mesh: SurfaceMesh) -> list[TangentField]:
    """Closed-form Killing generators sampled at the vertices."""
    M = mesh.manifold
    return [TangentField(mesh, mesh.vertices @ G.T) for G in M.killing_generators()]


def killing_gram(mesh: SurfaceMesh) -> np.ndarray:
    basis = killing_basis(mesh)
    return np.array([[a.inner(b) for b in basis] for a in basis])


def killing_l2_norm(mesh: SurfaceMesh, coeffs) -> float:
    c = np.asarray(coeffs, dtype=float)
    return math.sqrt(max(float(c @ killing_gram(mesh) @ c), 0.0))


@dataclass(frozen=True)
class NullspaceResult:
    eigenvalues: np.ndarray
    null_dim: int
    basis: list
    aligned: list
    max_angle_deg: float


def _min_resolution(M: Manifold) -> int:
    return 2 if M.kind == "sphere" else 6


def korn_nullspace(mesh: SurfaceMesh, n_eigs: int = 6, gap: float = 0.01) -> NullspaceResult:
    """Smallest eigenpairs of ``int |grad X + grad X^T|^2`` relative to ``int |X|^2``.

    ``null_dim`` is the largest ``k`` with ``lambda_k < gap * lambda_{k+1}``.
    The discrete null vectors are aligned with the closed-form Killing basis
    by least squares, and the largest principal angle between the two
    subspaces is reported in degrees.
    """
    M = mesh.manifold
    if mesh.resolution is not None and mesh.resolution < _min_resolution(M):
        raise ResolutionTooSmall(f"nullspace needs resolution >= {_min_resolution(M)}")
    L = korn_operator(mesh)
    area4 = np.repeat(mesh.face_areas, 4)
    Q = (L.T @ sp.diags(area4) @ L).tocsc()
    b = np.repeat(mesh.vertex_mass, 2)
    n = Q.shape[0]
    try:
        if n <= 4000:
            w, V = sla.eigh(Q.toarray(), np.diag(b), subset_by_index=[0, n_eigs - 1])
        else:
            shift = -1e-3 * float(Q.diagonal().mean() / b.mean())
            w, V = spla.eigsh(Q, k=n_eigs, M=sp.diags(b).tocsc(), sigma=shift, which="LM")
            order = np.argsort(w)
            w, V = w[order], V[:, order]
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise SolverFailure(f"eigensolver failed: {exc}") from exc
    lam = np.maximum(w, 0.0)
    null_dim = 0
    for k in range(1, n_eigs):
        if lam[k - 1] < gap * lam[k]:
            null_dim = k
    basis = [TangentField.from_coefficients(mesh, V[:, j]) for j in range(null_dim)]
    closed = np.stack([k.coefficients.ravel() for k in killing_basis(mesh)], axis=1)
    sq = np.sqrt(b)[:, None]
    if null_dim:
        disc = V[:, :null_dim]
        angle = float(np.degrees(np.max(sla.subspace_angles(sq * disc, sq * closed))))
        coef, *_ = np.linalg.lstsq(sq * disc, sq * closed, rcond=None)
        aligned = [TangentField.from_coefficients(mesh, disc @ coef[:, j]) for j in range(closed.shape[1])]
    else:
        angle, aligned = 90.0, []
    return NullspaceResult(w, null_dim, basis, aligned, angle)


# -- map <-> field -----------------------------------------------------------

def log_field(f: DiscreteMap, max_dist: float | None = None) -> TangentField:
    """``X(p) = log_p f(p)``; requires every displacement below ``max_dist`` (default inj)."""
    mesh = f.mesh
    return TangentField(mesh, mesh.manifold.log(mesh.vertices, f.images, max_dist=max_dist))


def exp_field(X: TangentField) -> DiscreteMap:
    mesh = X.mesh
    return DiscreteMap(mesh, mesh.manifold.exp(mesh.vertices, X.vectors))


def _psi_vectors(X: TangentField, coeffs) -> np.ndarray:
    mesh, M = X.mesh, X.mesh.manifold
    moved = M.flow(coeffs).apply(M.exp(mesh.vertices, X.vectors))
    return M.log(mesh.vertices, moved)


def psi_K(X: TangentField, coeffs) -> TangentField:
    """Field ``Y`` with ``exp Y = phi_K o exp X``, where ``phi_K`` is the time-one Killing flow."""
    M = X.mesh.manifold
    limit = M.inj_radius / 4
    if X.c0_norm() > limit:
        raise OutsideInjectivityRadius(f"|X|_C0 = {X.c0_norm():.4g} exceeds inj/4")
    if M.killing_sup_norm(coeffs) > limit:
        raise OutsideInjectivityRadius(f"|K|_C0 = {M.killing_sup_norm(coeffs):.4g} exceeds inj/4")
    return TangentField(X.mesh, _psi_vectors(X, coeffs))


def psi_expansion_ratio(X: TangentField, coeffs) -> float:
    """``max |Y - (K + X)| / (|K| (|X| + |K|))`` with C0 norms."""
    mesh = X.mesh
    Y = psi_K(X, coeffs)
    K = mesh.vertices @ mesh.manifold.killing_matrix(coeffs).T
    k = mesh.manifold.killing_sup_norm(coeffs)
    if k == 0:
        return 0.0
    err = np.max(np.linalg.norm(Y.vectors - K - X.vectors, axis=-1))
    return float(err / (k * (X.c0_norm() + k)))


@dataclass(frozen=True)
class KillingFit:
    """Outcome of minimising ``I_X(K) = ||Psi_K X||_{L2}``."""

    coeffs: np.ndarray
    field: TangentField
    objective: float
    objective_initial: float
    iterations: int
    converged: bool
    line_search_failed: bool
    radius: float
    inner_products: np.ndarray
    orthogonality_ratio: float

    def to_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "objective": self.objective,
            "objective_initial": self.objective_initial,
            "iterations": self.iterations,
            "converged": self.converged,
            "line_search_failed": self.line_search_failed,
            "radius": self.radius,
            "inner_products": self.inner_products.tolist(),
            "orthogonality_ratio": self.orthogonality_ratio,
        }


def minimize_killing(
    X: TangentField,
    delta1: float | None = None,
    radius_factor: float = 5.0,
    max_iter: int = 50,
    tol: float = 1e-10,
    multi_start: bool = False,
    fd_step: float = 1e-6,
) -> KillingFit:
    """Gauss-Newton minimisation of ``I_X`` over Killing coefficients.

    Starts from ``K = 0`` (and from the scaled basis directions when
    ``multi_start``), uses central-difference Jacobians with backtracking,
    and keeps ``||K||_{L2} <= radius_factor * ||X||_{L2}`` by radial
    projection.
    """
    mesh, M = X.mesh, X.mesh.manifold
    delta1 = M.inj_radius / 8 if delta1 is None else float(delta1)
    if X.c0_norm() > delta1:
        raise OutsideInjectivityRadius(f"|X|_C0 = {X.c0_norm():.4g} exceeds delta1 = {delta1:.4g}")
    gram = killing_gram(mesh)
    k = M.killing_dim
    sqrt_mass = np.sqrt(mesh.vertex_mass)[:, None]
    radius = radius_factor * X.l2_norm()
    limit = M.inj_radius / 4

    def residual(c):
        if M.killing_sup_norm(c) > limit:
            return None
        return (sqrt_mass * _psi_vectors(X, c)).ravel()

    def cost(c):
        r = residual(c)
        return math.inf if r is None else math.fsum(r * r)

    def project(c):
        n = math.sqrt(max(float(c @ gram @ c), 0.0))
        return c if n <= radius else c * (radius / n)

    def run(c0):
        c = project(np.asarray(c0, dtype=float))
        r = residual(c)
        if r is None:
            return c, math.inf, 0, False, True
        val = math.fsum(r * r)
        failed = False
        it = 0
        converged = False
        for it in range(1, max_iter + 1):
            J = np.empty((len(r), k))
            for j in range(k):
                e = np.zeros(k)
                e[j] = fd_step
                rp, rm = residual(c + e), residual(c - e)
                if rp is None or rm is None:
                    return c, val, it, False, True
                J[:, j] = (rp - rm) / (2 * fd_step)
            s, *_ = np.linalg.lstsq(J, -r, rcond=None)
            t = 1.0
            accepted = False
            for _ in range(40):
                trial = project(c + t * s)
                tv = cost(trial)
                if tv <= val:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                grad = np.linalg.norm(J.T @ r)
                failed = grad > 1e-12 * max(1.0, val)
                converged = not failed
                break
            move = np.linalg.norm(trial - c)
            c, val = trial, tv
            r = residual(c)
            if move < tol:
                converged = True
                break
        return c, val, it, converged, failed

    zero = np.zeros(k)
    val0 = cost(zero)
    if X.l2_norm() == 0.0:
        best = (zero, val0, 0, True, False)
    else:
        starts = [zero]
        if multi_start:
            scale = min(radius, limit) / 2
            for j in range(k):
                e = np.zeros(k)
                e[j] = scale / math.sqrt(gram[j, j])
                starts += [e, -e]
        best = None
        for c0 in starts:
            out = run(c0)
            if best is None or out[1] < best[1]:
                best = out
        if best[4] and best[1] > val0:
            best = (zero, val0, best[2], False, True)
    c, val, iters, converged, failed = best
    Xbar = TangentField(mesh, _psi_vectors(X, c))
    basis = killing_basis(mesh)
    inner = np.array([Xbar.inner(K) for K in basis])
    xb2 = Xbar.l2_norm() ** 2
    norms = np.array([K.l2_norm() for K in basis])
    # below this the residual field is round-off and the ratio is meaningless
    ratio = float(np.max(np.abs(inner) / (xb2 * norms))) if xb2 > 1e-20 else 0.0
    return KillingFit(
        coeffs=c,
        field=Xbar,
        objective=math.sqrt(val),
        objective_initial=math.sqrt(val0),
        iterations=iters,
        converged=converged,
        line_search_failed=failed,
        radius=radius,
        inner_products=inner,
        orthogonality_ratio=ratio,
    )


# -- linearisation of the metric deficit ----------------------------------

def _fan_patch(M: Manifold, p, radius: float, n_fan: int) -> SurfaceMesh:
    E = M.frame(p)
    ang = 2 * np.pi * np.arange(n_fan) / n_fan
    u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    ring = M.exp(np.broadcast_to(p, (n_fan, len(p))), radius * u @ E.T)
    verts = np.vstack([p[None, :], ring])
    faces = np.array([[0, 1 + j, 1 + (j + 1) % n_fan] for j in range(n_fan)])
    return SurfaceMesh(M, verts, faces, closed=False)


def _deficit_at(M: Manifold, patch: SurfaceMesh, v, A, eps: float) -> np.ndarray:
    """Area-averaged deficit of ``exp(eps X)`` on the fan, in the frame at its centre."""
    p = patch.vertices[0]
    E = M.frame(p)
    verts = patch.vertices
    a = M.log(np.broadcast_to(p, verts.shape), verts) @ E
    at_p = (v[None, :] + a @ A.T) @ E.T
    X = M.transport(np.broadcast_to(p, verts.shape), verts, at_p)
    f = DiscreteMap(patch, M.exp(verts, eps * X))
    H = metric_deficit(f)
    C = patch.centers
    back = np.stack(
        [M.transport(C, np.broadcast_to(p, C.shape), patch.frames[..., k]) for k in range(2)], axis=-1
    )
    R = np.einsum("da,fdb->fab", E, back)
    Hp = R @ H @ np.swapaxes(R, -1, -2)
    return np.tensordot(patch.face_areas, Hp, axes=(0, 0)) / patch.total_area


def deficit_linearization_check(
    manifold: Manifold,
    scales=(4e-2, 2e-2, 1e-2),
    n_trials: int = 5,
    seed: int = 0,
    patch_radius: float = 1e-4,
    n_fan: int = 8,
    tol: float = 0.2,
    samples=None,
) -> dict:
    """Check that the deficit of ``exp(eps X)`` is ``eps (A + A^T) + O(eps^2)``.

    For random ``p``, ``v = X(p)`` and ``A = grad X(p)`` the field
    ``X(q) = P_{p->q}(v + A log_p q)`` is exponentiated on a tiny symmetric
    fan around ``p`` and ``R(eps) = |H(eps) - eps (A + A^T)|`` is recorded.
    The check passes when every ratio ``R(eps/2) / R(eps)`` lies in
    ``0.25 (1 +- tol)``.  ``samples`` may supply explicit ``(p, v, A)``.
    """
    scales = sorted((float(s) for s in scales), reverse=True)
    if scales[-1] <= 0 or scales[0] >= manifold.inj_radius / 4:
        raise ValueError("scales must lie in (0, inj/4)")
    rng = np.random.default_rng(seed)
    if samples is None:
        samples = [
            (manifold.random_points(rng, 1)[0], rng.standard_normal(2), rng.standard_normal((2, 2)))
            for _ in range(n_trials)
        ]
    trials = []
    ok = True
    for p, v, A in samples:
        v = np.asarray(v, dtype=float)
        A = np.asarray(A, dtype=float)
        patch = _fan_patch(manifold, np.asarray(p, dtype=float), patch_radius, n_fan)
        R = [float(np.linalg.norm(_deficit_at(manifold, patch, v, A, e) - e * (A + A.T))) for e in scales]
        ratios = [R[i + 1] / R[i] if R[i] > 0 else float("nan") for i in range(len(R) - 1)]
        passed = all(abs(r - 0.25) <= tol * 0.25 for r in ratios)
        ok &= passed
        trials.append({"p": np.asarray(p).tolist(), "v": v.tolist(), "A": A.tolist(), "R": R, "ratios": ratios, "passed": passed})
    return {"manifold": manifold.kind, "scales": scales, "trials": trials, "passed": bool(ok)}
