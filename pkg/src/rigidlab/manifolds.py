"""Closed-form calculus on the unit sphere S^2 in R^3 and the flat torus T^2 in R^4.

Points are handled as ambient coordinates, arrays of shape ``(..., d)``.
Tangent vectors are ambient vectors orthogonal to the normal space, and a
tangent frame is an ``(..., d, 2)`` array whose columns are a positively
oriented orthonormal basis.  Every operation is vectorised over the leading
axes.

The torus is the Clifford torus ``(cos t, sin t, cos s, sin s)``, which is
isometric to the flat square torus ``R^2 / (2 pi Z)^2``.  For both manifolds
the identity component of the isometry group acts on ambient space by
orthogonal matrices (rotations of R^3, pairs of plane rotations for the
torus), which is how :class:`IsometryElement` stores it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFit,
    DegenerateProjection,
    FrameMismatch,
    OutsideInjectivityRadius,
)
from .linalg import nearest_rotation

__all__ = [
    "IsometryElement",
    "Manifold",
    "Sphere",
    "FlatTorus",
    "get_manifold",
    "wrap_angle",
]

_TANGENCY_TOL = 1e-8
# slack on the injectivity test: antipodal points in floating point sit
# at distance pi - 1e-16
_INJ_SLACK = 1e-9


def wrap_angle(a):
    """Map angles to the interval ``[-pi, pi)``."""
    return (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _norm(a):
    return np.sqrt(_dot(a, a))


@dataclass(frozen=True)
class IsometryElement:
    """Orientation preserving isometry, stored as its ambient orthogonal matrix."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T

    __call__ = apply

    def push(self, v):
        """Differential of the isometry applied to ambient tangent vectors."""
        return np.asarray(v, dtype=float) @ self.matrix.T

    def inverse(self) -> "IsometryElement":
        return IsometryElement(self.kind, self.matrix.T)

    def __matmul__(self, other: "IsometryElement") -> "IsometryElement":
        if other.kind != self.kind:
            raise ValueError(f"cannot compose {self.kind} and {other.kind} isometries")
        return IsometryElement(self.kind, self.matrix @ other.matrix)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "IsometryElement":
        return cls(data["kind"], np.asarray(data["matrix"], dtype=float))


class Manifold:
    """Interface shared by the shipped closed-form manifolds."""

    kind: str
    ambient_dim: int
    dim = 2
    inj_radius = np.pi
    volume: float
    killing_dim: int
    # |i(p) - i(q)| <= d(p, q) <= chord_arc_constant * |i(p) - i(q)|
    chord_arc_constant = np.pi / 2

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return isinstance(other, Manifold) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    # -- embedding -----------------------------------------------------
    def embed(self, params):
        raise NotImplementedError

    def params(self, x):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def constraint_residual(self, x):
        raise NotImplementedError

    def normals(self, x):
        """Orthonormal basis of the normal space, shape ``(..., d, d - 2)``."""
        raise NotImplementedError

    def frame(self, x):
        raise NotImplementedError

    def tangent_part(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        N = self.normals(x)
        return v - np.einsum("...ik,...k->...i", N, np.einsum("...ik,...i->...k", N, v))

    def normal_part(self, x, v):
        return np.asarray(v, dtype=float) - self.tangent_part(x, v)

    def check_tangent(self, x, v, name="v"):
        v = np.asarray(v, dtype=float)
        nrm = _norm(self.normal_part(x, v))
        scale = np.maximum(_norm(v), 1.0)
        if np.any(nrm > _TANGENCY_TOL * scale):
            raise FrameMismatch(f"{name} is not tangent at its base point")

    # -- curvature -------------------------------------------------------
    def second_fundamental_form(self, x, v, w):
        raise NotImplementedError

    def trace_form(self, x, X, Y):
        """Trace extension ``sum_a A(X e_a, Y e_a)`` over an orthonormal source frame.

        ``X`` and ``Y`` have shape ``(..., d, n)``: the columns are the images
        of the source frame vectors, tangent at ``x``.
        """
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        xs = np.asarray(x, dtype=float)[..., None, :]
        return self.second_fundamental_form(
            xs, np.swapaxes(X, -1, -2), np.swapaxes(Y, -1, -2)
        ).sum(axis=-2)

    # -- geodesics -------------------------------------------------------
    def exp(self, x, v):
        raise NotImplementedError

    def log(self, x, y, max_dist=None):
        raise NotImplementedError

    def distance(self, x, y):
        raise NotImplementedError

    def transport(self, x, y, v):
        raise NotImplementedError

    def _check_inj(self, d, max_dist):
        limit = self.inj_radius if max_dist is None else max_dist
        worst = float(np.max(d)) if np.size(d) else 0.0
        if worst > limit - _INJ_SLACK:
            raise OutsideInjectivityRadius(
                f"distance {worst:.6g} reaches the limit {limit:.6g}"
            )

    # -- isometries --------------------------------------------------------
    def killing_generators(self):
        """Skew matrices ``G_k`` with Killing field ``K_k(x) = G_k x``."""
        raise NotImplementedError

    def killing_matrix(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        return np.tensordot(coeffs, self.killing_generators(), axes=(0, 0))

    def killing_field(self, coeffs, x):
        return np.asarray(x, dtype=float) @ self.killing_matrix(coeffs).T

    def killing_sup_norm(self, coeffs):
        # both shipped instances: sup_p |K(p)| = |coeffs|
        return float(np.linalg.norm(coeffs))

    def identity(self) -> IsometryElement:
        return IsometryElement(self.kind, np.eye(self.ambient_dim))

    def flow(self, coeffs, t=1.0) -> IsometryElement:
        raise NotImplementedError

    def isometry_fit(self, x, y, weights=None) -> IsometryElement:
        raise NotImplementedError

    def group_distance(self, g1: IsometryElement, g2: IsometryElement) -> float:
        return float(np.linalg.norm(g1.matrix - g2.matrix))

    def random_isometry(self, rng) -> IsometryElement:
        raise NotImplementedError

    # -- sampling ----------------------------------------------------------
    def random_points(self, rng, n):
        raise NotImplementedError

    def random_tangent(self, rng, x, scale=1.0):
        x = np.asarray(x, dtype=float)
        coeff = rng.standard_normal(x.shape[:-1] + (2,))
        return scale * np.einsum("...ia,...a->...i", self.frame(x), coeff)


class Sphere(Manifold):
    """Unit sphere in R^3, oriented by the outward normal."""

    kind = "sphere"
    ambient_dim = 3
    volume = 4.0 * np.pi
    killing_dim = 3
    # below this sin(polar angle) the chart frame is replaced
    _pole_threshold = 0.25

    def embed(self, params):
        return self.project(params)

    def params(self, x):
        return np.asarray(x, dtype=float).copy()

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r = _norm(x)
        if np.any(r < 1e-12):
            raise DegenerateProjection("cannot project the origin onto the sphere")
        return x / r[..., None]

    def constraint_residual(self, x):
        return np.abs(_norm(np.asarray(x, dtype=float)) - 1.0)

    def normals(self, x):
        return np.asarray(x, dtype=float)[..., :, None]

    def tangent_part(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return v - _dot(x, v)[..., None] * x

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        down = self.tangent_part(x, np.broadcast_to([0.0, 0.0, -1.0], x.shape))
        side = self.tangent_part(x, np.broadcast_to([1.0, 0.0, 0.0], x.shape))
        near_pole = (_norm(down) < self._pole_threshold)[..., None]
        e1 = np.where(near_pole, side, down)
        e1 = e1 / _norm(e1)[..., None]
        e2 = np.cross(x, e1)
        return np.stack([e1, e2], axis=-1)

    def second_fundamental_form(self, x, v, w):
        x = np.asarray(x, dtype=float)
        self.check_tangent(x, v, "v")
        self.check_tangent(x, w, "w")
        return _dot(v, w)[..., None] * x

    def exp(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        n = _norm(v)[..., None]
        sinc = np.where(n > 1e-12, np.sin(n) / np.where(n > 1e-12, n, 1.0), 1.0 - n**2 / 6)
        y = np.cos(n) * x + sinc * v
        return y / _norm(y)[..., None]

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.arctan2(_norm(np.cross(x, y)), _dot(x, y))

    def log(self, x, y, max_dist=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = _dot(x, y)
        u = y - c[..., None] * x
        s = _norm(u)
        theta = np.arctan2(s, c)
        self._check_inj(theta, max_dist)
        factor = np.where(s > 1e-12, theta / np.where(s > 1e-12, s, 1.0), 1.0 + theta**2 / 6)
        return factor[..., None] * u

    def transport(self, x, y, v, max_dist=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        self._check_inj(self.distance(x, y), max_dist)
        c = _dot(x, y)
        return v - (_dot(v, y) / (1.0 + c))[..., None] * (x + y)

    def killing_generators(self):
        G = np.zeros((3, 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            # G_k x = e_k cross x
            G[k] = np.cross(e, np.eye(3)).T
        return G

    def flow(self, coeffs, t=1.0):
        w = t * np.asarray(coeffs, dtype=float)
        angle = np.linalg.norm(w)
        W = self.killing_matrix(w)
        if angle < 1e-12:
            R = np.eye(3) + W + 0.5 * W @ W
        else:
            R = np.eye(3) + np.sin(angle) / angle * W + (1 - np.cos(angle)) / angle**2 * W @ W
        return IsometryElement(self.kind, R)

    def isometry_fit(self, x, y, weights=None):
        """Weighted best rotation ``argmin sum w |y - R x|^2`` (Kabsch/Wahba)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
        H = np.einsum("n,ni,nj->ij", w, y, x)
        s = np.linalg.svd(H, compute_uv=False)
        if s[0] <= 0.0 or s[1] < 1e-10 * s[0]:
            raise DegenerateFit(f"correlation matrix has rank < 2 (singular values {s})")
        return IsometryElement(self.kind, nearest_rotation(H))

    def random_isometry(self, rng):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        a, b, c, d = q
        R = np.array(
            [
                [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
                [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
                [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
            ]
        )
        return IsometryElement(self.kind, R)

    def random_points(self, rng, n):
        return self.project(rng.standard_normal((n, 3)))


class FlatTorus(Manifold):
    """Clifford torus in R^4, oriented by the frame (e_theta, e_phi)."""

    kind = "flat_torus"
    ambient_dim = 4
    volume = 4.0 * np.pi**2
    killing_dim = 2

    def embed(self, params):
        p = np.asarray(params, dtype=float)
        t, s = p[..., 0], p[..., 1]
        return np.stack([np.cos(t), np.sin(t), np.cos(s), np.sin(s)], axis=-1)

    def params(self, x):
        x = np.asarray(x, dtype=float)
        t = np.arctan2(x[..., 1], x[..., 0]) % (2 * np.pi)
        s = np.arctan2(x[..., 3], x[..., 2]) % (2 * np.pi)
        return np.stack([t, s], axis=-1)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r1 = np.hypot(x[..., 0], x[..., 1])
        r2 = np.hypot(x[..., 2], x[..., 3])
        if np.any(r1 < 1e-12) or np.any(r2 < 1e-12):
            raise DegenerateProjection("point lies on the focal set of the torus")
        out = x.copy()
        out[..., :2] /= r1[..., None]
        out[..., 2:] /= r2[..., None]
        return out

    def constraint_residual(self, x):
        x = np.asarray(x, dtype=float)
        r1 = np.hypot(x[..., 0], x[..., 1])
        r2 = np.hypot(x[..., 2], x[..., 3])
        return np.maximum(np.abs(r1 - 1.0), np.abs(r2 - 1.0))

    def normals(self, x):
        x = np.asarray(x, dtype=float)
        z = np.zeros(x.shape[:-1])
        n1 = np.stack([x[..., 0], x[..., 1], z, z], axis=-1)
        n2 = np.stack([z, z, x[..., 2], x[..., 3]], axis=-1)
        return np.stack([n1, n2], axis=-1)

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        z = np.zeros(x.shape[:-1])
        et = np.stack([-x[..., 1], x[..., 0], z, z], axis=-1)
        ep = np.stack([z, z, -x[..., 3], x[..., 2]], axis=-1)
        return np.stack([et, ep], axis=-1)

    def _components(self, x, v):
        return np.einsum("...ia,...i->...a", self.frame(x), v)

    def second_fundamental_form(self, x, v, w):
        x = np.asarray(x, dtype=float)
        self.check_tangent(x, v, "v")
        self.check_tangent(x, w, "w")
        vc = self._components(x, v)
        wc = self._components(x, w)
        N = self.normals(x)
        return np.einsum("...ik,...k->...i", N, vc * wc)

    def exp(self, x, v):
        x = np.asarray(x, dtype=float)
        return self.embed(self.params(x) + self._components(x, v))

    def _delta(self, x, y):
        return wrap_angle(self.params(y) - self.params(x))

    def distance(self, x, y):
        return _norm(self._delta(x, y))

    def log(self, x, y, max_dist=None):
        x = np.asarray(x, dtype=float)
        delta = self._delta(x, y)
        self._check_inj(_norm(delta), max_dist)
        return np.einsum("...ia,...a->...i", self.frame(x), delta)

    def transport(self, x, y, v, max_dist=None):
        self._check_inj(self.distance(x, y), max_dist)
        return np.einsum("...ia,...a->...i", self.frame(y), self._components(x, v))

    def killing_generators(self):
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        G = np.zeros((2, 4, 4))
        G[0, :2, :2] = J
        G[1, 2:, 2:] = J
        return G

    @staticmethod
    def _translation(a, b):
        Q = np.zeros((4, 4))
        Q[:2, :2] = [[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]
        Q[2:, 2:] = [[np.cos(b), -np.sin(b)], [np.sin(b), np.cos(b)]]
        return Q

    def flow(self, coeffs, t=1.0):
        a, b = t * np.asarray(coeffs, dtype=float)
        return IsometryElement(self.kind, self._translation(a, b))

    def translation_of(self, g: IsometryElement):
        Q = g.matrix
        return np.array([np.arctan2(Q[1, 0], Q[0, 0]), np.arctan2(Q[3, 2], Q[2, 2])])

    def isometry_fit(self, x, y, weights=None):
        """Weighted circular-mean translation taking ``x`` to ``y``."""
        w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
        delta = self.params(y) - self.params(x)
        z = np.einsum("n,nk->k", w, np.exp(1j * delta))
        resultant = np.abs(z) / np.sum(w)
        if np.any(resultant < 1e-8):
            raise DegenerateFit(f"circular mean undefined (resultant lengths {resultant})")
        a, b = np.angle(z)
        return IsometryElement(self.kind, self._translation(a, b))

    def random_isometry(self, rng):
        a, b = rng.uniform(0.0, 2 * np.pi, size=2)
        return IsometryElement(self.kind, self._translation(a, b))

    def random_points(self, rng, n):
        return self.embed(rng.uniform(0.0, 2 * np.pi, size=(n, 2)))


_MANIFOLDS = {"sphere": Sphere, "flat_torus": FlatTorus}


def get_manifold(kind: str) -> Manifold:
    try:
        return _MANIFOLDS[kind]()
    except KeyError:
        raise ValueError(f"unknown manifold kind {kind!r}; expected one of {sorted(_MANIFOLDS)}")
