"""Linear maps between oriented inner-product spaces.

All quantities are computed from the matrix of the map in positively oriented
orthonormal frames, so they do not depend on which such frames were chosen.
Every function accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FrameMismatch

__all__ = [
    "TangentMap",
    "transpose",
    "det",
    "cof",
    "det_and_cof",
    "hs_inner",
    "hs_norm",
    "dist_to_so",
    "nearest_rotation",
]


def transpose(F):
    """Swap the last two axes (frames are swapped for a ``TangentMap``)."""
    if isinstance(F, TangentMap):
        return F.T
    return np.swapaxes(np.asarray(F, dtype=float), -1, -2)


def det(F):
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return np.linalg.det(F)


def cof(F):
    """Cofactor matrix, i.e. the gradient of ``det`` at ``F``.

    Closed forms for n = 2 and n = 3; larger n goes through an SVD so that
    singular inputs are handled.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        out = np.empty_like(F)
        out[..., 0, 0] = F[..., 1, 1]
        out[..., 0, 1] = -F[..., 1, 0]
        out[..., 1, 0] = -F[..., 0, 1]
        out[..., 1, 1] = F[..., 0, 0]
        return out
    if n == 3:
        a, b, c = F[..., :, 0], F[..., :, 1], F[..., :, 2]
        return np.stack([np.cross(b, c), np.cross(c, a), np.cross(a, b)], axis=-1)
    U, s, Vt = np.linalg.svd(F)
    # cof(U S V^T) = cof(U) cof(S) cof(V^T), cof(Q) = det(Q) Q for orthogonal Q
    idx = np.arange(n)
    others = np.stack([np.prod(np.delete(s, i, axis=-1), axis=-1) for i in idx], axis=-1)
    sign = np.linalg.det(U) * np.linalg.det(Vt)
    return sign[..., None, None] * (U * others[..., None, :]) @ Vt


def det_and_cof(F):
    if isinstance(F, TangentMap):
        return F.det(), F.cof()
    return det(F), cof(F)


def hs_inner(A, B):
    """Hilbert-Schmidt inner product ``tr(A^T B)`` over the last two axes."""
    return np.einsum("...ij,...ij->...", np.asarray(A, float), np.asarray(B, float))


def hs_norm(A):
    return np.sqrt(hs_inner(A, A))


def _dist_to_so2(F):
    # F = rho*Rot + anticonformal; the nearest rotation is Rot and
    # dist^2 = 2 (rho - 1)^2 + |anticonformal|^2, free of cancellation.
    c = F[..., 0, 0] + F[..., 1, 1]
    s = F[..., 1, 0] - F[..., 0, 1]
    r = np.hypot(c, s)
    anti = np.hypot(F[..., 0, 0] - F[..., 1, 1], F[..., 0, 1] + F[..., 1, 0])
    dist = np.sqrt(0.5 * (r - 2.0) ** 2 + 0.5 * anti**2)
    safe = np.where(r > 0.0, r, 1.0)
    cos = np.where(r > 0.0, c / safe, 1.0)
    sin = np.where(r > 0.0, s / safe, 0.0)
    R = np.empty(F.shape, dtype=float)
    R[..., 0, 0] = cos
    R[..., 0, 1] = -sin
    R[..., 1, 0] = sin
    R[..., 1, 1] = cos
    return dist, R


def _dist_to_so_svd(F):
    U, s, Vt = np.linalg.svd(F)
    sign = np.sign(np.linalg.det(U @ Vt))
    sign = np.where(sign == 0, 1.0, sign)
    s_signed = s.copy()
    s_signed[..., -1] = s[..., -1] * sign
    dist = np.sqrt(np.sum((s_signed - 1.0) ** 2, axis=-1))
    D = np.ones_like(s)
    D[..., -1] = sign
    R = (U * D[..., None, :]) @ Vt
    return dist, R


def dist_to_so(F):
    """Hilbert-Schmidt distance to SO(n) and a nearest rotation.

    With singular values ``s_1 >= ... >= s_n`` the squared distance is
    ``sum (s_i - 1)^2`` when ``det F >= 0`` and the same sum with the last
    term replaced by ``(s_n + 1)^2`` otherwise.

    The minimiser is not unique when ``det F < 0`` and the two smallest
    singular values coincide (or, for n = 2, when ``F`` is anticonformal).
    In that case the returned rotation is the one produced by the SVD sign
    flip (identity for the 2x2 closed form); only ``dist`` is well defined.
    """
    if isinstance(F, TangentMap):
        return F.dist_to_so()
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 2:
        return _dist_to_so2(F)
    return _dist_to_so_svd(F)


def nearest_rotation(F):
    return dist_to_so(F)[1]


@dataclass(frozen=True)
class TangentMap:
    """Matrix of a linear map in positively oriented orthonormal frames.

    ``frame_src`` and ``frame_dst`` are opaque labels of the frames the matrix
    is expressed in; only intrinsic quantities (det, norm, distance to SO)
    should be read off the matrix without knowing the frames.
    """

    matrix: np.ndarray
    frame_src: str = "src"
    frame_dst: str = "dst"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"TangentMap needs a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("TangentMap matrix must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> "TangentMap":
        return TangentMap(self.matrix.T, self.frame_dst, self.frame_src)

    def det(self) -> float:
        return float(det(self.matrix))

    def cof(self) -> "TangentMap":
        return TangentMap(cof(self.matrix), self.frame_src, self.frame_dst)

    def norm(self) -> float:
        return float(hs_norm(self.matrix))

    def inner(self, other: "TangentMap") -> float:
        return float(hs_inner(self.matrix, other.matrix))

    def dist_to_so(self) -> tuple[float, "TangentMap"]:
        F = self.matrix
        d, R = _dist_to_so2(F) if self.dim == 2 else _dist_to_so_svd(F)
        return float(d), TangentMap(R, self.frame_src, self.frame_dst)

    def __matmul__(self, other: "TangentMap") -> "TangentMap":
        if other.frame_dst != self.frame_src:
            raise FrameMismatch(f"cannot compose: {other.frame_dst!r} != {self.frame_src!r}")
        return TangentMap(self.matrix @ other.matrix, other.frame_src, self.frame_dst)

    def __call__(self, v):
        return self.matrix @ np.asarray(v, dtype=float)
