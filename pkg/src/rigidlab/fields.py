"""Closed-form smooth tangent vector fields used to generate test maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .manifolds import Manifold

__all__ = [
    "SmoothField",
    "killing_field",
    "conformal_field",
    "shear_field",
    "random_smooth_field",
    "random_ambient_field",
]


@dataclass(frozen=True)
class SmoothField:
    """Tangent field given by an ambient formula, projected onto tangent spaces."""

    manifold: Manifold
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "field"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.manifold.tangent_part(x, self.fn(x))

    def scaled(self, s: float) -> "SmoothField":
        return SmoothField(self.manifold, lambda x: s * self.fn(x), f"{s:g}*{self.name}")


def killing_field(manifold: Manifold, coeffs) -> SmoothField:
    G = manifold.killing_matrix(coeffs)
    return SmoothField(manifold, lambda x: x @ G.T, "killing")


def conformal_field(a) -> SmoothField:
    """Gradient of the height function ``<a, x>`` on the sphere."""
    from .manifolds import Sphere

    a = np.asarray(a, dtype=float)
    return SmoothField(Sphere(), lambda x: np.broadcast_to(a, x.shape), "conformal")


def shear_field(amplitude: float = 1.0) -> SmoothField:
    """Torus field ``sin(phi) e_theta``."""
    from .manifolds import FlatTorus

    def fn(x):
        z = np.zeros(x.shape[:-1])
        return amplitude * x[..., 3, None] * np.stack([-x[..., 1], x[..., 0], z, z], axis=-1)

    return SmoothField(FlatTorus(), fn, "shear")


def random_smooth_field(manifold: Manifold, rng: np.random.Generator, scale: float = 1.0) -> SmoothField:
    """Random low-frequency field with ``sup |X|`` close to ``scale``.

    Sphere: tangent part of a random quadratic ambient field.  Torus: random
    first-harmonic trigonometric components in the (e_theta, e_phi) frame.
    """
    if manifold.kind == "sphere":
        A = rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 3, 3)) / 2

        def raw(x):
            return x @ A.T + np.einsum("ijk,...j,...k->...i", B, x, x)

    else:
        modes = np.array([[1, 0], [0, 1], [1, 1], [1, -1]])
        coef = rng.standard_normal((2, len(modes), 2))

        def raw(x):
            t = np.arctan2(x[..., 1], x[..., 0])
            s = np.arctan2(x[..., 3], x[..., 2])
            phase = modes[:, 0] * t[..., None] + modes[:, 1] * s[..., None]
            comp = np.einsum("akc,...kc->...a", coef, np.stack([np.cos(phase), np.sin(phase)], axis=-1))
            return np.einsum("...ia,...a->...i", manifold.frame(x), comp)

    probe = manifold.random_points(np.random.default_rng(12345), 4000)
    sup = np.max(np.linalg.norm(manifold.tangent_part(probe, raw(probe)), axis=-1))
    factor = scale / sup
    return SmoothField(manifold, lambda x: factor * raw(x), "random")


def random_ambient_field(d: int, rng: np.random.Generator) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth bounded ambient test field ``xi(x) = sin(B x) + a`` (not projected)."""
    B = rng.standard_normal((d, d))
    a = rng.standard_normal(d)
    return lambda x: np.sin(np.asarray(x) @ B.T) + a
