"""Mesh-refinement ladders for the quantities that should not depend on h.

Prints, per manifold and resolution:
  e(f_eps) / eps for a fixed smooth field,
  the pointwise almost-harmonic constant ratio_max,
  the empirical Korn constant over 50 random fields,
  and the direct-scaling slope and max d/e.

    python3 scripts/refinement_ladder.py [--fields 50]
"""

import argparse
import math

import numpy as np

from rigidlab.fields import random_smooth_field
from rigidlab.killing import TangentField, face_gradient
from rigidlab.maps import energy_Ep
from rigidlab.mesh import build_mesh
from rigidlab.piola import almost_harmonic_parts
from rigidlab.rigidity import perturbed_map, scaling_study

LADDERS = {"sphere": (1, 2, 3, 4), "flat_torus": (12, 24, 48)}


def korn_constant(mesh, n_fields):
    vals = []
    for i in range(n_fields):
        X = TangentField.from_function(mesh, random_smooth_field(mesh.manifold, np.random.default_rng([400, i])))
        G = face_gradient(X)
        S = G + np.swapaxes(G, 1, 2)
        g = math.sqrt(math.fsum(mesh.face_areas * np.sum(G**2, axis=(1, 2))))
        s = math.sqrt(math.fsum(mesh.face_areas * np.sum(S**2, axis=(1, 2))))
        vals.append(g / (s + X.l2_norm()))
    return max(vals)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--fields", type=int, default=50)
    args = ap.parse_args()
    print(f"{'manifold':<11}{'res':>5}{'h':>9}{'e/eps':>10}{'ratio_max':>11}{'korn':>8}{'slope':>8}{'max d/e':>9}")
    for kind, levels in LADDERS.items():
        for r in levels:
            mesh = build_mesh(kind, r)
            M = mesh.manifold
            X = random_smooth_field(M, np.random.default_rng(9))
            rate = energy_Ep(perturbed_map(mesh, X, 1e-3, M.identity()))[1] / 1e-3
            Y = random_smooth_field(M, np.random.default_rng(13))
            ratio = almost_harmonic_parts(perturbed_map(mesh, Y, 0.3, M.identity())).ratio_max
            sc = scaling_study(mesh, X, M.identity(), [1e-3, 1e-2, 1e-1])
            print(
                f"{kind:<11}{r:>5}{mesh.h:>9.4f}{rate:>10.4f}{ratio:>11.4f}"
                f"{korn_constant(mesh, args.fields):>8.4f}{sc.slope:>8.4f}{sc.max_ratio:>9.4f}",
                flush=True,
            )


if __name__ == "__main__":
    main()
