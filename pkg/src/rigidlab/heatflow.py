"""Harmonic-map heat flow into the target manifold.

The default stepper is the tangent-plane scheme: solve for a tangent velocity
``W`` (one 2-vector per vertex in the frame at ``U_v``)

    T^T (M + dt K) T alpha = -T^T K U,     W = T alpha,

then renormalise ``U + dt W`` onto the manifold.  On meshes whose stiffness
matrix has non-positive off-diagonal entries this decreases the discrete
Dirichlet energy ``1/2 tr(U^T K U)`` unconditionally.  The alternative
``"heat_project"`` scheme projects an implicit heat step, ``U+ = pi((I + dt L)^{-1} U)``;
it is first-order consistent but not energy-monotone near harmonic maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure, StepRejected
from .maps import DiscreteMap, check_exponent, sobolev_distance
from .mesh import SurfaceMesh
from .piola import almost_harmonic_parts

__all__ = [
    "FlowState",
    "FlowReport",
    "MONITOR_COLUMNS",
    "dirichlet_energy",
    "default_dt",
    "initial_state",
    "step",
    "explicit_velocity",
    "smooth",
]

MONITOR_COLUMNS = ("step", "t", "dirichlet_energy", "w1p_dist_to_initial", "max_face_grad", "constraint_residual")
ENERGY_SLACK = 1e-10
MAX_HALVINGS = 10
SCHEMES = ("tangent", "heat_project")


def dirichlet_energy(U, mesh: SurfaceMesh) -> float:
    U = U.images if isinstance(U, DiscreteMap) else np.asarray(U)
    return 0.5 * math.fsum(np.einsum("vd,vd->v", U, mesh.stiffness @ U))


def default_dt(mesh: SurfaceMesh) -> float:
    return 1e-3 * mesh.h**2


@dataclass
class FlowState:
    """Current flow time, map and energy plus the monitor history."""

    t: float
    map: DiscreteMap
    dirichlet_energy: float
    initial: DiscreteMap
    step_count: int = 0
    p: float = 2.0
    history: list = field(default_factory=list)

    def monitor_row(self) -> dict:
        try:
            dist = sobolev_distance(self.map, self.initial, self.p)
            grad = float(np.max(self.map.differentials.norm))
        except Exception:
            dist = grad = float("nan")
        return {
            "step": self.step_count,
            "t": self.t,
            "dirichlet_energy": self.dirichlet_energy,
            "w1p_dist_to_initial": dist,
            "max_face_grad": grad,
            "constraint_residual": self.map.constraint_residual(),
        }


def initial_state(f: DiscreteMap, p: float = 2.0, monitor: bool = True) -> FlowState:
    state = FlowState(0.0, f, dirichlet_energy(f, f.mesh), f, p=check_exponent(p))
    if monitor:
        state.history.append(state.monitor_row())
    return state


def _solve_spd(matvec, b, diag, n):
    """Jacobi-preconditioned conjugate gradients; deterministic for fixed input."""
    A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    P = spla.LinearOperator((n, n), matvec=lambda x: x / diag, dtype=float)
    x, info = spla.cg(A, b, rtol=1e-13, atol=0.0, maxiter=10 * n, M=P)
    if info != 0 or not np.all(np.isfinite(x)):
        raise SolverFailure(f"conjugate gradients did not converge (info={info})")
    return x


def _tangent_step(U, mesh: SurfaceMesh, dt: float):
    M = mesh.manifold
    K = mesh.stiffness
    mass = mesh.vertex_mass
    E = M.frame(U)
    V = len(U)

    def lift(alpha):
        return np.einsum("vda,va->vd", E, alpha.reshape(V, 2))

    def matvec(alpha):
        W = lift(alpha)
        return np.einsum("vda,vd->va", E, mass[:, None] * W + dt * (K @ W)).ravel()

    rhs = -np.einsum("vda,vd->va", E, K @ U).ravel()
    diag = np.repeat(mass + dt * K.diagonal(), 2)
    alpha = _solve_spd(matvec, rhs, diag, 2 * V)
    return M.project(U + dt * lift(alpha))


def _heat_project_step(U, mesh: SurfaceMesh, dt: float):
    A = sp.identity(mesh.n_vertices) + dt * sp.diags(1.0 / mesh.vertex_mass) @ mesh.stiffness
    lu = spla.splu(A.tocsc())
    return mesh.manifold.project(lu.solve(U))


def explicit_velocity(f: DiscreteMap) -> np.ndarray:
    """Tangent part of ``Delta_h U``, the velocity both schemes are consistent with."""
    return f.manifold.tangent_part(f.images, f.mesh.laplacian(f.images))


def step(state: FlowState, dt: float, scheme: str = "tangent", monitor: bool = True) -> FlowState:
    """Advance the flow by ``dt``, halving the step on an energy increase.

    Raises
    ------
    StepRejected
        If the energy still increases after ``MAX_HALVINGS`` halvings.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    mesh = state.map.mesh
    U = state.map.images
    trial = dt
    for _ in range(MAX_HALVINGS + 1):
        Unew = _tangent_step(U, mesh, trial) if scheme == "tangent" else _heat_project_step(U, mesh, trial)
        energy = dirichlet_energy(Unew, mesh)
        if energy <= state.dirichlet_energy + ENERGY_SLACK:
            new = replace(
                state,
                t=state.t + trial,
                map=DiscreteMap(mesh, Unew),
                dirichlet_energy=energy,
                step_count=state.step_count + 1,
                history=list(state.history),
            )
            if monitor:
                new.history.append(new.monitor_row())
            return new
        trial *= 0.5
    raise StepRejected(
        f"energy increased from {state.dirichlet_energy:.12g} to {energy:.12g} after {MAX_HALVINGS} halvings"
    )


@dataclass(frozen=True)
class FlowReport:
    """Summary of a smoothing run.

    ``ratio`` is ``||smoothed - f||_{W^{1,p}} / (||h|| + ||h'||)``; it is NaN
    when the denominator is below 1e-10.
    """

    t_final: float
    steps: int
    dt: float
    scheme: str
    w1p_change: float
    h_norm: float
    h_prime_norm: float
    ratio: float
    max_face_grad: float
    energy_initial: float
    energy_final: float
    history: list

    def to_dict(self, with_history: bool = False) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "history"}
        if with_history:
            out["history"] = self.history
        return out


def smooth(
    f: DiscreteMap,
    t1: float = 0.05,
    dt: float | None = None,
    p: float = 2.0,
    scheme: str = "tangent",
    bound: float | None = None,
    monitor_every: int = 0,
):
    """Run the flow from ``f`` up to time ``t1``.

    Returns
    -------
    smoothed : DiscreteMap
    report : FlowReport
    """
    if t1 <= 0:
        raise ValueError(f"t1 must be positive, got {t1}")
    p = check_exponent(p)
    mesh = f.mesh
    dt = default_dt(mesh) if dt is None else float(dt)
    parts = almost_harmonic_parts(f, bound, p)
    state = initial_state(f, p, monitor=monitor_every > 0)
    n_steps = max(1, math.ceil(t1 / dt - 1e-9))
    for k in range(n_steps):
        remaining = t1 - state.t
        if remaining <= 1e-15 * t1:
            break
        record = monitor_every > 0 and ((k + 1) % monitor_every == 0 or k == n_steps - 1)
        state = step(state, min(dt, remaining), scheme, monitor=record)
    denom = parts.h_norm + parts.h_prime_norm
    change = sobolev_distance(state.map, f, p)
    report = FlowReport(
        t_final=state.t,
        steps=state.step_count,
        dt=dt,
        scheme=scheme,
        w1p_change=change,
        h_norm=parts.h_norm,
        h_prime_norm=parts.h_prime_norm,
        ratio=change / denom if denom >= 1e-10 else float("nan"),
        max_face_grad=float(np.max(state.map.differentials.norm)),
        energy_initial=dirichlet_energy(f, mesh),
        energy_final=state.dirichlet_energy,
        history=state.history,
    )
    return state.map, report
