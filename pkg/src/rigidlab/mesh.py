"""Triangle meshes of the shipped manifolds.

Every face carries a small intrinsic chart: its centre ``c`` is the projected
ambient centroid, its frame is the manifold frame at ``c`` and the corner
coordinates are ``E_c^T log_c(v_i)``.  Areas, P1 gradients, the stiffness
matrix and the discrete differential of maps are all expressed in these
charts, so on the flat torus they reproduce the parameter-domain quantities
exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ResolutionTooSmall
from .io import atomic_write_text
from .manifolds import Manifold, get_manifold

__all__ = ["SurfaceMesh", "build_mesh", "icosphere", "torus_grid", "read_off", "DEFAULT_RESOLUTION"]

MAX_SPHERE_LEVEL = 7
DEFAULT_RESOLUTION = {"sphere": 3, "flat_torus": 24}
MAX_TORUS_N = 256

# maps corner values (u0, u1, u2) to edge differences (u1 - u0, u2 - u0)
_EDGE_OP = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(vertices, faces):
    verts = list(vertices)
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            idx = cache[key] = len(verts) - 1
        return idx

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(out)


def icosphere(level: int):
    """Vertices and outward-oriented faces of the subdivided icosahedron."""
    if level < 0:
        raise ResolutionTooSmall(f"icosphere level must be >= 0, got {level}")
    if level > MAX_SPHERE_LEVEL:
        raise ValueError(f"icosphere level {level} exceeds the supported maximum {MAX_SPHERE_LEVEL}")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    # orient outward: det[v0, v1, v2] > 0
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    flip = np.einsum("ni,ni->n", np.cross(b - a, c - a), a) < 0
    f[flip] = f[flip][:, [0, 2, 1]]
    return v, f


def torus_grid(n: int):
    """Parameters and faces of the ``n x n`` periodic grid on ``[0, 2 pi)^2``."""
    if n < 3:
        raise ResolutionTooSmall(f"torus grid needs N >= 3, got {n}")
    if n > MAX_TORUS_N:
        raise ValueError(f"torus grid N={n} exceeds the supported maximum {MAX_TORUS_N}")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    params = 2.0 * np.pi * np.stack([i.ravel(), j.ravel()], axis=-1) / n
    idx = lambda a, b: (a % n) * n + (b % n)  # noqa: E731
    ii, jj = i.ravel(), j.ravel()
    a, b, c, d = idx(ii, jj), idx(ii + 1, jj), idx(ii + 1, jj + 1), idx(ii, jj + 1)
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return params, faces


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Immutable triangulation of a manifold with per-face intrinsic charts.

    Attributes
    ----------
    manifold : Manifold
    vertices : (V, d) ambient vertex positions on the manifold.
    faces : (F, 3) positively oriented vertex triples.
    resolution : int or None
        Icosphere level or torus grid size; ``None`` for ad hoc patches.
    """

    manifold: Manifold
    vertices: np.ndarray
    faces: np.ndarray
    resolution: int | None = None
    closed: bool = True

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        f = np.array(self.faces, dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (F, 3), got {f.shape}")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face indices out of range")
        if np.max(self.manifold.constraint_residual(v)) > 1e-12:
            raise ValueError("mesh vertices do not lie on the manifold")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if np.any(self.chart_edges_det <= 0):
            raise ValueError("mesh has degenerate or negatively oriented faces")
        if self.closed:
            self._check_closed()

    # -- topology --------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def _check_closed(self):
        directed = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        if len(np.unique(directed, axis=0)) != len(directed):
            raise ValueError("mesh is not consistently oriented")
        if 2 * self.n_edges != len(directed):
            raise ValueError("mesh is not closed: some edge is not shared by exactly two faces")

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        return sp.csr_matrix(
            (data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
        )

    def neighbors(self, v: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[v] : A.indptr[v + 1]]

    @cached_property
    def vertex_faces(self) -> sp.csr_matrix:
        """Incidence matrix, vertex rows by face columns."""
        rows = self.faces.ravel()
        cols = np.repeat(np.arange(self.n_faces), 3)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, self.n_faces))

    # -- face charts -----------------------------------------------------
    @cached_property
    def centers(self) -> np.ndarray:
        return self.manifold.project(self.vertices[self.faces].mean(axis=1))

    @cached_property
    def frames(self) -> np.ndarray:
        """Frames at the face centres, shape ``(F, d, 2)``."""
        return self.manifold.frame(self.centers)

    @cached_property
    def vertex_frames(self) -> np.ndarray:
        return self.manifold.frame(self.vertices)

    @cached_property
    def chart_coords(self) -> np.ndarray:
        """Corner coordinates ``E_c^T log_c(v_i)``, shape ``(F, 3, 2)``."""
        logs = self.manifold.log(self.centers[:, None, :], self.vertices[self.faces])
        return np.einsum("fid,fda->fia", logs, self.frames)

    @cached_property
    def chart_edges(self) -> np.ndarray:
        """Edge matrix ``[z1 - z0, z2 - z0]`` with edges as columns."""
        z = self.chart_coords
        return np.stack([z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]], axis=-1)

    @cached_property
    def chart_edges_det(self) -> np.ndarray:
        D = self.chart_edges
        return D[:, 0, 0] * D[:, 1, 1] - D[:, 0, 1] * D[:, 1, 0]

    @cached_property
    def face_inv(self) -> np.ndarray:
        return np.linalg.inv(self.chart_edges)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * self.chart_edges_det

    @cached_property
    def total_area(self) -> float:
        return float(np.sum(self.face_areas))

    @cached_property
    def corner_areas(self) -> np.ndarray:
        """Mixed Voronoi area of each face corner, shape ``(F, 3)``.

        Non-obtuse faces use the circumcentric split; an obtuse face gives
        half its area to the obtuse corner and a quarter to the others.
        """
        z = self.chart_coords
        area = self.face_areas
        out = np.empty((self.n_faces, 3))
        cots = np.empty((self.n_faces, 3))
        for i in range(3):
            u = z[:, (i + 1) % 3] - z[:, i]
            w = z[:, (i + 2) % 3] - z[:, i]
            cots[:, i] = np.einsum("fa,fa->f", u, w) / (2.0 * area)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            e_ij = np.sum((z[:, j] - z[:, i]) ** 2, axis=-1)
            e_ik = np.sum((z[:, k] - z[:, i]) ** 2, axis=-1)
            out[:, i] = (e_ik * cots[:, j] + e_ij * cots[:, k]) / 8.0
        obtuse = cots < 0
        any_obtuse = obtuse.any(axis=1)
        out[any_obtuse] = np.where(obtuse[any_obtuse], 0.5, 0.25) * area[any_obtuse, None]
        return out

    @cached_property
    def vertex_mass(self) -> np.ndarray:
        """Lumped vertex masses (mixed Voronoi areas)."""
        m = np.zeros(self.n_vertices)
        np.add.at(m, self.faces.ravel(), self.corner_areas.ravel())
        return m

    @cached_property
    def gradient_ops(self) -> np.ndarray:
        """Per-face P1 gradient operators, shape ``(F, 2, 3)``.

        ``gradient_ops[f] @ u[faces[f]]`` is the chart gradient of the P1
        interpolant of the vertex values ``u``.
        """
        return np.einsum("fab,bj->faj", np.swapaxes(self.face_inv, -1, -2), _EDGE_OP)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """P1 stiffness matrix (the cotangent Laplacian), positive semidefinite."""
        G = self.gradient_ops
        local = self.face_areas[:, None, None] * np.einsum("fai,faj->fij", G, G)
        rows = np.repeat(self.faces, 3, axis=1).ravel()
        cols = np.tile(self.faces, (1, 3)).ravel()
        n = self.n_vertices
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))

    @cached_property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.vertex_mass)

    def laplacian(self, U):
        """Discrete Laplace-Beltrami ``-M^{-1} K U`` applied to vertex data."""
        return -(self.stiffness @ U) / self.vertex_mass.reshape((-1,) + (1,) * (np.ndim(U) - 1))

    @cached_property
    def corner_transport(self) -> np.ndarray:
        """``E_c^T P_{v_i -> c} E_{v_i}`` for every face corner, shape ``(F, 3, 2, 2)``.

        Maps frame coefficients of a tangent vector at a corner to the face
        chart frame after parallel transport to the face centre.
        """
        M = self.manifold
        Ev = self.vertex_frames[self.faces]
        V = self.vertices[self.faces]
        C = np.broadcast_to(self.centers[:, None, :], V.shape)
        moved = np.stack([M.transport(V, C, Ev[..., k]) for k in range(2)], axis=-1)
        return np.einsum("fda,fidb->fiab", self.frames, moved)

    @cached_property
    def h(self) -> float:
        """Mesh size: the longest geodesic edge."""
        e = self.edges
        return float(np.max(self.manifold.distance(self.vertices[e[:, 0]], self.vertices[e[:, 1]])))

    @cached_property
    def mesh_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.manifold.kind.encode())
        digest.update(np.round(self.vertices, 12).astype("<f8").tobytes())
        digest.update(self.faces.astype("<i8").tobytes())
        return digest.hexdigest()

    # -- face-to-vertex helpers ------------------------------------------
    def face_to_vertex(self, values):
        """Area-weighted average of per-face values onto vertices."""
        values = np.asarray(values, dtype=float)
        flat = values.reshape(len(values), -1) * self.face_areas[:, None]
        out = (self.vertex_faces @ flat) / (self.vertex_faces @ self.face_areas)[:, None]
        return out.reshape((self.n_vertices,) + values.shape[1:])

    def integrate_vertex(self, values):
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.vertex_mass, values, axes=(0, 0))

    def integrate_face(self, values):
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.face_areas, values, axes=(0, 0))

    # -- export ------------------------------------------------------------
    def write_off(self, path):
        d = self.vertices.shape[1]
        header = "OFF" if d == 3 else f"{d}OFF"
        lines = [header, f"{self.n_vertices} {self.n_faces} {self.n_edges}"]
        lines += [" ".join(f"{x:.17g}" for x in row) for row in self.vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in self.faces]
        atomic_write_text(path, "\n".join(lines) + "\n")

    def write_obj(self, path):
        lines = []
        verts = self.vertices
        if verts.shape[1] == 4:
            lines.append("# flat torus drawn as a donut in R^3 (R = 2, r = 1); intrinsic geometry is in the OFF export")
            t, s = self.manifold.params(verts).T
            verts = np.stack([(2 + np.cos(s)) * np.cos(t), (2 + np.cos(s)) * np.sin(t), np.sin(s)], axis=-1)
        lines += ["v " + " ".join(f"{x:.17g}" for x in row) for row in verts]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        atomic_write_text(path, "\n".join(lines) + "\n")


def read_off(path):
    """Read an ASCII (n)OFF file, returning ``(vertices, faces)``."""
    tokens = [
        line.split("#", 1)[0].split()
        for line in Path(path).read_text().splitlines()
    ]
    tokens = [t for t in tokens if t]
    header = tokens[0][0]
    if not header.endswith("OFF"):
        raise ValueError(f"not an OFF file: header {header!r}")
    d = 3 if header == "OFF" else int(header[:-3])
    nv, nf = int(tokens[1][0]), int(tokens[1][1])
    verts = np.array([[float(x) for x in row[:d]] for row in tokens[2 : 2 + nv]])
    faces = np.array([[int(x) for x in row[1:4]] for row in tokens[2 + nv : 2 + nv + nf]])
    return verts, faces


def build_mesh(kind: str | Manifold, resolution: int | None = None) -> SurfaceMesh:
    """Icosphere of the given level, or the ``N x N`` torus grid.

    Defaults are level 3 for the sphere and ``N = 24`` for the torus.
    """
    manifold = get_manifold(kind) if isinstance(kind, str) else kind
    if resolution is None:
        resolution = DEFAULT_RESOLUTION[manifold.kind]
    key = (manifold.kind, int(resolution))
    mesh = _MESH_CACHE.get(key)
    if mesh is None:
        if manifold.kind == "sphere":
            v, f = icosphere(key[1])
        else:
            params, f = torus_grid(key[1])
            v = manifold.embed(params)
        mesh = _MESH_CACHE[key] = SurfaceMesh(manifold, v, f, resolution=key[1])
    return mesh


_MESH_CACHE: dict = {}
