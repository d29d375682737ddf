"""Static, byte-reproducible SVG figures (matplotlib Agg backend)."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write_bytes  # noqa: E402

__all__ = ["save_svg", "plot_scaling", "plot_face_scalar", "plot_spectrum", "plot_monitor"]

_RC = {"svg.hashsalt": "rigidlab", "svg.fonttype": "path", "font.size": 9}


def save_svg(fig, path) -> None:
    buf = io.BytesIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_scaling(results, path, title="") -> None:
    """Log-log plot of distance to isometries against ``e(f)``, one series per result."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for i, res in enumerate(results):
            e = np.array([r[1] for r in res.rows])
            d = np.array([r[2] for r in res.rows])
            ax.loglog(e, d, "o-", ms=3, label=f"#{i}: slope {res.slope:.3f}")
        lo = min(min(r[1] for r in res.rows) for res in results)
        hi = max(max(r[1] for r in res.rows) for res in results)
        ref = np.array([lo, hi])
        ax.loglog(ref, ref, "k--", lw=0.8, label="slope 1")
        ax.set_xlabel("e(f) = E_p(f)^(1/p)")
        ax.set_ylabel("dist_{1,p}(f, isometries)")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
    save_svg(fig, path)


def plot_face_scalar(mesh, values, path, title="", label="") -> None:
    """Per-face scalar drawn over intrinsic coordinates (lon/lat or theta/phi)."""
    M = mesh.manifold
    c = mesh.centers
    if M.kind == "sphere":
        x = np.arctan2(c[:, 1], c[:, 0])
        y = np.arcsin(np.clip(c[:, 2], -1, 1))
        xl, yl = "longitude", "latitude"
    else:
        x, y = M.params(c).T
        xl, yl = "theta", "phi"
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        sc = ax.scatter(x, y, c=values, s=6, cmap="viridis", linewidths=0)
        fig.colorbar(sc, ax=ax, label=label)
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        if title:
            ax.set_title(title)
    save_svg(fig, path)


def plot_spectrum(eigenvalues, null_dim, path, title="") -> None:
    w = np.maximum(np.asarray(eigenvalues, float), 1e-18)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        idx = np.arange(1, len(w) + 1)
        ax.semilogy(idx, w, "o")
        ax.axvline(null_dim + 0.5, color="k", ls="--", lw=0.8)
        ax.set_xlabel("index")
        ax.set_ylabel("eigenvalue")
        if title:
            ax.set_title(title)
    save_svg(fig, path)


def plot_monitor(history, path, title="") -> None:
    t = [r["t"] for r in history]
    with matplotlib.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3))
        axes[0].plot(t, [r["dirichlet_energy"] for r in history])
        axes[0].set_xlabel("t")
        axes[0].set_ylabel("Dirichlet energy")
        axes[1].plot(t, [r["w1p_dist_to_initial"] for r in history])
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("W^{1,p} distance to initial map")
        if title:
            fig.suptitle(title)
    save_svg(fig, path)
